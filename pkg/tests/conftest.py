import numpy as np
import pytest
from hypothesis import settings

from gbtpp.core import Cascade, CascadeDataset

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_ds(seqs, V=None):
    """Dataset from lists of (node, time) pairs."""
    cs = []
    for i, ev in enumerate(seqs):
        nodes, times = zip(*ev)
        cs.append(Cascade(f"s{i}", np.array(nodes), np.array(times, dtype=float)))
    if V is None:
        V = max(int(c.nodes.max()) for c in cs) + 1
    return CascadeDataset(V, tuple(cs))


@pytest.fixture(scope="session")
def small_sim():
    from gbtpp.hawkes_sim import SimConfig, simulate, synthesize_params

    params = synthesize_params(8, 3)
    ds, _ = simulate(params, SimConfig(80, 12, 1000.0, 4))
    return ds
