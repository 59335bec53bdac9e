import math
from types import SimpleNamespace

import numpy as np
import pytest

from gbtpp import baselines as B
from gbtpp import model as M
from gbtpp.graph_embed import NodeEmbeddings
from gbtpp.hawkes_sim import HawkesParams, simulate_sequence
from gbtpp.numerics import make_rng

from conftest import make_ds


# -- Markov chains ------------------------------------------------------------

def test_markov_cycle_learned_exactly():
    seq = [(v % 3, float(i)) for i, v in enumerate(range(12))]
    m = B.fit_markov(make_ds([seq]), 1, smoothing=0.0)
    for cur in range(3):
        p = B.predict_markov(m, [], cur)
        assert p[(cur + 1) % 3] == 1.0


def test_markov_backoff_to_lower_order():
    ds = make_ds([[(0, 0.0), (1, 1.0), (2, 2.0), (0, 3.0), (2, 4.0)]], V=4)
    m3, m2 = B.fit_markov(ds, 3), B.fit_markov(ds, 2)
    # (3, 0, 1) was never seen, (0, 1) was
    np.testing.assert_array_equal(m3.distribution([3, 0], 1), m2.distribution([0], 1))
    m1 = B.fit_markov(ds, 1)
    # node 3 never a source: global frequencies
    g = m1.global_counts
    np.testing.assert_allclose(m1.distribution([], 3), (g + 0.1) / (g.sum() + 0.4))


def test_markov_laplace_arithmetic():
    ds = make_ds([[(0, 0.0), (1, 1.0)], [(1, 0.0), (2, 1.0)]], V=3)
    m = B.fit_markov(ds, 1, smoothing=1.0)
    np.testing.assert_allclose(m.distribution([], 0), [1 / 4, 2 / 4, 1 / 4], rtol=1e-15)
    np.testing.assert_allclose(m.distribution([], 1), [1 / 4, 1 / 4, 2 / 4], rtol=1e-15)


def test_markov_rows_normalized(small_sim):
    m = B.fit_markov(small_sim, 3)
    _, _, probs = m.predict_cascade(small_sim.cascades[0])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_markov_rejects_bad_order():
    with pytest.raises(ValueError):
        B.fit_markov(make_ds([[(0, 0.0), (1, 1.0)]]), 4)


# -- Poisson --------------------------------------------------------------------

def test_poisson_mean_gap():
    m = B.fit_poisson(make_ds([[(0, 0.0), (1, 1.0), (0, 3.0), (1, 6.0)]]))
    assert m.lambda0 == 0.5 and m.predict_time(10.0) == 12.0
    assert B.fit_poisson(make_ds([[(0, 1.0), (1, 5.0)]])).predict_time(0.0) == 4.0


def test_poisson_ignores_history():
    m = B.fit_poisson(make_ds([[(0, 0.0), (1, 2.0)]]))
    c = make_ds([[(0, 0.0), (1, 0.1), (0, 9.0)]]).cascades[0]
    _, t, _ = m.predict_cascade(c)
    np.testing.assert_array_equal(t - c.times[:-1], [2.0, 2.0])


def test_poisson_zero_gaps_rejected():
    # validated cascades cannot hold tied times, so feed the estimator raw arrays
    ds = SimpleNamespace(cascades=[SimpleNamespace(times=np.array([2.0, 2.0, 2.0]))])
    with pytest.raises(ValueError, match="zero"):
        B.fit_poisson(ds)


# -- Hawkes ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def poisson_ds():
    p = HawkesParams(np.array([3.0]), np.zeros((1, 1)), 1.0)
    _, times = simulate_sequence(p, 1e9, 5000, make_rng(11))
    return make_ds([[(0, t) for t in chunk] for chunk in np.split(times, 50)], V=1)


def test_hawkes_recovers_poisson_rate(poisson_ds):
    m = B.fit_hawkes(poisson_ds)
    assert m.gamma0 == pytest.approx(3.0, rel=0.2)
    # the branching ratio alpha/beta measures excitation; near zero means no self-excitation
    assert m.alpha / m.beta < 0.05


def test_hawkes_fit_not_worse_than_start(poisson_ds):
    m = B.fit_hawkes(poisson_ds)
    r, total, kern = B._hawkes_stats(poisson_ds, m.beta)
    start = B._pooled_ll(np.array([len(r) / total, 0.0]), r, total, kern)
    assert m.log_likelihood >= start


def test_hawkes_single_event_likelihood():
    assert B.hawkes_log_likelihood([0.7], 5.0, 1.0, 0.0, 1.0) == pytest.approx(math.log(1.0) - 5.0)


def test_hawkes_pooled_likelihood_matches_direct(small_sim):
    g, a, b = 0.02, 0.3, 1.0
    r, total, kern = B._hawkes_stats(small_sim, b)
    direct = sum(B.hawkes_log_likelihood(c.times, c.times[-1], g, a, b, c.times[0], True)
                 for c in small_sim.cascades)
    assert B._pooled_ll((g, a), r, total, kern) == pytest.approx(direct, rel=1e-10)


def test_hawkes_prediction_examples():
    base = B.HawkesModel(0.5, 0.0, 1.0)
    assert base.predict_time([1.0], 3.0) == pytest.approx(5.0, rel=1e-8)
    excited = B.HawkesModel(0.5, 0.4, 1.0)
    assert excited.predict_time([2.5, 3.0], 3.0) < base.predict_time([2.5, 3.0], 3.0)
    assert excited.predict_time([], 3.0) == pytest.approx(5.0, rel=1e-8)


# -- self-correcting process ----------------------------------------------------

def test_scp_degenerate_limit_is_unit_exponential():
    assert B.ScpModel(1e-14, 1e-14).predict_time(0.0, 1, 2.0) == pytest.approx(3.0, rel=1e-6)


def test_scp_event_damps_intensity():
    m = B.ScpModel(0.3, 0.7)
    # intensity at equal tau with one extra event is scaled by exp(-alpha)
    c1, c2 = m.mu * 2.0 - m.alpha * 3, m.mu * 2.0 - m.alpha * 4
    assert math.exp(c2) / math.exp(c1) == pytest.approx(math.exp(-0.7), rel=1e-12)
    assert m.predict_time(2.0, 4, 0.0) > m.predict_time(2.0, 3, 0.0)


def test_scp_regular_data():
    ds = make_ds([[(0, float(t)) for t in range(i, i + 15)] for i in range(20)])
    m = B.fit_scp(ds)
    assert m.mu > 0 and m.alpha > 0 and math.isfinite(m.log_likelihood)
    for c in ds.cascades[:3]:
        _, t, _ = m.predict_cascade(c)
        np.testing.assert_allclose(t - c.times[:-1], 1.0, rtol=0.2)


def test_scp_fit_beats_grid(small_sim):
    m = B.fit_scp(small_sim)
    stats = B._scp_stats(small_sim)
    assert m.log_likelihood == pytest.approx(B.scp_log_likelihood(m.mu, m.alpha, stats))
    gap = float(np.mean(stats[1] - stats[0]))
    for mu in np.logspace(-5, 1, 7) / gap:
        for a in np.logspace(-4, 1, 6):
            assert m.log_likelihood >= B.scp_log_likelihood(mu, a, stats)


# -- CTMC -------------------------------------------------------------------------

def test_ctmc_single_rate():
    seqs = [[(0, 0.0), (1, g)] for g in make_rng(5).exponential(2.0, 100)]
    gaps = [s[1][1] for s in seqs]
    m = B.fit_ctmc(make_ds(seqs, V=2))
    assert m.rates[0, 1] == pytest.approx(1.0 / np.mean(gaps), rel=1e-12)
    assert m.rates[0, 1] == pytest.approx(0.5, rel=0.25)
    node, t = B.predict_ctmc(m, 0, 4.0)
    assert node == 1 and t == pytest.approx(4.0 + np.mean(gaps), rel=1e-12)


def test_ctmc_competing_rates():
    m = B.CtmcModel(np.array([[0.0, 0.3, 0.1], [0, 0, 0], [0, 0, 0]]), np.array([0.2, 0.1, 0.1]))
    node, t = B.predict_ctmc(m, 0, 1.0)
    assert node == 1 and t == pytest.approx(3.5, rel=1e-12)


def test_ctmc_backoff_for_unseen_state():
    ds = make_ds([[(0, 0.0), (2, 1.0), (1, 2.0)], [(0, 0.0), (2, 3.0)]], V=4)
    m = B.fit_ctmc(ds)
    node, _ = B.predict_ctmc(m, 3)
    assert node == 2
    assert np.all(np.diag(m.rates) == 0)


# -- recurrent ablations --------------------------------------------------------

def _pair(seed=0, V=5, d=2, H=4, D=3):
    rng = make_rng(seed)
    g = M.init_params(V, d, H, D, rng)
    for name in g.ARRAYS:
        getattr(g, name)[...] = rng.normal(0, 0.7, getattr(g, name).shape)
    g.W_y[...] = 0.0
    g.v_y[...] = 0.0
    g.U_h[...] = 0.0
    r = M.GbtppParams(**{n: getattr(g, n).copy() for n in g.ARRAYS},
                      w_t=g.w_t, b_t=g.b_t, variant="rmtpp")
    emb = NodeEmbeddings(V, d, rng.normal(0, 1, (V, d)), rng.normal(0, 1, (V, d)))
    return g, r, emb


def test_rmtpp_logits_bitwise_equal():
    g, r, emb = _pair()
    h = make_rng(1).normal(0, 1, 4)
    for cur in range(5):
        assert M.node_logits(g, h, emb, cur).tobytes() == M.node_logits(r, h, None, cur).tobytes()
        assert M.node_logits(r, h, None, cur).tobytes() == (r.V_h @ h + r.b_out).tobytes()


def test_rmtpp_sequence_outputs_bitwise_equal():
    g, r, emb = _pair(3)
    c = make_ds([[(int(v), float(t)) for v, t in
                  zip(make_rng(2).integers(0, 5, 9), np.cumsum(make_rng(4).exponential(1, 9)))]],
                V=5).cascades[0]
    cfg = M.TrainConfig()
    a = M.sample_log_likelihoods(g, emb, c, cfg)
    b = M.sample_log_likelihoods(r, None, c, cfg)
    for x, y in zip(a, b):
        assert np.asarray(x).tobytes() == np.asarray(y).tobytes()


def test_nrpp_has_no_graph_bias_but_uses_embeddings():
    g, _, emb = _pair(5)
    rng = make_rng(6)
    g.W_y[...] = rng.normal(0, 1, g.W_y.shape)
    g.U_h[...] = rng.normal(0, 1, g.U_h.shape)
    g.variant = "nrpp"
    h = np.abs(rng.normal(0, 1, 4))
    for cur in range(5):
        assert not M.graph_bias(g, h, emb, cur).any()
    y = emb.concat()[2]
    assert not np.array_equal(M.step_history(g, h, 2, 0.5, y), M.step_history(g, h, 2, 0.5, 0 * y))


def test_variant_configs():
    assert B.rmtpp_variant().variant == "rmtpp" and B.nrpp_variant().variant == "nrpp"
    assert B.rmtpp_variant(M.TrainConfig(H=7)).H == 7
