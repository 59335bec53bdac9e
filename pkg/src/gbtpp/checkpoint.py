"""Self-describing JSON checkpoints for every model kind.

Floats are written with Python's shortest round-trip repr, so a reload gives
bit-identical parameters. Recurrent checkpoints reference their embedding
CSV by a path relative to the checkpoint file plus its SHA-256.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines as B
from . import model as M
from .graph_embed import NodeEmbeddings, load_embeddings

FORMAT = "gbtpp-checkpoint"
VERSION = 1
BASELINE_KINDS = {"mc1": B.MarkovModel, "mc2": B.MarkovModel, "mc3": B.MarkovModel,
                  "poisson": B.PoissonModel, "hawkes": B.HawkesModel, "scp": B.ScpModel,
                  "ctmc": B.CtmcModel}


class CheckpointError(ValueError):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump(doc, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, allow_nan=True)
        fh.write("\n")


def save_recurrent(params: M.GbtppParams, config: M.TrainConfig, path,
                   embeddings_path=None) -> None:
    path = Path(path)
    emb_ref = None
    if embeddings_path is not None:
        rel = os.path.relpath(Path(embeddings_path).resolve(), path.resolve().parent)
        emb_ref = {"path": Path(rel).as_posix(), "sha256": file_sha256(embeddings_path)}
    doc = {
        "format": FORMAT, "version": VERSION, "kind": params.variant,
        "float_encoding": "shortest round-trip decimal",
        "dims": params.dims,
        "config": asdict(config),
        "embeddings": emb_ref,
        "params": {
            **{n: {"shape": list(getattr(params, n).shape),
                   "data": getattr(params, n).ravel().tolist()} for n in params.ARRAYS},
            "w_t": params.w_t, "b_t": params.b_t, "time_scale": params.time_scale,
        },
    }
    _dump(doc, path)


def save_baseline(model, kind: str, path, V: int) -> None:
    if kind not in BASELINE_KINDS:
        raise CheckpointError(f"unknown baseline kind {kind!r}")
    _dump({"format": FORMAT, "version": VERSION, "kind": kind,
           "float_encoding": "shortest round-trip decimal", "dims": {"V": V},
           "model": model.to_dict()}, path)


class Loaded:
    """A checkpoint read back from disk: kind, V and the model objects."""

    def __init__(self, kind, V, model=None, params=None, config=None, emb=None):
        self.kind, self.V = kind, V
        self.model, self.params, self.config, self.emb = model, params, config, emb

    @property
    def recurrent(self) -> bool:
        return self.params is not None


def load(path) -> Loaded:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from None
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: missing or wrong format tag")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    kind = doc["kind"]
    V = int(doc["dims"]["V"])
    if kind in BASELINE_KINDS:
        return Loaded(kind, V, model=BASELINE_KINDS[kind].from_dict(doc["model"]))
    if kind not in M.VARIANTS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    p = doc["params"]
    arrays = {n: np.array(p[n]["data"], dtype=np.float64).reshape(p[n]["shape"])
              for n in M.GbtppParams.ARRAYS}
    params = M.GbtppParams(**arrays, w_t=p["w_t"], b_t=p["b_t"], variant=kind,
                           time_scale=p["time_scale"])
    if params.dims != doc["dims"]:
        raise CheckpointError(f"{path}: dims {doc['dims']} disagree with tensors {params.dims}")
    config = M.TrainConfig(**doc["config"])
    emb = None
    ref = doc.get("embeddings")
    if ref is not None:
        epath = (path.parent / ref["path"]).resolve()
        if not epath.exists():
            raise CheckpointError(f"{path}: embedding file {epath} not found")
        if file_sha256(epath) != ref["sha256"]:
            raise CheckpointError(f"{path}: embedding file {epath} changed since training")
        emb = load_embeddings(epath)
        if emb.V != V or 2 * emb.d != params.W_y.shape[0]:
            raise CheckpointError(f"{path}: embeddings are V={emb.V}, d={emb.d}; "
                                  f"checkpoint expects V={V}, d={params.dims['d']}")
    elif kind != "rmtpp":
        raise CheckpointError(f"{path}: {kind} checkpoint has no embedding reference")
    return Loaded(kind, V, params=params, config=config, emb=emb)


def predict_prefix(ck: Loaded, nodes, times):
    """Next-event prediction after an observed prefix: (node | None, time | None, probs | None)."""
    nodes = [int(v) for v in nodes]
    times = [float(t) for t in times]
    if not nodes or len(nodes) != len(times):
        raise ValueError("prefix needs at least one (node, time) event")
    bad = [v for v in nodes if not 0 <= v < ck.V]
    if bad:
        raise ValueError(f"prefix node {bad[0]} outside the checkpoint's V={ck.V}")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("prefix times must be strictly increasing")
    cur, t_cur = nodes[-1], times[-1]
    if ck.recurrent:
        pred = M.predict_next(ck.params, ck.emb, list(zip(nodes[:-1], times[:-1])), cur, t_cur,
                              ck.config)
        return pred.node, pred.time, pred.probs
    m, kind = ck.model, ck.kind
    if kind.startswith("mc"):
        probs = m.distribution(nodes[:-1], cur)
        return int(np.argmax(probs)), None, probs
    if kind == "poisson":
        return None, m.predict_time(t_cur), None
    if kind == "hawkes":
        return None, m.predict_time(times, t_cur), None
    if kind == "scp":
        return None, m.predict_time(t_cur - times[0], len(times), t_cur), None
    node, t, probs = m.predict(cur, t_cur)
    return int(node), float(t), probs


def topk(probs, k: int) -> list:
    """The k most probable nodes as [node, prob] pairs, ties broken toward lower ids."""
    order = np.lexsort((np.arange(len(probs)), -np.asarray(probs)))
    return [[int(i), float(probs[i])] for i in order[:k]]
