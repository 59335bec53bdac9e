"""Metrics, cross-validated benchmark runs and report files."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as B
from . import model as M
from .core import CascadeDataset, estimate_adjacency, kfold_split
from .graph_embed import EmbedConfig, train_embeddings
from .numerics import make_rng

log = logging.getLogger(__name__)

NODE_MODELS = ("mc1", "mc2", "mc3", "ctmc", "rmtpp", "nrpp", "gbtpp")
TIME_MODELS = ("poisson", "hawkes", "scp", "ctmc", "rmtpp", "nrpp", "gbtpp")
ALL_MODELS = ("mc1", "mc2", "mc3", "ctmc", "poisson", "hawkes", "scp", "rmtpp", "nrpp", "gbtpp")
RECURRENT = ("rmtpp", "nrpp", "gbtpp")
TOPK_MAX = 5

# Settings used for the synthetic benchmark. Log gaps and a data-derived time
# unit keep the recurrent inputs O(1); averaging 16 windows per update steadies
# Adam; dropping the weakest 70% of edges keeps first-order proximities from
# saturating on dense graphs.
BENCHMARK_TRAIN = M.TrainConfig(epochs=10, time_feature="log_gap", time_scale="auto",
                                batch_size=16)
BENCHMARK_EMBED = EmbedConfig(edge_quantile=0.7)


@dataclass
class PredictionRecord:
    sample_id: str
    model: str
    fold: int
    true_node: int
    true_time: float
    predicted_node: int | None = None
    predicted_time: float | None = None
    prob_vector: np.ndarray | None = None
    # position of the true node in the ranked distribution (0 = top), ties to lower ids
    true_rank: int | None = None

    def __post_init__(self):
        if self.prob_vector is not None:
            p = np.asarray(self.prob_vector, dtype=np.float64)
            if abs(p.sum() - 1.0) > 1e-6:
                raise ValueError(f"{self.sample_id}: probability vector sums to {p.sum()}")
            self.prob_vector = p
            if self.true_rank is None:
                self.true_rank = rank_of(p, self.true_node)


def rank_of(p, node: int) -> int:
    """Number of nodes ranked above ``node``: higher probability, or equal with a lower id."""
    p = np.asarray(p)
    pt = p[node]
    return int(np.count_nonzero(p > pt) + np.count_nonzero(p[:node] == pt))


def node_accuracy(records) -> float:
    recs = [r for r in records if r.predicted_node is not None]
    if not recs:
        raise ValueError("node_accuracy of an empty record set")
    return sum(1 for r in recs if r.predicted_node == r.true_node) / len(recs)


def time_rmse(records) -> float:
    recs = [r for r in records if r.predicted_time is not None]
    if not recs:
        raise ValueError("time_rmse of an empty record set")
    err = np.array([r.predicted_time - r.true_time for r in recs], dtype=np.float64)
    if not np.all(np.isfinite(err)):
        raise ValueError("non-finite time prediction")
    return float(np.sqrt(np.mean(err * err)))


def topk_precision(records, K: int) -> float:
    recs = list(records)
    if not recs:
        raise ValueError("topk_precision of an empty record set")
    if any(r.true_rank is None for r in recs):
        raise ValueError("top-K precision needs a probability vector on every record")
    for r in recs:
        if r.prob_vector is not None and not 1 <= K <= len(r.prob_vector):
            raise ValueError(f"K={K} outside [1, {len(r.prob_vector)}]")
    if K < 1:
        raise ValueError("K must be >= 1")
    return sum(1 for r in recs if r.true_rank < K) / len(recs)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkReport:
    models: list
    k: int
    seed: int
    # model -> metric -> {"per_fold": [...], "mean": x, "std": x}
    metrics: dict = field(default_factory=dict)
    # model -> {"per_fold": [[K=1..5], ...], "mean": [...]}
    topk: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"models": self.models, "folds": self.k, "seed": self.seed,
                "std_convention": "sample standard deviation over folds (n-1 denominator)",
                "metrics": self.metrics, "topk": self.topk, "notes": self.notes}


def _summary(values: list) -> dict:
    arr = np.array(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if len(arr) > 1 else float("nan")
    return {"per_fold": [float(v) for v in values], "mean": float(np.mean(arr)), "std": std}


def aggregate(records, models, k) -> tuple[dict, dict]:
    """Per-fold metrics and their summaries; the single code path for fresh and reloaded records."""
    by = {}
    for r in records:
        by.setdefault((r.model, r.fold), []).append(r)
    metrics, topk = {}, {}
    for m in models:
        folds = [by.get((m, f), []) for f in range(k)]
        entry = {}
        if m in NODE_MODELS:
            entry["accuracy"] = _summary([node_accuracy(rs) for rs in folds])
        if m in TIME_MODELS:
            entry["rmse"] = _summary([time_rmse(rs) for rs in folds])
        metrics[m] = entry
        if m in NODE_MODELS:
            per = [[topk_precision(rs, K) for K in range(1, TOPK_MAX + 1)] for rs in folds]
            topk[m] = {"per_fold": per, "mean": [float(x) for x in np.mean(np.array(per), axis=0)]}
    return metrics, topk


def _fit(name, train_ds, emb, embed_needed, train_config, rng, smoothing):
    if name in ("mc1", "mc2", "mc3"):
        return B.fit_markov(train_ds, int(name[2]), smoothing)
    if name == "poisson":
        return B.fit_poisson(train_ds)
    if name == "hawkes":
        return B.fit_hawkes(train_ds)
    if name == "scp":
        return B.fit_scp(train_ds)
    if name == "ctmc":
        return B.fit_ctmc(train_ds)
    if name in RECURRENT:
        cfg = {"rmtpp": B.rmtpp_variant, "nrpp": B.nrpp_variant,
               "gbtpp": lambda c: c}[name](train_config)
        cfg = M.TrainConfig(**{**asdict(cfg), "variant": name})
        res = M.train(train_ds, None if name == "rmtpp" else emb, cfg, rng=rng)
        return _Recurrent(res.params, None if name == "rmtpp" else emb, cfg)
    raise ValueError(f"unknown model {name!r}")


@dataclass(eq=False)
class _Recurrent:
    params: M.GbtppParams
    emb: object
    config: M.TrainConfig

    def predict_cascade(self, c):
        return M.predict_cascade(self.params, self.emb, c, self.config)


def fold_records(name, fitted, test_ds, fold) -> list:
    recs = []
    for c in test_ds.cascades:
        nodes, times, probs = fitted.predict_cascade(c)
        for j in range(len(c) - 1):
            recs.append(PredictionRecord(
                f"{c.seq_id}:{j}", name, fold, int(c.nodes[j + 1]), float(c.times[j + 1]),
                None if nodes is None else int(nodes[j]),
                None if times is None else float(times[j]),
                None if probs is None else probs[j]))
    return recs


def run_benchmark(ds: CascadeDataset, models=ALL_MODELS, k: int = 10, seed: int = 0,
                  embed_config: EmbedConfig = EmbedConfig(),
                  train_config: M.TrainConfig = M.TrainConfig(),
                  markov_smoothing: float = 0.1, keep_probs: bool = False):
    """k-fold CV over whole cascades. Returns (report, records, folds).

    Adjacency and embeddings are re-estimated from the training folds of each
    split; embeddings carry the training seq_ids and are checked against the
    held-out fold before use.
    """
    models = list(models)
    for m in models:
        if m not in ALL_MODELS:
            raise ValueError(f"unknown model {m!r}; choose from {', '.join(ALL_MODELS)}")
    folds = kfold_split(ds, k, seed)
    records = []
    for fold in range(k):
        train_ds = ds.subset(folds.train_indices(fold))
        test_ds = ds.subset(folds.test_indices(fold))
        emb = None
        if any(m in ("nrpp", "gbtpp") for m in models):
            adj = estimate_adjacency(train_ds)
            emb = train_embeddings(adj, embed_config, rng=make_rng(seed, fold, 0),
                                   provenance={c.seq_id for c in train_ds.cascades})
            leaked = emb.provenance & {c.seq_id for c in test_ds.cascades}
            if leaked:
                raise AssertionError(f"fold {fold}: embeddings saw held-out cascades {sorted(leaked)[:3]}")
        for idx, name in enumerate(models):
            log.info("fold %d/%d: fitting %s", fold + 1, k, name)
            try:
                fitted = _fit(name, train_ds, emb, emb is not None, train_config,
                              make_rng(seed, fold, idx + 1), markov_smoothing)
                recs = fold_records(name, fitted, test_ds, fold)
            except Exception as exc:
                raise RuntimeError(f"fold {fold}, model {name}: {exc}") from exc
            if not keep_probs:
                for r in recs:
                    r.prob_vector = None
            records.extend(recs)
    metrics, topk = aggregate(records, models, k)
    return BenchmarkReport(models, k, seed, metrics, topk, _notes(models)), records, folds


def _notes(models) -> list:
    if any(m in ("mc1", "mc2", "mc3", "ctmc") for m in models):
        return ["Markov and CTMC back off to lower-order / global frequencies "
                "for contexts unseen in training."]
    return []


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

RECORD_FIELDS = ["sample_id", "model", "fold", "true_node", "pred_node", "true_time",
                 "pred_time", "true_rank"]


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_records(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.sample_id, r.model, r.fold, r.true_node, _fmt(r.predicted_node),
                        _fmt(r.true_time), _fmt(r.predicted_time), _fmt(r.true_rank)])


def read_records(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(PredictionRecord(
                row["sample_id"], row["model"], int(row["fold"]), int(row["true_node"]),
                float(row["true_time"]),
                int(row["pred_node"]) if row["pred_node"] else None,
                float(row["pred_time"]) if row["pred_time"] else None,
                None,
                int(row["true_rank"]) if row["true_rank"] else None))
    return out


def report_from_records(path, models, k, seed) -> BenchmarkReport:
    metrics, topk = aggregate(read_records(path), list(models), k)
    return BenchmarkReport(list(models), k, seed, metrics, topk, _notes(models))


def write_report(report: BenchmarkReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_json(), fh, indent=1)
        fh.write("\n")


def write_topk_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "model", "precision"])
        for m, entry in report.topk.items():
            for K, v in enumerate(entry["mean"], 1):
                w.writerow([K, m, repr(float(v))])


def write_fold_metrics(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "fold", "metric", "value"])
        for m, entry in report.metrics.items():
            for metric, s in entry.items():
                for f, v in enumerate(s["per_fold"]):
                    w.writerow([m, f, metric, repr(float(v))])
