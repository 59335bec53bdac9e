"""Directed node embeddings that preserve first-order proximity.

Each node gets a source vector and a target vector; the proximity of an
ordered pair (i, j) is sigmoid(source_i . target_j). Training fits these
proximities to the empirical propagation weights.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AdjacencyEstimate
from .numerics import make_rng, sigmoid

LOG_FLOOR = np.log(1e-12)
SGD_EDGE_THRESHOLD = 100_000


@dataclass(frozen=True, eq=False)
class NodeEmbeddings:
    V: int
    d: int
    source: np.ndarray
    target: np.ndarray
    # seq_ids the adjacency was estimated from; lets the harness prove no test leakage
    provenance: frozenset = frozenset()
    loss_trace: tuple = ()

    def __post_init__(self):
        for name in ("source", "target"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if a.shape != (self.V, self.d):
                raise ValueError(f"{name} has shape {a.shape}, expected {(self.V, self.d)}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def concat(self) -> np.ndarray:
        """Per-node feature y = [source | target], shape (V, 2d)."""
        return np.ascontiguousarray(np.hstack([self.source, self.target]))

    def proximity_matrix(self) -> np.ndarray:
        return sigmoid(self.source @ self.target.T)

    @classmethod
    def zeros(cls, V: int, d: int) -> "NodeEmbeddings":
        return cls(V, d, np.zeros((V, d)), np.zeros((V, d)))


@dataclass(frozen=True)
class EmbedConfig:
    d: int = 32
    learning_rate: float = 0.05
    epochs: int = 200
    l2: float = 1e-4
    neg_samples: int = 5
    seed: int = 0
    # edges need more than this many observed propagations to enter E
    min_count: int = 0
    # and more than this quantile of the positive counts; sparsifies dense graphs
    edge_quantile: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("embedding dimension d must be >= 1")
        if not 0.0 <= self.edge_quantile < 1.0:
            raise ValueError("edge_quantile must lie in [0, 1)")
        if self.learning_rate <= 0 or self.epochs < 0 or self.l2 < 0 or self.neg_samples < 0:
            raise ValueError("invalid EmbedConfig")


def first_order_proximity(emb: NodeEmbeddings, i: int, j: int) -> float:
    return float(sigmoid(emb.source[i] @ emb.target[j]))


def empirical_edge_probability(adj: AdjacencyEstimate, i: int, j: int) -> float:
    total = float(adj.weights.sum())
    if total <= 0:
        raise ValueError("adjacency has zero total weight")
    return float(adj.weights[i, j] / total)


def edge_weights(adj: AdjacencyEstimate, config: EmbedConfig) -> np.ndarray:
    cut = config.min_count
    if config.edge_quantile > 0:
        pos = adj.counts[adj.counts > 0]
        if pos.size:
            cut = max(cut, float(np.quantile(pos, config.edge_quantile)))
    return np.where(adj.counts > cut, adj.weights, 0.0)


def _log_sigmoid(x):
    return np.maximum(-np.logaddexp(0.0, -x), LOG_FLOOR)


def embed_loss_and_grad(source, target, A, l2, neg_pairs=None):
    """Loss and analytic gradients with respect to (source, target)."""
    x = source @ target.T
    p = sigmoid(x)
    mask = A > 0
    loss = -float(np.sum(A[mask] * _log_sigmoid(x[mask])))
    coeff = np.where(mask, A * (p - 1.0), 0.0)
    if neg_pairs is not None and len(neg_pairs):
        ni, nj = neg_pairs[:, 0], neg_pairs[:, 1]
        loss -= float(np.sum(_log_sigmoid(-x[ni, nj])))
        np.add.at(coeff, (ni, nj), p[ni, nj])
    loss += l2 * float(np.sum(source**2) + np.sum(target**2))
    g_source = coeff @ target + 2.0 * l2 * source
    g_target = coeff.T @ source + 2.0 * l2 * target
    return loss, g_source, g_target


def embed_loss(emb: NodeEmbeddings, adj: AdjacencyEstimate, config: EmbedConfig,
               neg_pairs=None) -> float:
    """Weighted edge log-loss, L2 penalty and (given) negative pairs."""
    if emb.V != adj.V:
        raise ValueError(f"embedding V={emb.V} does not match adjacency V={adj.V}")
    loss, _, _ = embed_loss_and_grad(emb.source, emb.target, edge_weights(adj, config),
                                     config.l2, neg_pairs)
    return loss


def sample_negative_pairs(A: np.ndarray, n_pos: int, k: int, rng) -> np.ndarray:
    """k uniform non-edges per positive edge, drawn with replacement."""
    if k == 0:
        return np.empty((0, 2), dtype=np.int64)
    flat = np.flatnonzero(A.ravel() <= 0)
    if flat.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    picks = rng.choice(flat, size=n_pos * k)
    V = A.shape[0]
    return np.stack([picks // V, picks % V], axis=1)


def train_embeddings(adj: AdjacencyEstimate, config: EmbedConfig = EmbedConfig(),
                     rng=None, provenance=frozenset()) -> NodeEmbeddings:
    A = edge_weights(adj, config)
    n_pos = int(np.count_nonzero(A))
    if n_pos == 0:
        raise ValueError("adjacency has no positive entries")
    rng = make_rng(config.seed) if rng is None else rng
    V, d = adj.V, config.d
    bound = 0.5 / d
    source = rng.uniform(-bound, bound, size=(V, d))
    target = rng.uniform(-bound, bound, size=(V, d))
    best = (np.inf, source.copy(), target.copy())
    trace = []
    lr = config.learning_rate

    if n_pos > SGD_EDGE_THRESHOLD:
        edges = np.argwhere(A > 0)
        for epoch in range(config.epochs):
            order = rng.permutation(len(edges))
            for lo in range(0, len(order), 1024):
                batch = edges[order[lo:lo + 1024]]
                Ab = np.zeros_like(A)
                Ab[batch[:, 0], batch[:, 1]] = A[batch[:, 0], batch[:, 1]]
                negs = sample_negative_pairs(A, len(batch), config.neg_samples, rng)
                _, gs, gt = embed_loss_and_grad(source, target, Ab, config.l2 * len(batch) / n_pos, negs)
                source -= lr * gs
                target -= lr * gt
            negs = sample_negative_pairs(A, n_pos, config.neg_samples, rng)
            loss, _, _ = embed_loss_and_grad(source, target, A, config.l2, negs)
            if not np.isfinite(loss):
                raise FloatingPointError(f"divergence at epoch {epoch}; lower learning_rate")
            trace.append(loss)
            if loss < best[0]:
                best = (loss, source.copy(), target.copy())
    else:
        for epoch in range(config.epochs + 1):
            negs = sample_negative_pairs(A, n_pos, config.neg_samples, rng)
            loss, gs, gt = embed_loss_and_grad(source, target, A, config.l2, negs)
            if not np.isfinite(loss):
                raise FloatingPointError(f"divergence at epoch {epoch}; lower learning_rate")
            if config.epochs == 0:
                break
            trace.append(loss)
            if loss < best[0]:
                best = (loss, source.copy(), target.copy())
            if epoch < config.epochs:
                source -= lr * gs
                target -= lr * gt

    if config.epochs == 0:
        best = (np.nan, source, target)
    return NodeEmbeddings(V, d, best[1], best[2], frozenset(provenance), tuple(trace))


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------


def save_embeddings(emb: NodeEmbeddings, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "role"] + [f"c{k}" for k in range(emb.d)])
        for i in range(emb.V):
            w.writerow([i, "s"] + [format(x, ".17g") for x in emb.source[i]])
            w.writerow([i, "e"] + [format(x, ".17g") for x in emb.target[i]])


def load_embeddings(path) -> NodeEmbeddings:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["node", "role"]:
            raise ValueError(f"{path}: header must start with node,role")
        d = len(header) - 2
        rows: dict[tuple[int, str], list[float]] = {}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != d + 2 or row[1] not in ("s", "e"):
                raise ValueError(f"{path}: line {lineno}: malformed embedding row")
            rows[(int(row[0]), row[1])] = [float(x) for x in row[2:]]
    V = max(k[0] for k in rows) + 1
    try:
        source = np.array([rows[(i, "s")] for i in range(V)])
        target = np.array([rows[(i, "e")] for i in range(V)])
    except KeyError as exc:
        raise ValueError(f"{path}: missing embedding row {exc.args[0]}") from None
    return NodeEmbeddings(V, d, source, target)
