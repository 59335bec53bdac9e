"""Cascade data: types, file I/O, adjacency estimation, samples and fold splits."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import make_rng


class CascadeFormatError(ValueError):
    pass


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Cascade:
    """One propagation sequence; event i is (nodes[i], times[i])."""

    seq_id: str
    nodes: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes, np.int64)
        times = _frozen(self.times, np.float64)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)
        if nodes.ndim != 1 or nodes.shape != times.shape:
            raise CascadeFormatError(f"cascade {self.seq_id!r}: nodes/times shape mismatch")
        if len(nodes) < 2:
            raise CascadeFormatError(f"cascade {self.seq_id!r} has fewer than 2 events")
        if np.any(nodes < 0):
            raise CascadeFormatError(f"cascade {self.seq_id!r}: negative node id")
        if not np.all(np.isfinite(times)) or times[0] < 0:
            raise CascadeFormatError(f"cascade {self.seq_id!r}: times must be finite and nonnegative")
        if np.any(np.diff(times) <= 0):
            raise CascadeFormatError(f"non-increasing times in cascade {self.seq_id!r}")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def events(self) -> list[tuple[int, float]]:
        return [(int(v), float(t)) for v, t in zip(self.nodes, self.times)]


@dataclass(frozen=True, eq=False)
class CascadeDataset:
    V: int
    cascades: tuple[Cascade, ...]
    node_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "cascades", tuple(self.cascades))
        if self.V < 1:
            raise CascadeFormatError("node count V must be at least 1")
        if not self.cascades:
            raise CascadeFormatError("no cascades")
        seen = set()
        for c in self.cascades:
            if c.seq_id in seen:
                raise CascadeFormatError(f"duplicate seq_id {c.seq_id!r}")
            seen.add(c.seq_id)
            top = int(c.nodes.max())
            if top >= self.V:
                raise CascadeFormatError(
                    f"cascade {c.seq_id!r}: node id {top} >= declared V={self.V}")

    def __len__(self) -> int:
        return len(self.cascades)

    def subset(self, indices: Iterable[int]) -> "CascadeDataset":
        return CascadeDataset(self.V, tuple(self.cascades[i] for i in indices), self.node_names)

    @property
    def n_samples(self) -> int:
        return sum(len(c) - 1 for c in self.cascades)


@dataclass(frozen=True)
class PropagationSample:
    """History plus current node, labelled with the next node and its arrival time.

    ``current_time`` is the time of the current event; the label time is
    measured on the same clock, so the predicted gap is label_time - current_time.
    """

    history: tuple[tuple[int, float], ...]
    current_node: int
    current_time: float
    label_node: int
    label_time: float


def make_samples(c: Cascade) -> list[PropagationSample]:
    ev = c.events
    return [
        PropagationSample(tuple(ev[:j]), ev[j][0], ev[j][1], ev[j + 1][0], ev[j + 1][1])
        for j in range(len(ev) - 1)
    ]


# ---------------------------------------------------------------------------
# loading / saving
# ---------------------------------------------------------------------------


def _build(raw: list[tuple[str, list, list]], declared_v: int | None) -> CascadeDataset:
    if not raw:
        raise CascadeFormatError("no cascades")
    tokens = [tok for _, nodes, _ in raw for tok in nodes]
    names = None
    if all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
        ids = [list(nodes) for _, nodes, _ in raw]
    else:
        mapping: dict[str, int] = {}
        for t in tokens:
            mapping.setdefault(str(t), len(mapping))
        names = tuple(mapping)
        ids = [[mapping[str(t)] for t in nodes] for _, nodes, _ in raw]
    V = declared_v if declared_v is not None else max(max(n) for n in ids) + 1
    cascades = [Cascade(sid, np.array(n, dtype=np.int64), np.array(ts, dtype=np.float64))
                for (sid, _, ts), n in zip(raw, ids)]
    return CascadeDataset(V, tuple(cascades), names)


def _int_token(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def _read_jsonl(path: Path) -> CascadeDataset:
    raw = []
    declared = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CascadeFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CascadeFormatError(f"line {lineno}: expected a JSON object")
            if "meta" in obj:
                if raw or declared is not None:
                    raise CascadeFormatError(f"line {lineno}: meta line must come first")
                try:
                    declared = int(obj["meta"]["V"])
                except (KeyError, TypeError, ValueError):
                    raise CascadeFormatError(f"line {lineno}: meta must be {{\"V\": int}}") from None
                continue
            try:
                sid = str(obj["seq_id"])
                events = obj["events"]
                nodes = [e[0] for e in events]
                times = [float(e[1]) for e in events]
            except (KeyError, TypeError, IndexError, ValueError):
                raise CascadeFormatError(
                    f"line {lineno}: expected {{\"seq_id\": str, \"events\": [[node, time], ...]}}") from None
            if any(isinstance(n, float) for n in nodes):
                raise CascadeFormatError(f"line {lineno}: node ids must be integers or names")
            raw.append((sid, nodes, times))
    try:
        return _build(raw, declared)
    except CascadeFormatError:
        raise
    except ValueError as exc:
        raise CascadeFormatError(str(exc)) from None


def _read_csv(path: Path) -> CascadeDataset:
    groups: dict[str, tuple[list, list]] = {}
    order: list[str] = []
    last = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CascadeFormatError("no cascades")
        if [h.strip() for h in header] != ["seq_id", "node", "time"]:
            raise CascadeFormatError("line 1: header must be seq_id,node,time")
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise CascadeFormatError(f"line {lineno}: expected 3 columns, got {len(row)}")
            sid, node, t = (x.strip() for x in row)
            try:
                tval = float(t)
            except ValueError:
                raise CascadeFormatError(f"line {lineno}: bad time {t!r}") from None
            if sid != last:
                if sid in groups:
                    raise CascadeFormatError(f"line {lineno}: rows of seq_id {sid!r} are not contiguous")
                groups[sid] = ([], [])
                order.append(sid)
                last = sid
            groups[sid][0].append(_int_token(node))
            groups[sid][1].append(tval)
    raw = [(sid, *groups[sid]) for sid in order]
    return _build(raw, None)


def load_cascades(path, format: str | None = None) -> CascadeDataset:
    """Read cascades from JSONL or CSV (format inferred from the suffix if omitted)."""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format == "jsonl":
        return _read_jsonl(path)
    if format == "csv":
        return _read_csv(path)
    raise ValueError(f"unknown cascade format {format!r}")


def save_cascades(ds: CascadeDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"meta": {"V": ds.V}}) + "\n")
        for c in ds.cascades:
            events = [[int(v), float(t)] for v, t in zip(c.nodes, c.times)]
            fh.write(json.dumps({"seq_id": c.seq_id, "events": events}) + "\n")


def save_node_names(ds: CascadeDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "name"])
        for i, name in enumerate(ds.node_names or ()):
            w.writerow([i, name])


# ---------------------------------------------------------------------------
# adjacency
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdjacencyEstimate:
    V: int
    counts: np.ndarray
    weights: np.ndarray
    n_max: int

    @property
    def edges(self) -> np.ndarray:
        """(i, j) pairs with positive weight, row-major."""
        return np.argwhere(self.weights > 0)


def estimate_adjacency(ds: CascadeDataset) -> AdjacencyEstimate:
    counts = np.zeros((ds.V, ds.V), dtype=np.int64)
    for c in ds.cascades:
        np.add.at(counts, (c.nodes[:-1], c.nodes[1:]), 1)
    n_max = int(counts.max())
    if n_max == 0:
        raise ValueError("no observed propagations: every cascade is shorter than 2")
    weights = counts / n_max
    return AdjacencyEstimate(ds.V, _frozen(counts, np.int64), _frozen(weights, np.float64), n_max)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: tuple[int, ...]

    def test_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignment) if f == fold]

    def train_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignment) if f != fold]

    def fold_sizes(self) -> list[int]:
        return [self.assignment.count(f) for f in range(self.k)]

    def to_csv(self, ds: CascadeDataset, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seq_id", "fold"])
            for c, f in zip(ds.cascades, self.assignment):
                w.writerow([c.seq_id, f])


def kfold_split(ds: CascadeDataset | Sequence, k: int, seed: int) -> FoldAssignment:
    """Random partition of whole cascades into k folds whose sizes differ by at most one."""
    n = len(ds)
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot split {n} cascades into {k} folds")
    perm = make_rng(seed).permutation(n)
    assignment = [0] * n
    for pos, idx in enumerate(perm):
        assignment[int(idx)] = pos % k
    return FoldAssignment(k, tuple(assignment))
