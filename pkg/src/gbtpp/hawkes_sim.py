"""Synthetic propagation cascades from a multivariate Hawkes process.

Infectivity is low rank and block banded: A = P Q^T where column i of P and Q
is nonzero only on an overlapping band of rows, so events mostly excite
nearby nodes. A is rescaled to a target spectral radius before simulation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from .core import Cascade, CascadeDataset
from .numerics import make_rng, spectral_radius


@dataclass(frozen=True, eq=False)
class HawkesParams:
    mu: np.ndarray
    A: np.ndarray
    beta: float = 1.0
    # 1-based inclusive row bands used to build A, after clamping to [1, U]
    bands: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        A = np.ascontiguousarray(self.A, dtype=np.float64)
        U = mu.shape[0]
        if A.shape != (U, U):
            raise ValueError(f"A has shape {A.shape}, expected {(U, U)}")
        if np.any(mu < 0) or np.any(A < 0):
            raise ValueError("mu and A must be nonnegative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        rho = spectral_radius(A) / self.beta
        if rho >= 1.0:
            raise ValueError(f"branching ratio rho(A)/beta = {rho:.4g} >= 1; process is explosive")
        mu.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def U(self) -> int:
        return self.mu.shape[0]

    def to_json(self) -> dict:
        return {"U": self.U, "mu": self.mu.tolist(), "A": self.A.tolist(), "beta": self.beta,
                "bands": [list(b) for b in self.bands], "seed": self.seed}


@dataclass(frozen=True)
class SimConfig:
    n_sequences: int = 2000
    max_events: int = 20
    horizon: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.n_sequences < 1 or self.max_events < 2 or self.horizon <= 0:
            raise ValueError("invalid SimConfig")


@dataclass
class SimReport:
    n_sequences: int
    n_events: int
    discarded: int


def band_rows(U: int, n_blocks: int = 9) -> list[tuple[int, int]]:
    """Row bands [10(i-1)+1, 10(i+1)] at U=100, scaled linearly for other U and clamped."""
    bands = []
    for i in range(1, n_blocks + 1):
        lo = (i - 1) * U // 10 + 1
        hi = (i + 1) * U // 10
        lo, hi = max(1, min(lo, U)), max(1, min(hi, U))
        bands.append((lo, max(lo, hi)))
    return bands


def scale_spectral_radius(A, target: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    rho = spectral_radius(A)
    if rho == 0.0:
        raise ValueError("cannot rescale a matrix with zero spectral radius")
    return A * (target / rho)


def synthesize_params(U: int, seed: int, target_radius: float = 0.8, beta: float = 1.0,
                      mu_high: float = 0.001, n_blocks: int = 9, entry_high: float = 0.1
                      ) -> HawkesParams:
    rng = make_rng(seed)
    mu = rng.uniform(0.0, mu_high, size=U)
    bands = band_rows(U, n_blocks)
    P = np.zeros((U, n_blocks))
    Q = np.zeros((U, n_blocks))
    for i, (lo, hi) in enumerate(bands):
        P[lo - 1:hi, i] = rng.uniform(0.0, entry_high, size=hi - lo + 1)
        Q[lo - 1:hi, i] = rng.uniform(0.0, entry_high, size=hi - lo + 1)
    A = scale_spectral_radius(P @ Q.T, target_radius)
    return HawkesParams(mu, A, beta, tuple(bands), seed)


def stationary_intensity(params: HawkesParams) -> np.ndarray:
    """Long-run event rate per node, solving (I - A/beta) x = mu."""
    M = np.eye(params.U) - params.A / params.beta
    try:
        return np.linalg.solve(M, params.mu)
    except np.linalg.LinAlgError:
        raise ValueError("singular system: I - A/beta is not invertible") from None


def simulate_sequence(params: HawkesParams, horizon: float, max_events: int, rng):
    """One realization on [0, horizon], truncated at max_events events."""
    size = 4 * max_events + 64
    while True:
        u = rng.random(size)
        nodes, times, n, used = K.thin_hawkes(params.mu, params.A, params.beta,
                                              float(horizon), int(max_events), u)
        if used >= 0:
            return nodes[:n].copy(), times[:n].copy()
        size *= 4


def simulate(params: HawkesParams, config: SimConfig = SimConfig(),
             max_attempts: int = 10_000) -> tuple[CascadeDataset, SimReport]:
    """Independent sequences; sequence i draws only from substream (seed, i).

    Realizations with fewer than two events are discarded and redrawn from the
    same substream; the discard count is reported.
    """
    cascades = []
    discarded = 0
    n_events = 0
    for i in range(config.n_sequences):
        rng = make_rng(config.seed, i)
        for _ in range(max_attempts):
            nodes, times = simulate_sequence(params, config.horizon, config.max_events, rng)
            if len(nodes) >= 2:
                break
            discarded += 1
        else:
            raise RuntimeError(f"sequence {i}: no realization with >= 2 events in "
                               f"{max_attempts} attempts; increase the horizon")
        cascades.append(Cascade(f"seq{i:06d}", nodes, times))
        n_events += len(nodes)
    ds = CascadeDataset(params.U, tuple(cascades))
    return ds, SimReport(config.n_sequences, n_events, discarded)


def write_sidecar(params: HawkesParams, config: SimConfig, report: SimReport, path) -> None:
    doc = {"params": params.to_json(), "config": asdict(config), "report": asdict(report),
           "kernel": "exp(-beta t)"}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
