"""Shared numeric substrate: activations, RNG, spectral radius, quadrature, gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(f"{message} (last estimate {estimate!r})")
        self.estimate = estimate


class QuadratureError(RuntimeError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator; extra integers select an independent substream.

    ``make_rng(seed, i)`` is the per-sequence stream used by the simulator, so
    sequence i is reproducible regardless of how many others were drawn.
    """
    if stream:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))
    return np.random.Generator(np.random.PCG64(seed))


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    zmax = z.max(axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


def sigmoid(x):
    """Logistic function, evaluated without overflow for either sign."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def spectral_radius(A, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Dominant eigenvalue magnitude by power iteration.

    Intended for nonnegative matrices (Perron root). The start vector is the
    normalized all-ones vector so the result is deterministic.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("spectral_radius: matrix has non-finite entries")
    n = A.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    est = 0.0
    for _ in range(max_iter):
        y = A @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        if abs(norm - est) <= tol * norm:
            return norm
        est = norm
        x = y / norm
    raise ConvergenceError("power iteration did not converge", est)


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    tail_tol: float = 1e-12
    initial_window: float = 1.0
    max_window: float = 1e12
    max_depth: int = 50


def _simpson_adaptive(f, a, b, tol, max_depth):
    n0 = 16
    xs = np.linspace(a, b, n0 + 1)
    fx = [f(x) for x in xs]
    stack = []
    for i in range(n0):
        lo, hi = xs[i], xs[i + 1]
        mid = 0.5 * (lo + hi)
        stack.append((lo, hi, fx[i], f(mid), fx[i + 1], tol / n0, 0))
    total = 0.0
    while stack:
        lo, hi, fa, fm, fb, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)
        left = (mid - lo) / 6.0 * (fa + 4.0 * flm + fm)
        right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        if depth >= max_depth or abs(err) <= 15.0 * eps:
            total += left + right + err / 15.0
        else:
            stack.append((lo, mid, fa, flm, fm, 0.5 * eps, depth + 1))
            stack.append((mid, hi, fm, frm, fb, 0.5 * eps, depth + 1))
    return total


def integrate_1d(
    f: Callable[[float], float],
    a: float,
    config: QuadratureConfig = QuadratureConfig(),
    t_cut: float | None = None,
) -> float:
    """Integral of a nonnegative, eventually decaying f over [a, inf).

    Integrates over [a, a + t_cut] with adaptive composite Simpson. Without an
    explicit ``t_cut`` the window doubles from ``initial_window`` until f is
    below ``tail_tol`` at both the window end and its last midpoint.
    """
    if t_cut is None:
        w = config.initial_window
        while True:
            if abs(f(a + w)) < config.tail_tol and abs(f(a + 0.75 * w)) < config.tail_tol:
                break
            w *= 2.0
            if w > config.max_window:
                raise QuadratureError("non-integrable tail")
        t_cut = w
    return _simpson_adaptive(f, a, a + t_cut, config.abs_tol, config.max_depth)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        fp = f(x)
        x[i] = orig - eps
        fm = f(x)
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad
