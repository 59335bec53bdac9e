"""Comparison models: Markov chains, Poisson, Hawkes, self-correcting, CTMC, recurrent ablations.

Every fitted model exposes ``predict_cascade(cascade) -> (nodes, times, probs)``
covering the cascade's N-1 samples; entries a model does not predict are None.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import kernels as K
from .core import Cascade, CascadeDataset
from .model import TrainConfig

PRED_REL_TOL = 1e-9


def _ties_low_argmax(p):
    return int(np.argmax(p))


# ---------------------------------------------------------------------------
# Markov chains
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MarkovModel:
    order: int
    V: int
    smoothing: float
    # context tuple (oldest .. current) -> next-node counts, for every order 1..order
    counts: dict = field(default_factory=dict)
    global_counts: np.ndarray | None = None

    kind = "markov"

    def distribution(self, history_nodes, current: int) -> np.ndarray:
        seq = list(history_nodes) + [int(current)]
        for k in range(min(self.order, len(seq)), 0, -1):
            row = self.counts.get(tuple(seq[-k:]))
            if row is not None:
                return (row + self.smoothing) / (row.sum() + self.smoothing * self.V)
        g = self.global_counts
        return (g + self.smoothing) / (g.sum() + self.smoothing * self.V)

    def predict_cascade(self, c: Cascade):
        nodes = c.nodes.tolist()
        probs = np.array([self.distribution(nodes[:j], nodes[j]) for j in range(len(nodes) - 1)])
        return probs.argmax(axis=1), None, probs

    def to_dict(self) -> dict:
        return {"order": self.order, "V": self.V, "smoothing": self.smoothing,
                "contexts": [[list(k), v.tolist()] for k, v in sorted(self.counts.items())],
                "global": self.global_counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        counts = {tuple(k): np.array(v, dtype=np.float64) for k, v in d["contexts"]}
        return cls(d["order"], d["V"], d["smoothing"], counts, np.array(d["global"], dtype=np.float64))


def fit_markov(ds: CascadeDataset, order: int, smoothing: float = 0.1) -> MarkovModel:
    """Counts of next node given the last ``order`` nodes, with all lower orders kept for backoff."""
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    counts: dict = {}
    glob = np.zeros(ds.V)
    for c in ds.cascades:
        nodes = c.nodes.tolist()
        for j in range(len(nodes) - 1):
            nxt = nodes[j + 1]
            glob[nxt] += 1
            for k in range(1, min(order, j + 1) + 1):
                ctx = tuple(nodes[j - k + 1:j + 1])
                row = counts.get(ctx)
                if row is None:
                    row = counts[ctx] = np.zeros(ds.V)
                row[nxt] += 1
    return MarkovModel(order, ds.V, smoothing, counts, glob)


def predict_markov(model: MarkovModel, history_nodes, current: int) -> np.ndarray:
    return model.distribution(history_nodes, current)


# ---------------------------------------------------------------------------
# homogeneous Poisson
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonModel:
    lambda0: float

    kind = "poisson"

    @property
    def mean_gap(self) -> float:
        return 1.0 / self.lambda0

    def predict_time(self, t_prev: float) -> float:
        return t_prev + self.mean_gap

    def predict_cascade(self, c: Cascade):
        return None, c.times[:-1] + self.mean_gap, None

    def to_dict(self):
        return {"lambda0": self.lambda0}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lambda0"])


def _gaps(ds: CascadeDataset) -> np.ndarray:
    return np.concatenate([np.diff(c.times) for c in ds.cascades])


def fit_poisson(ds: CascadeDataset) -> PoissonModel:
    gaps = _gaps(ds)
    if gaps.size == 0:
        raise ValueError("no inter-event gaps observed")
    mean = float(gaps.mean())
    if mean <= 0:
        raise ValueError("all gaps are zero")
    return PoissonModel(1.0 / mean)


# ---------------------------------------------------------------------------
# univariate Hawkes, exponential kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HawkesModel:
    gamma0: float
    alpha: float
    beta: float
    log_likelihood: float = float("nan")

    kind = "hawkes"

    def predict_time(self, history_times, t_prev: float) -> float:
        """Expected next event time; ``history_times`` are the events that excite (all <= t_prev)."""
        h = np.asarray(history_times, dtype=np.float64)
        excite = float(np.exp(-self.beta * (t_prev - h)).sum()) if h.size else 0.0
        return t_prev + K.expected_gap(K.DENSITY_HAWKES, self.gamma0, self.alpha * excite,
                                       self.beta, PRED_REL_TOL)

    def predict_cascade(self, c: Cascade):
        t = c.times
        out = np.empty(len(t) - 1)
        excite = 0.0
        for j in range(len(t) - 1):
            if j:
                excite = excite * math.exp(-self.beta * (t[j] - t[j - 1]))
            excite += 1.0
            out[j] = t[j] + K.expected_gap(K.DENSITY_HAWKES, self.gamma0, self.alpha * excite,
                                           self.beta, PRED_REL_TOL)
        return None, out, None

    def to_dict(self):
        return {"gamma0": self.gamma0, "alpha": self.alpha, "beta": self.beta,
                "log_likelihood": self.log_likelihood}

    @classmethod
    def from_dict(cls, d):
        return cls(d["gamma0"], d["alpha"], d["beta"], d.get("log_likelihood", float("nan")))


def hawkes_log_likelihood(times, t_end: float, gamma0: float, alpha: float, beta: float,
                          t_start: float = 0.0, condition_first: bool = False) -> float:
    """Exponential-kernel Hawkes log-likelihood of ``times`` observed on [t_start, t_end].

    With ``condition_first`` the first event is taken as given: it excites
    later events but contributes no log-intensity term.
    """
    t = np.asarray(times, dtype=np.float64)
    ll = 0.0
    r = 0.0
    for i in range(len(t)):
        if i:
            r = math.exp(-beta * (t[i] - t[i - 1])) * (1.0 + r)
        if i or not condition_first:
            lam = gamma0 + alpha * r
            if lam <= 0:
                return -math.inf
            ll += math.log(lam)
    ll -= gamma0 * (t_end - t_start)
    ll -= alpha / beta * float(np.sum(-np.expm1(-beta * (t_end - t))))
    return ll


def _hawkes_stats(ds: CascadeDataset, beta: float):
    """Sufficient statistics of the pooled, first-event-conditioned likelihood."""
    rs, total_time, kern = [], 0.0, 0.0
    for c in ds.cascades:
        t = c.times
        d = np.exp(-beta * np.diff(t))
        r = np.empty(len(t) - 1)
        acc = 0.0
        for i in range(len(d)):
            acc = d[i] * (1.0 + acc)
            r[i] = acc
        rs.append(r)
        total_time += t[-1] - t[0]
        kern += float(np.sum(-np.expm1(-beta * (t[-1] - t)))) / beta
    return np.concatenate(rs), total_time, kern


def _pooled_ll(x, r, total_time, kern):
    g, a = x
    lam = g + a * r
    if np.any(lam <= 0):
        return -math.inf
    return float(np.sum(np.log(lam)) - g * total_time - a * kern)


def fit_hawkes(ds: CascadeDataset, betas=(0.1, 1.0, 10.0), max_iter: int = 5000,
               tol: float = 1e-10, floor: float = 1e-10) -> HawkesModel:
    """(gamma0, alpha) by projected gradient ascent per beta; best beta by likelihood.

    Cascades are pooled, each conditioned on its first event and observed until
    its last. The likelihood is concave in (gamma0, alpha), so a diagonally
    scaled gradient step with backtracking converges to the constrained optimum.
    """
    if not len(ds):
        raise ValueError("no cascades")
    best = None
    for beta in betas:
        r, total_time, kern = _hawkes_stats(ds, beta)
        n = len(r)
        x = np.array([max(n / total_time, floor), 0.0])
        ll = _pooled_ll(x, r, total_time, kern)
        converged = False
        for _ in range(max_iter):
            lam = x[0] + x[1] * r
            grad = np.array([np.sum(1.0 / lam) - total_time, np.sum(r / lam) - kern])
            curv = np.array([np.sum(1.0 / lam**2), np.sum(r**2 / lam**2)]) + 1e-12
            direction = grad / curv
            step = 1.0
            while step > 1e-12:
                cand = np.maximum(x + step * direction, [floor, 0.0])
                cand_ll = _pooled_ll(cand, r, total_time, kern)
                if cand_ll >= ll:
                    break
                step *= 0.5
            else:
                converged = True
                break
            moved = float(np.max(np.abs(cand - x)))
            x, gain = cand, cand_ll - ll
            ll = cand_ll
            if moved <= tol * (1.0 + float(np.max(np.abs(x)))) or gain <= tol * (1.0 + abs(ll)):
                converged = True
                break
        if not converged:
            raise RuntimeError(f"Hawkes fit did not converge for beta={beta}; best iterate {x.tolist()}")
        if best is None or ll > best.log_likelihood:
            best = HawkesModel(float(x[0]), float(x[1]), float(beta), float(ll))
    return best


# ---------------------------------------------------------------------------
# self-correcting process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScpModel:
    """Intensity exp(mu * tau - alpha * n) with tau measured from the cascade's first event
    and n the number of events so far (the first included)."""

    mu: float
    alpha: float
    log_likelihood: float = float("nan")

    kind = "scp"

    def predict_time(self, tau_prev: float, n_events: int, t_prev: float) -> float:
        c = self.mu * tau_prev - self.alpha * n_events
        return t_prev + K.expected_gap(K.DENSITY_GOMPERTZ, c, self.mu, 0.0, PRED_REL_TOL)

    def predict_cascade(self, c: Cascade):
        t = c.times
        out = np.array([self.predict_time(t[j] - t[0], j + 1, t[j]) for j in range(len(t) - 1)])
        return None, out, None

    def to_dict(self):
        return {"mu": self.mu, "alpha": self.alpha, "log_likelihood": self.log_likelihood}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mu"], d["alpha"], d.get("log_likelihood", float("nan")))


SCP_MAX_EXPONENT = 50.0
SCP_MIN_PARAM = 1e-12


def _scp_stats(ds: CascadeDataset):
    lo, hi, n = [], [], []
    for c in ds.cascades:
        tau = c.times - c.times[0]
        lo.append(tau[:-1])
        hi.append(tau[1:])
        n.append(np.arange(1, len(tau), dtype=np.float64))
    return np.concatenate(lo), np.concatenate(hi), np.concatenate(n)


def scp_log_likelihood(mu: float, alpha: float, stats) -> float:
    lo, hi, n = stats
    if mu <= 0 or alpha <= 0:
        return -math.inf
    with np.errstate(over="ignore", invalid="ignore"):
        comp = np.exp(mu * lo - alpha * n) * np.expm1(mu * (hi - lo)) / mu
        ll = float(np.sum(mu * hi - alpha * n - comp))
    return ll if np.isfinite(ll) else -math.inf


def fit_scp(ds: CascadeDataset, mu_grid=None, alpha_grid=None,
            max_exponent: float = SCP_MAX_EXPONENT) -> ScpModel:
    """Log-spaced grid search over (mu, alpha) followed by bounded Nelder-Mead in log space.

    Perfectly regular data has an unbounded likelihood (mu and alpha grow together);
    alpha and mu * mean_gap are capped at ``max_exponent`` to keep the fit finite.
    """
    stats = _scp_stats(ds)
    gap = float(np.mean(stats[1] - stats[0]))
    mu_hi, alpha_hi = max_exponent / gap, max_exponent
    mu_grid = np.logspace(-5, 1, 31) / gap if mu_grid is None else np.asarray(mu_grid)
    alpha_grid = np.logspace(-4, 1, 26) if alpha_grid is None else np.asarray(alpha_grid)
    best = (-math.inf, None)
    for m in mu_grid:
        for a in alpha_grid:
            ll = scp_log_likelihood(m, a, stats)
            if ll > best[0]:
                best = (ll, (m, a))
    if best[1] is None:
        raise RuntimeError("SCP grid search found no finite likelihood")
    lo = math.log(SCP_MIN_PARAM)
    res = minimize(lambda z: -scp_log_likelihood(math.exp(z[0]), math.exp(z[1]), stats),
                   np.log(best[1]), method="Nelder-Mead",
                   bounds=[(lo + math.log(1.0 / gap), math.log(mu_hi)), (lo, math.log(alpha_hi))],
                   options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
    ll = -float(res.fun)
    if np.isfinite(ll) and ll >= best[0]:
        mu, alpha = float(math.exp(res.x[0])), float(math.exp(res.x[1]))
    else:
        ll, (mu, alpha) = best[0], (float(best[1][0]), float(best[1][1]))
    return ScpModel(mu, alpha, ll)


# ---------------------------------------------------------------------------
# continuous-time Markov chain
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CtmcModel:
    rates: np.ndarray
    global_rates: np.ndarray

    kind = "ctmc"

    def _row(self, current: int) -> np.ndarray:
        row = self.rates[current]
        return row if row.sum() > 0 else self.global_rates

    def predict(self, current: int, t_prev: float):
        row = self._row(current)
        total = row.sum()
        return _ties_low_argmax(row), t_prev + 1.0 / total, row / total

    def predict_cascade(self, c: Cascade):
        rows = np.array([self._row(int(v)) for v in c.nodes[:-1]])
        totals = rows.sum(axis=1)
        return rows.argmax(axis=1), c.times[:-1] + 1.0 / totals, rows / totals[:, None]

    def to_dict(self):
        return {"rates": self.rates.tolist(), "global_rates": self.global_rates.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rates"]), np.array(d["global_rates"]))


def fit_ctmc(ds: CascadeDataset) -> CtmcModel:
    """q_ij = N_ij / (time spent in i before leaving); diagonal zero.

    Self-transitions carry no rate of their own; their sojourn time still
    counts toward the holding time of i.
    """
    V = ds.V
    n = np.zeros((V, V))
    sojourn = np.zeros(V)
    for c in ds.cascades:
        np.add.at(n, (c.nodes[:-1], c.nodes[1:]), 1.0)
        np.add.at(sojourn, c.nodes[:-1], np.diff(c.times))
    np.fill_diagonal(n, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(sojourn[:, None] > 0, n / sojourn[:, None], 0.0)
    global_rates = n.sum(axis=0) / sojourn.sum()
    if global_rates.sum() <= 0:
        raise ValueError("no transitions between distinct nodes observed")
    return CtmcModel(rates, global_rates)


def predict_ctmc(model: CtmcModel, current: int, t_prev: float = 0.0):
    node, time, _ = model.predict(current, t_prev)
    return node, time


# ---------------------------------------------------------------------------
# recurrent ablations
# ---------------------------------------------------------------------------


def rmtpp_variant(config: TrainConfig = TrainConfig()) -> TrainConfig:
    """Recurrent baseline without node embeddings or graph bias."""
    return replace(config, variant="rmtpp")


def nrpp_variant(config: TrainConfig = TrainConfig()) -> TrainConfig:
    """Embeddings feed the recurrence and intensity, but no graph bias."""
    return replace(config, variant="nrpp")
