"""Graph-biased recurrent point process: likelihood, BPTT training and prediction.

A sample is (history events, current node) -> (next node, next arrival time).
The recurrent state summarises the history only; the current node enters the
node distribution through the graph bias and the intensity through its
embedding. Two ablations share this code path: ``nrpp`` drops the graph bias,
``rmtpp`` additionally drops every use of the node embeddings.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import kernels as K
from .core import Cascade, CascadeDataset
from .graph_embed import NodeEmbeddings
from .numerics import QuadratureError, make_rng, relu, sigmoid, softmax

VARIANTS = ("gbtpp", "nrpp", "rmtpp")
# parameters that each ablation removes (kept at zero, never updated)
FROZEN = {"gbtpp": (), "nrpp": ("U_h",), "rmtpp": ("U_h", "W_y", "v_y")}
PRED_REL_TOL = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    H: int = 64
    D_em: int = 32
    bptt_len: int = 20
    learning_rate: float = 0.01
    epochs: int = 10
    grad_clip: float = 5.0
    time_feature: str = "raw_gap"
    seed: int = 0
    variant: str = "gbtpp"
    optimizer: str = "adam"
    # weight on the time term of the joint likelihood
    time_weight: float = 1.0
    # times are divided by this before training; "auto" uses the mean training gap
    time_scale: float | str = 1.0
    # windows whose gradients are averaged into one update
    batch_size: int = 1

    def __post_init__(self):
        if self.bptt_len < 1:
            raise ValueError("bptt_len must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.time_feature not in ("raw_gap", "log_gap"):
            raise ValueError(f"unknown time_feature {self.time_feature!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if min(self.H, self.D_em) < 1 or self.grad_clip <= 0 or self.epochs < 0:
            raise ValueError("invalid TrainConfig")
        if self.time_scale != "auto" and not float(self.time_scale) > 0:
            raise ValueError("time_scale must be positive or 'auto'")


@dataclass(eq=False)
class GbtppParams:
    W_em: np.ndarray   # (V, D_em)
    b_em: np.ndarray   # (D_em,)
    W_v: np.ndarray    # (D_em, H)
    W_t: np.ndarray    # (H,)
    W_y: np.ndarray    # (2d, H)
    W_h: np.ndarray    # (H, H)
    b_h: np.ndarray    # (H,)
    V_h: np.ndarray    # (V, H)
    b_out: np.ndarray  # (V,)
    U_h: np.ndarray    # (V, H)
    v_h: np.ndarray    # (H,)
    v_y: np.ndarray    # (2d,)
    w_t: float = 0.1
    b_t: float = 0.0
    variant: str = "gbtpp"
    # model clock = data clock / time_scale
    time_scale: float = 1.0

    ARRAYS = ("W_em", "b_em", "W_v", "W_t", "W_y", "W_h", "b_h", "V_h", "b_out",
              "U_h", "v_h", "v_y")
    NAMES = ARRAYS + ("w_t", "b_t")

    def __post_init__(self):
        for name in self.ARRAYS:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        self.w_t = float(self.w_t)
        self.b_t = float(self.b_t)
        self.time_scale = float(self.time_scale)
        V, D = self.W_em.shape
        H = self.W_h.shape[0]
        Y = self.W_y.shape[0]
        expect = {"b_em": (D,), "W_v": (D, H), "W_t": (H,), "W_y": (Y, H), "W_h": (H, H),
                  "b_h": (H,), "V_h": (V, H), "b_out": (V,), "U_h": (V, H), "v_h": (H,),
                  "v_y": (Y,)}
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dims(self) -> dict:
        V, D = self.W_em.shape
        return {"V": V, "D_em": D, "H": self.W_h.shape[0], "d": self.W_y.shape[0] // 2}

    def copy(self) -> "GbtppParams":
        kw = {n: getattr(self, n).copy() for n in self.ARRAYS}
        return GbtppParams(**kw, w_t=self.w_t, b_t=self.b_t, variant=self.variant,
                           time_scale=self.time_scale)

    def zeros_like(self) -> "GbtppParams":
        kw = {n: np.zeros_like(getattr(self, n)) for n in self.ARRAYS}
        return GbtppParams(**kw, w_t=0.0, b_t=0.0, variant=self.variant,
                           time_scale=self.time_scale)

    def flatten(self) -> np.ndarray:
        parts = [getattr(self, n).ravel() for n in self.ARRAYS]
        return np.concatenate(parts + [np.array([self.w_t, self.b_t])])

    def unflatten(self, x) -> "GbtppParams":
        kw, pos = {}, 0
        for n in self.ARRAYS:
            a = getattr(self, n)
            kw[n] = np.array(x[pos:pos + a.size]).reshape(a.shape)
            pos += a.size
        return GbtppParams(**kw, w_t=x[pos], b_t=x[pos + 1], variant=self.variant,
                           time_scale=self.time_scale)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flatten())))


def init_params(V: int, d: int, H: int, D_em: int, rng, variant: str = "gbtpp") -> GbtppParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, w_t = 0.1."""
    if min(V, d, H, D_em) < 1:
        raise ValueError("dimensions must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")

    def u(shape, fan_in):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    Y = 2 * d
    p = GbtppParams(
        W_em=u((V, D_em), V), b_em=np.zeros(D_em), W_v=u((D_em, H), D_em),
        W_t=u((H,), 1), W_y=u((Y, H), Y), W_h=u((H, H), H), b_h=np.zeros(H),
        V_h=u((V, H), H), b_out=np.zeros(V), U_h=u((V, H), H), v_h=u((H,), H),
        v_y=u((Y,), Y), w_t=0.1, b_t=0.0, variant=variant,
    )
    for name in FROZEN[variant]:
        getattr(p, name)[...] = 0.0
    return p


# ---------------------------------------------------------------------------
# single-step pieces (reference forms; the kernels do the same work in bulk)
# ---------------------------------------------------------------------------


def time_features(times, mode: str = "raw_gap") -> np.ndarray:
    """Gap to the previous event for every event; the first event gets 0."""
    times = np.asarray(times, dtype=np.float64)
    gaps = np.diff(times, prepend=times[:1]) if len(times) else times.copy()
    if np.any(gaps < 0):
        raise ValueError("negative inter-event gap")
    return np.log1p(gaps) if mode == "log_gap" else gaps


def time_feature(history, index: int, config: TrainConfig = TrainConfig()) -> float:
    times = [t for _, t in history]
    if index == 0:
        gap = 0.0
    else:
        gap = times[index] - times[index - 1]
        if gap < 0:
            raise ValueError("negative inter-event gap")
    return math.log1p(gap) if config.time_feature == "log_gap" else gap


def step_history(params: GbtppParams, h_prev, node: int, tfeat: float, y) -> np.ndarray:
    if not 0 <= node < params.W_em.shape[0]:
        raise IndexError(f"node {node} out of range")
    u = params.W_em[node] + params.b_em
    a = (params.W_v.T @ u + params.W_y.T @ np.asarray(y, dtype=np.float64)
         + params.W_t * tfeat + params.W_h.T @ h_prev + params.b_h)
    h = relu(a)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("state blow-up")
    return h


def graph_bias(params: GbtppParams, h, emb: NodeEmbeddings, current: int) -> np.ndarray:
    if params.variant != "gbtpp":
        return np.zeros(params.V_h.shape[0])
    scale = max(float(params.U_h[current] @ h), 0.0)
    return scale * sigmoid(emb.source[current] @ emb.target.T)


def node_logits(params: GbtppParams, h, emb: NodeEmbeddings, current: int) -> np.ndarray:
    z = params.V_h @ h + params.b_out
    if params.variant == "gbtpp":
        z = z + graph_bias(params, h, emb, current)
    return z


def node_distribution(params: GbtppParams, h, emb: NodeEmbeddings, current: int) -> np.ndarray:
    if not 0 <= current < params.V_h.shape[0]:
        raise IndexError(f"node {current} out of range")
    return softmax(node_logits(params, h, emb, current))


def _offset(params: GbtppParams, h, y) -> float:
    return float(params.v_h @ h + params.v_y @ np.asarray(y, dtype=np.float64) + params.b_t)


def intensity(params: GbtppParams, h, y, t: float, t_prev: float) -> float:
    if t < t_prev:
        raise ValueError("t must be >= t_prev")
    expo = _offset(params, h, y) + params.w_t * (t - t_prev) / params.time_scale
    if expo > K.EXP_LIMIT:
        raise OverflowError("intensity overflow")
    return math.exp(expo) / params.time_scale


def time_density(params: GbtppParams, h, y, t: float, t_prev: float) -> float:
    """Intensity times survival, with the survival integral in closed form."""
    if t < t_prev:
        raise ValueError("t must be >= t_prev")
    c = _offset(params, h, y)
    dt = (t - t_prev) / params.time_scale
    if c + params.w_t * dt > K.EXP_LIMIT:
        raise OverflowError("intensity overflow")
    return math.exp(K.gompertz_log_density(c, params.w_t, dt)) / params.time_scale


# ---------------------------------------------------------------------------
# kernel plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Inputs:
    prox: np.ndarray
    Y: np.ndarray
    use_bias: bool


def _inputs(params: GbtppParams, emb: NodeEmbeddings | None) -> _Inputs:
    V = params.W_em.shape[0]
    Ydim = params.W_y.shape[0]
    if params.variant == "rmtpp" or emb is None:
        if params.variant != "rmtpp":
            raise ValueError(f"variant {params.variant!r} needs node embeddings")
        return _Inputs(np.zeros((V, V)), np.zeros((V, Ydim)), False)
    if emb.V != V:
        raise ValueError(f"embeddings have V={emb.V} but the model has V={V}")
    if 2 * emb.d != Ydim:
        raise ValueError(f"embeddings have d={emb.d} but the model expects d={Ydim // 2}")
    return _Inputs(np.ascontiguousarray(emb.proximity_matrix()), emb.concat(),
                   params.variant == "gbtpp")


def _cascade_arrays(c: Cascade, mode: str, scale: float = 1.0):
    times = c.times / scale if scale != 1.0 else c.times
    return (np.ascontiguousarray(c.nodes), np.ascontiguousarray(times),
            np.ascontiguousarray(time_features(times, mode)))


def _forward(params: GbtppParams, inp: _Inputs, nodes, tfeat):
    p = params
    return K.cascade_forward(p.W_em, p.b_em, p.W_v, p.W_t, p.W_y, p.W_h, p.b_h, p.V_h,
                             p.b_out, p.U_h, p.v_h, p.v_y, p.b_t, inp.prox, inp.Y,
                             nodes, tfeat, inp.use_bias)


def _window(params: GbtppParams, grads: GbtppParams, inp: _Inputs, arrays, start, stop,
            h0, time_weight):
    p, g = params, grads
    nodes, times, tfeat = arrays
    return K.window_grad(p.W_em, p.b_em, p.W_v, p.W_t, p.W_y, p.W_h, p.b_h, p.V_h, p.b_out,
                         p.U_h, p.v_h, p.v_y, p.w_t, p.b_t,
                         g.W_em, g.b_em, g.W_v, g.W_t, g.W_y, g.W_h, g.b_h, g.V_h, g.b_out,
                         g.U_h, g.v_h, g.v_y,
                         inp.prox, inp.Y, nodes, times, tfeat, start, stop,
                         np.ascontiguousarray(h0, dtype=np.float64), inp.use_bias,
                         float(time_weight))


def _sample_terms(params: GbtppParams, inp: _Inputs, c: Cascade, mode: str):
    nodes, times, tfeat = _cascade_arrays(c, mode, params.time_scale)
    _, logits, cvals = _forward(params, inp, nodes, tfeat)
    zmax = logits.max(axis=1)
    lse = zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
    node_ll = logits[np.arange(len(cvals)), nodes[1:]] - lse
    dts = np.diff(times)
    if np.any(cvals + max(params.w_t, 0.0) * dts > K.EXP_LIMIT):
        raise OverflowError("intensity overflow")
    time_ll = np.array([K.gompertz_log_density(c_, params.w_t, dt) for c_, dt in zip(cvals, dts)])
    # density on the data clock
    return node_ll, time_ll - math.log(params.time_scale)


def sample_log_likelihoods(params, emb, cascade: Cascade, config: TrainConfig = TrainConfig()):
    """Per-sample (node log-prob, time log-density) arrays of length N-1."""
    return _sample_terms(params, _inputs(params, emb), cascade, config.time_feature)


def sequence_log_likelihood(params: GbtppParams, emb, cascade: Cascade,
                            config: TrainConfig = TrainConfig()) -> float:
    node_ll, time_ll = sample_log_likelihoods(params, emb, cascade, config)
    return float(node_ll.sum() + config.time_weight * time_ll.sum())


def dataset_nll(params: GbtppParams, emb, ds: CascadeDataset, config: TrainConfig) -> float:
    """Mean per-sample negative joint log-likelihood."""
    inp = _inputs(params, emb)
    total = 0.0
    for c in ds.cascades:
        node_ll, time_ll = _sample_terms(params, inp, c, config.time_feature)
        total -= node_ll.sum() + config.time_weight * time_ll.sum()
    return total / ds.n_samples


# ---------------------------------------------------------------------------
# gradients and training
# ---------------------------------------------------------------------------


def window_nll(params: GbtppParams, emb, cascade: Cascade, start: int, stop: int,
               h0=None, config: TrainConfig = TrainConfig()) -> float:
    """Summed NLL of samples [start, stop) with the entering state held at h0."""
    inp = _inputs(params, emb)
    arrays = _cascade_arrays(cascade, config.time_feature, params.time_scale)
    if h0 is None:
        h0 = _state_before(params, inp, arrays, start)
    loss, *_ = _window(params, params.zeros_like(), inp, arrays, start, stop, h0,
                       config.time_weight)
    return loss


def _state_before(params, inp, arrays, start):
    p = params
    nodes, _, tfeat = arrays
    h = np.zeros(p.W_h.shape[0])
    return K.advance_state(p.W_em, p.b_em, p.W_v, p.W_t, p.W_y, p.W_h, p.b_h, inp.Y, h,
                           nodes, tfeat, 0, start)


def _mask_frozen(grads: GbtppParams, variant: str):
    for name in FROZEN[variant]:
        getattr(grads, name)[...] = 0.0


def bptt_gradients(params: GbtppParams, emb, cascade: Cascade, start: int, stop: int,
                   config: TrainConfig = TrainConfig(), h0=None):
    """Exact gradients of the windowed NLL over samples [start, stop) of one cascade.

    The state entering the window is computed from the preceding events (or
    taken from ``h0``) and held fixed, which is the truncated-BPTT objective.
    Returns (loss, grads, h_end); embeddings are not differentiated.
    """
    if not 0 <= start < stop <= len(cascade) - 1:
        raise ValueError(f"bad window [{start}, {stop}) for cascade of {len(cascade)} events")
    if stop - start > config.bptt_len:
        raise ValueError(f"window of {stop - start} samples exceeds bptt_len={config.bptt_len}")
    inp = _inputs(params, emb)
    arrays = _cascade_arrays(cascade, config.time_feature, params.time_scale)
    if h0 is None:
        h0 = _state_before(params, inp, arrays, start)
    grads = params.zeros_like()
    loss, _, _, gw, gb, h_end = _window(params, grads, inp, arrays, start, stop, h0,
                                        config.time_weight)
    grads.w_t, grads.b_t = gw, gb
    _mask_frozen(grads, params.variant)
    if not (np.isfinite(loss) and grads.all_finite()):
        raise FloatingPointError("non-finite gradient")
    return loss, grads, h_end


def window_gradients(params: GbtppParams, emb, window, config: TrainConfig = TrainConfig()):
    """``bptt_gradients`` for a list of consecutive PropagationSamples of one cascade."""
    window = list(window)
    if not window:
        raise ValueError("empty window")
    first = window[0]
    events = list(first.history)
    for j, s in enumerate(window):
        if tuple(s.history) != tuple(events):
            raise ValueError(f"sample {j} of the window does not continue the previous one")
        events.append((s.current_node, s.current_time))
    events.append((window[-1].label_node, window[-1].label_time))
    nodes, times = zip(*events)
    c = Cascade("window", np.array(nodes), np.array(times))
    start = len(first.history)
    return bptt_gradients(params, emb, c, start, start + len(window), config)


def resolve_time_scale(ds: CascadeDataset, config: TrainConfig) -> float:
    if config.time_scale == "auto":
        gaps = np.concatenate([np.diff(c.times) for c in ds.cascades])
        return float(gaps.mean())
    return float(config.time_scale)


@dataclass
class TrainResult:
    params: GbtppParams
    loss_trace: list = field(default_factory=list)
    best_epoch: int = 0


class _Adam:
    def __init__(self, params: GbtppParams, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = params.zeros_like().flatten()
        self.v = np.zeros_like(self.m)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _apply(params: GbtppParams, new: np.ndarray):
    pos = 0
    for n in GbtppParams.ARRAYS:
        a = getattr(params, n)
        a[...] = new[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    params.w_t = float(new[pos])
    params.b_t = float(new[pos + 1])


def train(ds: CascadeDataset, emb: NodeEmbeddings | None, config: TrainConfig = TrainConfig(),
          rng=None, log=None) -> TrainResult:
    """Truncated-BPTT training over per-cascade windows of ``bptt_len`` samples.

    Cascades are visited in a fresh random order each epoch; windows inside a
    cascade run in order and hand their final state to the next window. One
    parameter update per ``batch_size`` windows (mean gradient),
    global-norm clipped. w_t is kept >= 0 so the
    time density stays proper. Returns the parameters with the lowest mean
    training NLL seen at an epoch boundary (initialization included).
    """
    rng = make_rng(config.seed) if rng is None else rng
    d = emb.d if emb is not None else 1
    params = init_params(ds.V, d, config.H, config.D_em, rng, config.variant)
    params.time_scale = resolve_time_scale(ds, config)
    inp = _inputs(params, emb)
    data = [_cascade_arrays(c, config.time_feature, params.time_scale) for c in ds.cascades]
    frozen_mask = np.ones_like(params.flatten())
    probe = params.zeros_like()
    for name in FROZEN[config.variant]:
        getattr(probe, name)[...] = 1.0
    frozen_mask[probe.flatten() == 1.0] = 0.0
    w_index = len(frozen_mask) - 2

    opt = _Adam(params, config.learning_rate) if config.optimizer == "adam" else None
    best = dataset_nll(params, emb, ds, config)
    trace = [best]
    result = TrainResult(params.copy(), trace, 0)
    def update(g, n):
        g = g / n
        norm = float(np.linalg.norm(g))
        if norm > config.grad_clip:
            g *= config.grad_clip / norm
        x = params.flatten()
        x = opt.step(x, g) if opt is not None else x - config.learning_rate * g
        x[w_index] = max(x[w_index], 0.0)
        _apply(params, x)

    for epoch in range(1, config.epochs + 1):
        acc, pending = 0.0, 0
        for ci in rng.permutation(len(data)):
            arrays = data[ci]
            ns = len(arrays[0]) - 1
            h = np.zeros(config.H)
            for start in range(0, ns, config.bptt_len):
                stop = min(start + config.bptt_len, ns)
                grads = params.zeros_like()
                loss, _, _, gw, gb, h = _window(params, grads, inp, arrays, start, stop, h,
                                                config.time_weight)
                grads.w_t, grads.b_t = gw, gb
                g = grads.flatten() * frozen_mask
                if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                    raise FloatingPointError(f"divergence in epoch {epoch}")
                acc = acc + g
                pending += 1
                if pending == config.batch_size:
                    update(acc, pending)
                    acc, pending = 0.0, 0
        if pending:
            update(acc, pending)
        try:
            nll = dataset_nll(params, emb, ds, config)
        except OverflowError:
            nll = np.inf
        if not np.isfinite(nll):
            raise FloatingPointError(f"divergence in epoch {epoch}")
        trace.append(nll)
        if log is not None:
            log(f"epoch {epoch}: mean nll {nll:.6f}")
        if nll < best:
            best = nll
            result = TrainResult(params.copy(), trace, epoch)
    result.loss_trace = trace
    return result


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prediction:
    node: int
    time: float
    probs: np.ndarray


def expected_next_time(c: float, w: float, t_prev: float) -> float:
    if w <= -K.W_EPS:
        raise QuadratureError("non-integrable tail: w_t < 0 leaves mass at infinity")
    return t_prev + K.expected_gap(K.DENSITY_GOMPERTZ, c, w, 0.0, PRED_REL_TOL)


def predict_next(params: GbtppParams, emb, history, current: int, current_time: float,
                 config: TrainConfig = TrainConfig()) -> Prediction:
    """Most probable next node (lowest id on ties) and the expected arrival time."""
    if not 0 <= current < params.W_em.shape[0]:
        raise IndexError(f"node {current} out of range")
    inp = _inputs(params, emb)
    history = list(history)
    nodes = np.array([v for v, _ in history] + [current], dtype=np.int64)
    times = np.array([t for _, t in history] + [current_time], dtype=np.float64)
    times = times / params.time_scale
    tfeat = np.ascontiguousarray(time_features(times, config.time_feature))
    h = _state_before(params, inp, (nodes, times, tfeat), len(history))
    probs = node_distribution(params, h, emb, current)
    c = _offset(params, h, inp.Y[current])
    gap = expected_next_time(c, params.w_t, 0.0) * params.time_scale
    return Prediction(int(np.argmax(probs)), current_time + gap, probs)


def predict_cascade(params: GbtppParams, emb, cascade: Cascade,
                    config: TrainConfig = TrainConfig()):
    """Predictions for all N-1 samples: (nodes, times, prob matrix)."""
    inp = _inputs(params, emb)
    nodes, times, tfeat = _cascade_arrays(cascade, config.time_feature, params.time_scale)
    _, logits, cvals = _forward(params, inp, nodes, tfeat)
    probs = softmax(logits)
    if params.w_t <= -K.W_EPS:
        raise QuadratureError("non-integrable tail: w_t < 0 leaves mass at infinity")
    gaps = K.expected_gaps_gompertz(np.ascontiguousarray(cvals), params.w_t, PRED_REL_TOL)
    return np.argmax(probs, axis=1), cascade.times[:-1] + gaps * params.time_scale, probs
