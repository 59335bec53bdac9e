"""Hot inner loops: recurrent forward/backward, expectation quadrature, thinning.

Everything here runs under numba when available and as plain numpy otherwise
(see ``_accel``). Callers in the rest of the package pass contiguous float64 /
int64 arrays and never touch these functions with Python objects.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import kernel

W_EPS = 1e-8
EXP_LIMIT = 700.0
SURVIVAL_CUT = 1e-9

DENSITY_GOMPERTZ = 0
DENSITY_HAWKES = 1


# ---------------------------------------------------------------------------
# time likelihood pieces
# ---------------------------------------------------------------------------


@kernel
def gompertz_log_density(c, w, dt):
    """log f(dt) for intensity exp(c + w*dt); w below W_EPS uses the exponential limit."""
    if abs(w) < W_EPS:
        return c - math.exp(c) * dt
    return c + w * dt - math.exp(c) * math.expm1(w * dt) / w


@kernel
def gompertz_nll_grad(c, w, dt):
    """Negative log density and its partials with respect to c and w."""
    ec = math.exp(c)
    if abs(w) < W_EPS:
        nll = -c + ec * dt
        return nll, -1.0 + ec * dt, -dt + 0.5 * ec * dt * dt
    x = w * dt
    em1 = math.expm1(x)
    nll = -(c + x) + ec * em1 / w
    dc = -1.0 + ec * em1 / w
    if abs(x) < 1e-5:
        # (x e^x - expm1(x)) / x^2 by series
        g = 0.5 + x / 3.0 + x * x / 8.0
    else:
        g = (x * (em1 + 1.0) - em1) / (x * x)
    dw = -dt + ec * dt * dt * g
    return nll, dc, dw


@kernel
def _density(kind, p0, p1, p2, s):
    if kind == DENSITY_GOMPERTZ:
        return math.exp(gompertz_log_density(p0, p1, s))
    # hawkes: baseline p0, excitation mass p1 at s=0, decay p2
    lam = p0 + p1 * math.exp(-p2 * s)
    comp = p0 * s + p1 * (-math.expm1(-p2 * s)) / p2
    return lam * math.exp(-comp)


@kernel
def _hazard(kind, p0, p1, p2, s):
    if kind == DENSITY_GOMPERTZ:
        return math.exp(p0 + p1 * s)
    return p0 + p1 * math.exp(-p2 * s)


@kernel
def _log_survival(kind, p0, p1, p2, s):
    if kind == DENSITY_GOMPERTZ:
        if abs(p1) < W_EPS:
            return -math.exp(p0) * s
        return -math.exp(p0) * math.expm1(p1 * s) / p1
    return -(p0 * s + p1 * (-math.expm1(-p2 * s)) / p2)


@kernel
def survival_cutoff(kind, p0, p1, p2):
    """Gap beyond which the survival function is below SURVIVAL_CUT."""
    target = -math.log(SURVIVAL_CUT)
    if kind == DENSITY_GOMPERTZ:
        if abs(p1) < W_EPS:
            return target / math.exp(p0)
        return math.log1p(p1 * target * math.exp(-p0)) / p1
    # the excitation only shortens the wait, so the baseline alone bounds it
    return target / p0


@kernel
def adaptive_simpson(kind, p0, p1, p2, a, b, moment, tol, max_depth):
    """Integral of s**moment * density(s) over [a, b].

    Composite start with 16 panels, then local bisection until the Richardson
    error estimate is below the panel's share of ``tol``.
    """
    n0 = 16
    size = n0 + 2 * max_depth + 4
    sa = np.empty(size)
    sb = np.empty(size)
    sfa = np.empty(size)
    sfm = np.empty(size)
    sfb = np.empty(size)
    stol = np.empty(size)
    sdep = np.empty(size, dtype=np.int64)
    top = 0
    h = (b - a) / n0
    for i in range(n0):
        lo = a + i * h
        hi = lo + h
        mid = 0.5 * (lo + hi)
        sa[top] = lo
        sb[top] = hi
        sfa[top] = lo**moment * _density(kind, p0, p1, p2, lo)
        sfm[top] = mid**moment * _density(kind, p0, p1, p2, mid)
        sfb[top] = hi**moment * _density(kind, p0, p1, p2, hi)
        stol[top] = tol / n0
        sdep[top] = 0
        top += 1
    total = 0.0
    while top > 0:
        top -= 1
        lo = sa[top]
        hi = sb[top]
        fa = sfa[top]
        fm = sfm[top]
        fb = sfb[top]
        eps = stol[top]
        dep = sdep[top]
        mid = 0.5 * (lo + hi)
        whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = lm**moment * _density(kind, p0, p1, p2, lm)
        frm = rm**moment * _density(kind, p0, p1, p2, rm)
        left = (mid - lo) / 6.0 * (fa + 4.0 * flm + fm)
        right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        if dep >= max_depth or abs(err) <= 15.0 * eps:
            total += left + right + err / 15.0
            continue
        sa[top] = lo
        sb[top] = mid
        sfa[top] = fa
        sfm[top] = flm
        sfb[top] = fm
        stol[top] = 0.5 * eps
        sdep[top] = dep + 1
        top += 1
        sa[top] = mid
        sb[top] = hi
        sfa[top] = fm
        sfm[top] = frm
        sfb[top] = fb
        stol[top] = 0.5 * eps
        sdep[top] = dep + 1
        top += 1
    return total


@kernel
def expected_gap(kind, p0, p1, p2, rel_tol):
    """Mean waiting time E[s] = int_0^inf s f(s) ds over the survival window."""
    cut = survival_cutoff(kind, p0, p1, p2)
    # scale the tolerance to the window so large gaps do not force deep recursion
    body = adaptive_simpson(kind, p0, p1, p2, 0.0, cut, 1, rel_tol * cut, 40)
    # tail beyond the cut: int_T^inf s f = T S(T) + int_T^inf S, with the last
    # term taken at the hazard frozen at T (exact for a constant hazard)
    surv = math.exp(_log_survival(kind, p0, p1, p2, cut))
    return body + surv * (cut + 1.0 / _hazard(kind, p0, p1, p2, cut))


@kernel
def expected_gaps_gompertz(cvals, w, rel_tol):
    out = np.empty(cvals.shape[0])
    for i in range(cvals.shape[0]):
        out[i] = expected_gap(DENSITY_GOMPERTZ, cvals[i], w, 0.0, rel_tol)
    return out


# ---------------------------------------------------------------------------
# recurrent model
# ---------------------------------------------------------------------------


@kernel
def _preact(W_em, b_em, W_v, W_t, W_y, W_h, b_h, Y, h_prev, node, tf):
    u = W_em[node] + b_em
    return u @ W_v + Y[node] @ W_y + tf * W_t + h_prev @ W_h + b_h


@kernel
def cascade_forward(W_em, b_em, W_v, W_t, W_y, W_h, b_h, V_h, b_out, U_h,
                    v_h, v_y, b_t, prox, Y, nodes, tfeat, use_bias):
    """Hidden states, node logits and intensity offsets for every sample.

    Sample j (0 <= j < N-1) sees the state built from events[0..j-1]; its
    offset is c_j = v_h.h + v_y.y_cur + b_t.
    """
    n = nodes.shape[0]
    H = W_h.shape[0]
    V = V_h.shape[0]
    ns = n - 1
    states = np.zeros((ns, H))
    logits = np.empty((ns, V))
    cvals = np.empty(ns)
    h = np.zeros(H)
    for j in range(ns):
        if j > 0:
            a = _preact(W_em, b_em, W_v, W_t, W_y, W_h, b_h, Y, h,
                        nodes[j - 1], tfeat[j - 1])
            h = np.maximum(a, 0.0)
        states[j] = h
        cur = nodes[j]
        z = V_h @ h + b_out
        if use_bias:
            s = U_h[cur] @ h
            if s > 0.0:
                z = z + s * prox[cur]
        logits[j] = z
        cvals[j] = v_h @ h + v_y @ Y[cur] + b_t
    return states, logits, cvals


@kernel
def advance_state(W_em, b_em, W_v, W_t, W_y, W_h, b_h, Y, h, nodes, tfeat,
                  start, stop):
    """Run the recurrence over events[start:stop] from state h (no gradients)."""
    for e in range(start, stop):
        h = np.maximum(_preact(W_em, b_em, W_v, W_t, W_y, W_h, b_h, Y, h,
                               nodes[e], tfeat[e]), 0.0)
    return h


@kernel
def window_grad(W_em, b_em, W_v, W_t, W_y, W_h, b_h, V_h, b_out, U_h,
                v_h, v_y, w_t, b_t,
                gW_em, gb_em, gW_v, gW_t, gW_y, gW_h, gb_h, gV_h, gb_out,
                gU_h, gv_h, gv_y,
                prox, Y, nodes, times, tfeat, start, stop, h0,
                use_bias, time_weight):
    """Truncated BPTT over samples [start, stop) of one cascade.

    The state entering the window (h0) is treated as a constant. Gradients of
    the summed negative log-likelihood are added into the g* buffers; the
    scalar gradients for w_t and b_t are returned alongside the losses and the
    state that the next window should start from.
    """
    L = stop - start
    H = W_h.shape[0]
    V = V_h.shape[0]
    hs = np.zeros((L, H))
    pre = np.zeros((L, H))
    probs = np.empty((L, V))
    scale = np.zeros(L)
    cvals = np.empty(L)
    hs[0] = h0
    for m in range(1, L):
        e = start + m - 1
        a = _preact(W_em, b_em, W_v, W_t, W_y, W_h, b_h, Y, hs[m - 1],
                    nodes[e], tfeat[e])
        pre[m] = a
        hs[m] = np.maximum(a, 0.0)

    node_nll = 0.0
    time_nll = 0.0
    gw = 0.0
    gb = 0.0
    dcs = np.empty(L)
    for m in range(L):
        j = start + m
        h = hs[m]
        cur = nodes[j]
        z = V_h @ h + b_out
        if use_bias:
            s = U_h[cur] @ h
            scale[m] = s
            if s > 0.0:
                z = z + s * prox[cur]
        zmax = z.max()
        ez = np.exp(z - zmax)
        tot = ez.sum()
        probs[m] = ez / tot
        node_nll += zmax + math.log(tot) - z[nodes[j + 1]]
        c = v_h @ h + v_y @ Y[cur] + b_t
        cvals[m] = c
        if c + max(w_t, 0.0) * (times[j + 1] - times[j]) > EXP_LIMIT:
            return np.inf, np.inf, np.inf, np.nan, np.nan, h0
        nll, dc, dw = gompertz_nll_grad(c, w_t, times[j + 1] - times[j])
        time_nll += nll
        dcs[m] = time_weight * dc
        gw += time_weight * dw
        gb += time_weight * dc

    dcarry = np.zeros(H)
    for m in range(L - 1, -1, -1):
        j = start + m
        h = hs[m]
        cur = nodes[j]
        g = probs[m].copy()
        g[nodes[j + 1]] -= 1.0
        gV_h += np.outer(g, h)
        gb_out += g
        dh = dcarry + V_h.T @ g
        if use_bias and scale[m] > 0.0:
            ds = g @ prox[cur]
            gU_h[cur] += ds * h
            dh += ds * U_h[cur]
        dc = dcs[m]
        gv_h += dc * h
        gv_y += dc * Y[cur]
        dh += dc * v_h
        if m == 0:
            break
        da = dh * (pre[m] > 0.0)
        e = start + m - 1
        node = nodes[e]
        u = W_em[node] + b_em
        gW_v += np.outer(u, da)
        du = W_v @ da
        gW_em[node] += du
        gb_em += du
        gW_y += np.outer(Y[node], da)
        gW_t += tfeat[e] * da
        gW_h += np.outer(hs[m - 1], da)
        gb_h += da
        dcarry = W_h @ da

    h_end = np.maximum(_preact(W_em, b_em, W_v, W_t, W_y, W_h, b_h, Y,
                               hs[L - 1], nodes[stop - 1], tfeat[stop - 1]), 0.0)
    loss = node_nll + time_weight * time_nll
    return loss, node_nll, time_nll, gw, gb, h_end


# ---------------------------------------------------------------------------
# multivariate Hawkes thinning
# ---------------------------------------------------------------------------


@kernel
def thin_hawkes(mu, A, beta, horizon, max_events, uniforms):
    """Ogata thinning with exponential kernel, driven by a uniform stream.

    Returns (nodes, times, n_events, n_used). ``n_used == -1`` means the
    uniform buffer ran out and the caller must retry with a longer one.
    """
    U = mu.shape[0]
    nodes = np.empty(max_events, dtype=np.int64)
    times = np.empty(max_events)
    excite = np.zeros(U)
    t = 0.0
    k = 0
    n = 0
    nu = uniforms.shape[0]
    mu_total = mu.sum()
    while n < max_events:
        bound = mu_total + excite.sum()
        if bound <= 0.0:
            break
        if k + 2 > nu:
            return nodes, times, n, -1
        gap = -math.log(1.0 - uniforms[k]) / bound
        k += 1
        t += gap
        if t > horizon:
            break
        excite *= math.exp(-beta * gap)
        lam = mu + excite
        lam_total = lam.sum()
        accept = lam_total / bound
        if accept > 1.0 + 1e-12:
            raise ValueError("thinning acceptance above one")
        u = uniforms[k]
        k += 1
        if u * bound <= lam_total:
            # node by inverse cdf of lam, reusing the accepted uniform
            target = u * bound
            acc = 0.0
            pick = U - 1
            for i in range(U):
                acc += lam[i]
                if target <= acc:
                    pick = i
                    break
            nodes[n] = pick
            times[n] = t
            n += 1
            excite += A[:, pick]
    return nodes, times, n, k
