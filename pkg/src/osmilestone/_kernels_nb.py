"""numba-compiled kernels; loop-for-loop twins of ``_kernels_np``."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _weibull_logterms(alpha, logb, y, d, out):
    la = math.log(alpha)
    for i in range(y.size):
        yi = y[i]
        if yi > 0:
            ly = math.log(yi)
            v = -math.exp(logb[i] + alpha * ly)
            if d[i] > 0:
                v += la + logb[i] + (alpha - 1.0) * ly
        else:
            v = la + logb[i] if d[i] > 0 else 0.0
        out[i] = v


def weibull_logterms(alpha, logb, y, d):
    y = np.ascontiguousarray(y, dtype=np.float64)
    logb = np.ascontiguousarray(np.broadcast_to(logb, y.shape), dtype=np.float64)
    d = np.ascontiguousarray(np.broadcast_to(d, y.shape), dtype=np.float64)
    out = np.empty(y.shape)
    _weibull_logterms(float(alpha), logb.ravel(), y.ravel(), d.ravel(), out.ravel())
    return out


@njit(cache=True)
def _chaz_factor1(alpha, x, s, cw):
    acc = 0.0
    for j in range(s.size):
        acc += cw[j] * math.exp(x * s[j])
    return acc


@njit(cache=True)
def _tl_chaz_factor(alpha, x, nodes, weights, out):
    s = nodes ** (3.0 / alpha)
    cw = 3.0 * weights * nodes * nodes
    for i in range(x.size):
        out[i] = _chaz_factor1(alpha, x[i], s, cw)


def tl_chaz_factor(alpha, x, nodes, weights):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(x.shape)
    _tl_chaz_factor(float(alpha), x.ravel(), np.asarray(nodes), np.asarray(weights), out.ravel())
    return out


@njit(cache=True)
def _clayton_D(a, b):
    m = max(a, b)
    if m > 1.0:
        return m + math.log(math.exp(a - m) + math.exp(b - m) - math.exp(-m))
    return math.log1p(math.expm1(a) + math.expm1(b))


@njit(cache=True)
def _clayton_logterms(ha, hb, lha, lhb, da, db, eta, out):
    inv = 1.0 / eta
    l1e = math.log1p(eta)
    for i in range(ha.size):
        a = eta * ha[i]
        b = eta * hb[i]
        D = _clayton_D(a, b)
        if da[i] > 0:
            if db[i] > 0:
                out[i] = l1e + a + b - (2.0 + inv) * D + lha[i] + lhb[i]
            else:
                out[i] = a - (1.0 + inv) * D + lha[i]
        elif db[i] > 0:
            out[i] = b - (1.0 + inv) * D + lhb[i]
        else:
            out[i] = -inv * D


def clayton_logterms(ha, hb, lha, lhb, da, db, eta):
    arrs = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (ha, hb, lha, lhb, da, db)))
    arrs = [np.ascontiguousarray(a).ravel() for a in arrs]
    out = np.empty(arrs[0].size)
    _clayton_logterms(*arrs, float(eta), out)
    return out.reshape(np.broadcast_shapes(*(np.shape(v) for v in (ha, hb, lha, lhb, da, db))))


@njit(cache=True)
def _chaz(loga, alpha, k, t, s, cw):
    if t <= 0:
        return 0.0
    return math.exp(loga + alpha * math.log(t)) * _chaz_factor1(alpha, k * t, s, cw)


@njit(cache=True)
def _tl_ppd_solve(loga, alpha, k, c, e, cap, nodes, weights, out, capped):
    s = nodes ** (3.0 / alpha)
    cw = 3.0 * weights * nodes * nodes
    lal = math.log(alpha)
    for i in range(loga.size):
        ci = c[i]
        target = _chaz(loga[i], alpha, k[i], ci, s, cw) + e[i]
        if _chaz(loga[i], alpha, k[i], cap, s, cw) < target:
            out[i] = cap
            capped[i] = True
            continue
        capped[i] = False
        lo = ci
        hi = cap
        guess = (ci**alpha + e[i] / math.exp(loga[i])) ** (1.0 / alpha)
        t = guess if (guess > lo and guess < hi) else 0.5 * (lo + hi)
        for _ in range(200):
            f = _chaz(loga[i], alpha, k[i], t, s, cw) - target
            if f <= 0:
                lo = t
            else:
                hi = t
            logh = lal + loga[i] + (alpha - 1.0) * math.log(t) + k[i] * t
            tn = t - f / math.exp(logh)
            if not (tn > lo and tn < hi and math.isfinite(tn)):
                tn = 0.5 * (lo + hi)
            done = abs(tn - t) <= 1e-12 * t or hi - lo <= 1e-12 * hi
            t = tn
            if done:
                break
        nxt = np.nextafter(ci, np.inf)
        out[i] = t if t > nxt else nxt


def tl_ppd_solve(loga, alpha, k, c, e, cap, nodes, weights):
    loga = np.ascontiguousarray(loga, dtype=np.float64).ravel()
    k = np.ascontiguousarray(np.broadcast_to(np.asarray(k, dtype=np.float64), loga.shape)).ravel()
    c = np.ascontiguousarray(np.broadcast_to(np.asarray(c, dtype=np.float64), loga.shape)).ravel()
    e = np.ascontiguousarray(e, dtype=np.float64).ravel()
    out = np.empty(loga.size)
    capped = np.zeros(loga.size, dtype=np.bool_)
    _tl_ppd_solve(loga, float(alpha), k, c, e, float(cap), np.asarray(nodes), np.asarray(weights), out, capped)
    return out, capped


@njit(cache=True)
def _tl_integrated_os(alpha, log_a0, lam, bt, m1, m2, l11, l21, l22, y, d,
                      gh_z, gh_logw, nodes, weights, out):
    s = nodes ** (3.0 / alpha)
    cw = 3.0 * weights * nodes * nodes
    lal = math.log(alpha)
    g = gh_z.size
    buf = np.empty(g * g)
    for i in range(y.size):
        yi = y[i]
        ly = math.log(yi) if yi > 0 else 0.0
        mx = -np.inf
        for p in range(g):
            b1 = m1[i] + l11[i] * gh_z[p]
            la = log_a0[i] + lam * b1
            for q in range(g):
                b2 = m2[i] + l21[i] * gh_z[p] + l22[i] * gh_z[q]
                k = lam * (bt + b2)
                v = gh_logw[p] + gh_logw[q]
                if yi > 0:
                    v -= math.exp(la + alpha * ly) * _chaz_factor1(alpha, k * yi, s, cw)
                if d[i] > 0:
                    v += lal + la + k * yi + (alpha - 1.0) * ly
                buf[p * g + q] = v
                if v > mx:
                    mx = v
        acc = 0.0
        for j in range(g * g):
            acc += math.exp(buf[j] - mx)
        out[i] = mx + math.log(acc)


def tl_integrated_os(alpha, log_a0, lam, bt, m1, m2, l11, l21, l22, y, d,
                     gh_z, gh_logw, nodes, weights):
    f = lambda v: np.ascontiguousarray(v, dtype=np.float64)  # noqa: E731
    out = np.empty(np.size(y))
    _tl_integrated_os(float(alpha), f(log_a0), float(lam), float(bt), f(m1), f(m2), f(l11),
                      f(l21), f(l22), f(y), f(d), f(gh_z), f(gh_logw), f(nodes), f(weights), out)
    return out
