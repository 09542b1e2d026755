"""Pure-numpy reference kernels (the fallback backend).

Every function here has a twin in ``_kernels_nb`` with an identical
signature; the test-suite checks that the two agree.
"""

import numpy as np


def weibull_logterms(alpha, logb, y, d):
    """Per-subject ``d*log h(y) - H(y)`` for ``h = alpha*b*t**(alpha-1)``."""
    y = np.asarray(y, dtype=float)
    logy = np.log(np.where(y > 0, y, 1.0))
    ev = np.where(d > 0, np.log(alpha) + logb + (alpha - 1.0) * logy, 0.0)
    return ev - np.exp(logb + alpha * logy) * (y > 0)


def tl_chaz_factor(alpha, x, nodes, weights):
    """``I(x) = int_0^1 alpha*s**(alpha-1)*exp(x*s) ds``, via ``s = w**(3/alpha)``.

    With that substitution the integrand is ``3*w**2*exp(x*w**(3/alpha))``.
    The cumulative hazard of the target-lesion model is ``A*y**alpha*I(k*y)``.
    """
    x = np.asarray(x, dtype=float)
    s = nodes ** (3.0 / alpha)
    cw = 3.0 * weights * nodes * nodes
    return np.exp(x[..., None] * s) @ cw


def clayton_logterms(ha, hb, lha, lhb, da, db, eta):
    """Log-likelihood of censored pairs under a Clayton survival copula.

    ``ha``/``hb`` are the marginal cumulative hazards at the observed times,
    ``lha``/``lhb`` the log hazards. The joint survival is
    ``(S_a**-eta + S_b**-eta - 1)**(-1/eta)``; every case is written in terms
    of ``D = log(exp(eta*ha) + exp(eta*hb) - 1)`` to avoid cancellation.
    """
    a = eta * ha
    b = eta * hb
    m = np.maximum(a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        small = np.log1p(np.expm1(a) + np.expm1(b))
        big = m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))
    D = np.where(m > 1.0, big, small)
    inv = 1.0 / eta
    both = np.log1p(eta) + a + b - (2.0 + inv) * D + lha + lhb
    a_only = a - (1.0 + inv) * D + lha
    b_only = b - (1.0 + inv) * D + lhb
    none = -inv * D
    da = da > 0
    db = db > 0
    return np.where(da, np.where(db, both, a_only), np.where(db, b_only, none))


def _tl_chaz(loga, alpha, k, t, nodes, weights):
    tp = np.exp(alpha * np.log(np.maximum(t, 1e-300)))
    return np.exp(loga) * tp * tl_chaz_factor(alpha, k * t, nodes, weights) * (t > 0)


def tl_ppd_solve(loga, alpha, k, c, e, cap, nodes, weights):
    """Solve ``H(T) - H(c) = e`` for ``T`` in ``(c, cap]``.

    ``H(t) = exp(loga)*t**alpha*I(k*t)``. Returns ``(T, capped)``; ``capped``
    marks subjects whose target cumulative hazard is not reached by ``cap``.
    Safeguarded Newton: bisection whenever the Newton step leaves the bracket.
    """
    loga = np.asarray(loga, dtype=float).ravel()
    k = np.broadcast_to(np.asarray(k, dtype=float), loga.shape).ravel()
    c = np.broadcast_to(np.asarray(c, dtype=float), loga.shape).ravel()
    e = np.asarray(e, dtype=float).ravel()
    out = np.empty(loga.size)
    capped = np.zeros(loga.size, dtype=bool)
    chunk = 65536
    for s0 in range(0, loga.size, chunk):
        sl = slice(s0, s0 + chunk)
        t, f = _solve_block(loga[sl], alpha, k[sl], c[sl], e[sl], cap, nodes, weights)
        out[sl] = t
        capped[sl] = f
    return out, capped


def _solve_block(loga, alpha, k, c, e, cap, nodes, weights):
    target = _tl_chaz(loga, alpha, k, c, nodes, weights) + e
    h_cap = _tl_chaz(loga, alpha, k, np.full_like(c, cap), nodes, weights)
    capped = h_cap < target
    lo = c.copy()
    hi = np.full_like(c, cap)
    guess = (c**alpha + e / np.exp(loga)) ** (1.0 / alpha)
    t = np.where((guess > lo) & (guess < hi), guess, 0.5 * (lo + hi))
    active = ~capped
    for _ in range(200):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        ti = t[idx]
        f = _tl_chaz(loga[idx], alpha, k[idx], ti, nodes, weights) - target[idx]
        lo[idx] = np.where(f <= 0, ti, lo[idx])
        hi[idx] = np.where(f > 0, ti, hi[idx])
        logh = np.log(alpha) + loga[idx] + (alpha - 1.0) * np.log(ti) + k[idx] * ti
        step = f / np.exp(logh)
        tn = ti - step
        bad = ~((tn > lo[idx]) & (tn < hi[idx]) & np.isfinite(tn))
        tn = np.where(bad, 0.5 * (lo[idx] + hi[idx]), tn)
        done = (np.abs(tn - ti) <= 1e-12 * ti) | (hi[idx] - lo[idx] <= 1e-12 * hi[idx])
        t[idx] = tn
        active[idx[done]] = False
    t = np.where(capped, cap, t)
    return np.maximum(t, np.nextafter(c, np.inf)), capped


def tl_integrated_os(alpha, log_a0, lam, bt, m1, m2, l11, l21, l22, y, d,
                     gh_z, gh_logw, nodes, weights):
    """Per-subject log of ``E_b[L_OS(b)]`` with ``b ~ N(m, L L')``.

    Used for model averaging: the OS likelihood of the target-lesion model
    given the lesion data, with the subject's random effects integrated out.
    """
    z1 = gh_z[:, None]
    z2 = gh_z[None, :]
    lw = (gh_logw[:, None] + gh_logw[None, :]).ravel()
    b1 = np.repeat(m1[:, None] + l11[:, None] * gh_z, gh_z.size, axis=1)
    b2 = (m2[:, None, None] + l21[:, None, None] * z1 + l22[:, None, None] * z2).reshape(m1.size, -1)
    y_ = y[:, None]
    logy = np.log(np.where(y_ > 0, y_, 1.0))
    k = lam * (bt + b2)
    la = log_a0[:, None] + lam * b1
    H = np.exp(la + alpha * logy) * tl_chaz_factor(alpha, k * y_, nodes, weights) * (y_ > 0)
    ev = np.where(d[:, None] > 0, np.log(alpha) + la + k * y_ + (alpha - 1.0) * logy, 0.0)
    ll = ev - H + lw
    mx = np.max(ll, axis=1)
    return mx + np.log(np.sum(np.exp(ll - mx[:, None]), axis=1))
