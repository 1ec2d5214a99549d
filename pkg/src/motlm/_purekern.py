"""Pure-python/numpy kernel backend.

Implements the same numerical kernels as the compiled extension
(``motlm._core``), vectorized with numpy masks so that the fallback stays
usable on full training sets.  Every function takes and returns 1-D
contiguous float64 arrays; broadcasting and scalar convenience live in
the public wrappers (:mod:`motlm.specfn`).

Algorithms
----------
* regularized incomplete gamma: power series for ``x < k + 1``, modified
  Lentz continued fraction otherwise (the classical split).
* noncentral chi-squared CDF/PDF: Poisson mixture of central chi-squared
  terms expanded in both directions from the Poisson mode, with a
  bracketed tail bound below 1e-13.
* gamma inverse CDF: Wilson-Hilferty start, bracketed Newton.
"""

import math

import numpy as np

from .errors import NumericalError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 12000
_NCX2_MAX_TERMS = 200000

BACKEND = "pure"

# Lanczos (g=7, 9 terms) coefficients for log-gamma on arrays; the scalar
# public ln_gamma uses math.lgamma directly.
_LANCZOS_G = 7.0
_LANCZOS = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_LN_SQRT_2PI = 0.9189385332046727


def lgamma_vec(x):
    """Elementwise log-gamma for positive x (Lanczos approximation)."""
    x = np.asarray(x, dtype=np.float64)
    z = x - 1.0
    series = np.full_like(z, _LANCZOS[0])
    for i in range(1, 9):
        series = series + _LANCZOS[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    out = _LN_SQRT_2PI + (z + 0.5) * np.log(t) - t + np.log(series)
    # one recurrence step for small arguments keeps relative error ~1e-14
    small = x < 0.5
    if np.any(small):
        xs = x[small]
        out[small] = lgamma_vec(xs + 1.0) - np.log(xs)
    return out


def digamma_vec(x):
    """Elementwise digamma via upward recurrence + asymptotic series."""
    x = np.asarray(x, dtype=np.float64).copy()
    out = np.zeros_like(x)
    mask = x < 6.0
    while np.any(mask):
        out[mask] -= 1.0 / x[mask]
        x[mask] += 1.0
        mask = x < 6.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 1.0 / 12.0 - inv2 * (
        1.0 / 120.0
        - inv2
        * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))
    )
    return out + np.log(x) - 0.5 * inv - inv2 * tail


def trigamma_vec(x):
    """Elementwise trigamma (psi'); needed for Gamma-KL gradients."""
    x = np.asarray(x, dtype=np.float64).copy()
    out = np.zeros_like(x)
    mask = x < 10.0
    while np.any(mask):
        out[mask] += 1.0 / (x[mask] * x[mask])
        x[mask] += 1.0
        mask = x < 10.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 1.0 + inv * (0.5 + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0))))
    return out + inv * tail


def normal_cdf_vec(z):
    z = np.asarray(z, dtype=np.float64)
    flat = np.ravel(z)
    out = np.array([0.5 * math.erfc(-v / math.sqrt(2.0)) for v in flat])
    return out.reshape(z.shape)


def normal_pdf_vec(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation of the inverse normal CDF, refined by
# one Halley step with erfc, giving ~1 ulp of the true quantile.
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


def _normal_inv_scalar(u):
    a, b, c, d = _ACK_A, _ACK_B, _ACK_C, _ACK_D
    if u < 0.02425:
        q = math.sqrt(-2.0 * math.log(u))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif u <= 0.97575:
        q = u - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - u))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - u
    ph = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if ph > 0.0:
        x = x - e / (ph + 0.5 * x * e)
    return x


def normal_inv_cdf_vec(u):
    u = np.asarray(u, dtype=np.float64)
    return np.array([_normal_inv_scalar(v) for v in np.ravel(u)]).reshape(u.shape)


def _p_series_masked(k, x):
    """Lower regularized gamma by series; valid where x < k + 1."""
    ap = k.copy()
    delt = 1.0 / k
    s = delt.copy()
    active = np.ones(k.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        ap[active] += 1.0
        delt[active] *= x[active] / ap[active]
        s[active] += delt[active]
        active = active & (np.abs(delt) >= np.abs(s) * _EPS)
        if not active.any():
            break
    else:
        raise NumericalError("incomplete gamma series did not converge")
    return s * np.exp(k * np.log(x) - x - lgamma_vec(k))


def _q_cf_masked(k, x):
    """Upper regularized gamma by Lentz continued fraction; x >= k + 1."""
    b = x + 1.0 - k
    c = np.full(k.shape, 1.0 / _TINY)
    d = 1.0 / np.where(b != 0.0, b, _TINY)
    h = d.copy()
    active = np.ones(k.shape, dtype=bool)
    for i in range(1, _MAX_ITER):
        an = -i * (i - k)
        b += 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delt = d * c
        h = np.where(active, h * delt, h)
        active = active & (np.abs(delt - 1.0) >= _EPS)
        if not active.any():
            break
    else:
        raise NumericalError("incomplete gamma continued fraction did not converge")
    return np.exp(k * np.log(x) - x - lgamma_vec(k)) * h


_HUGE_SHAPE = 1e6


def _p_wh_masked(k, x):
    """Wilson-Hilferty cube-root normal approximation for huge shapes.

    Both the series and the continued fraction need O(sqrt(k))
    iterations near x ~ k; beyond shape 1e5 this approximation is
    accurate to ~1e-7 absolute, which only matters deep in noncentral
    chi-squared saturation regimes.
    """
    v = 2.0 / (9.0 * k)
    z = ((x / k) ** (1.0 / 3.0) - (1.0 - v)) / np.sqrt(v)
    return normal_cdf_vec(z)


def reg_gamma_p_vec(k, x):
    """Regularized lower incomplete gamma P(k, x), elementwise."""
    k = np.asarray(k, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(np.broadcast(k, x).shape)
    k, x = np.broadcast_arrays(k, x)
    pos = x > 0.0
    huge = pos & (k > _HUGE_SHAPE)
    ser = pos & ~huge & (x < k + 1.0)
    cf = pos & ~huge & ~ser
    if ser.any():
        out[ser] = _p_series_masked(k[ser].astype(float), x[ser].astype(float))
    if cf.any():
        out[cf] = 1.0 - _q_cf_masked(k[cf].astype(float), x[cf].astype(float))
    if huge.any():
        out[huge] = _p_wh_masked(k[huge].astype(float), x[huge].astype(float))
    return out


def reg_gamma_q_vec(k, x):
    """Regularized upper incomplete gamma Q(k, x) = 1 - P(k, x)."""
    k = np.asarray(k, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    out = np.ones(np.broadcast(k, x).shape)
    k, x = np.broadcast_arrays(k, x)
    pos = x > 0.0
    huge = pos & (k > _HUGE_SHAPE)
    ser = pos & ~huge & (x < k + 1.0)
    cf = pos & ~huge & ~ser
    if ser.any():
        out[ser] = 1.0 - _p_series_masked(k[ser].astype(float), x[ser].astype(float))
    if cf.any():
        out[cf] = _q_cf_masked(k[cf].astype(float), x[cf].astype(float))
    if huge.any():
        out[huge] = 1.0 - _p_wh_masked(k[huge].astype(float), x[huge].astype(float))
    return out


def gamma_pdf_std_vec(k, x):
    """Density of the unit-rate gamma: x^(k-1) e^(-x) / Gamma(k)."""
    k = np.asarray(k, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    k, x = np.broadcast_arrays(k, x)
    out = np.zeros(k.shape)
    pos = x > 0.0
    if pos.any():
        kk, xx = k[pos], x[pos]
        out[pos] = np.exp((kk - 1.0) * np.log(xx) - xx - lgamma_vec(kk))
    at0 = ~pos & (k == 1.0)
    out[at0] = 1.0
    return out


def reg_gamma_p_dk_vec(k, x, h=1e-6):
    """Central-difference partial of P(k, x) in the shape parameter."""
    k = np.asarray(k, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    k, x = np.broadcast_arrays(k, x)
    step = h * np.maximum(1.0, np.abs(k))
    step = np.minimum(step, 0.5 * k)  # keep k - step positive
    return (reg_gamma_p_vec(k + step, x) - reg_gamma_p_vec(k - step, x)) / (2.0 * step)


def gamma_inv_cdf_std_vec(k, u, tol=1e-13):
    """Solve P(k, x) = u for the unit-rate gamma, elementwise."""
    k = np.asarray(k, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    k, u = np.broadcast_arrays(k, u)
    out = np.empty(k.shape)
    flat_k = np.ravel(k)
    flat_u = np.ravel(u)
    flat_o = np.ravel(out)
    for i in range(flat_k.size):
        flat_o[i] = _gamma_inv_scalar(float(flat_k[i]), float(flat_u[i]), tol)
    return out


def _gamma_inv_scalar(k, u, tol=1e-13):
    z = _normal_inv_scalar(u)
    t = 1.0 - 1.0 / (9.0 * k) + z / (3.0 * math.sqrt(k))
    if t > 0.0:
        x = k * t * t * t
    else:
        x = math.exp((math.log(u) + math.lgamma(k + 1.0)) / k)
    if not (x > 0.0 and math.isfinite(x)):
        x = 1e-8
    lo = 0.0
    hi = x
    while _reg_p_scalar(k, hi) < u:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise NumericalError(
                f"gamma inverse CDF bracket expansion failed (k={k!r}, u={u!r})"
            )
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for _ in range(400):
        f = _reg_p_scalar(k, x) - u
        if f >= 0.0:
            hi = x
        else:
            lo = x
        if abs(f) <= tol:
            return x
        df = _gamma_pdf_scalar(k, x)
        xn = x - f / df if (df > 0.0 and math.isfinite(df)) else -1.0
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-16 * abs(x):
            return xn
        x = xn
    raise NumericalError(f"gamma inverse CDF did not converge (k={k!r}, u={u!r})")


def _reg_p_scalar(k, x):
    if x <= 0.0:
        return 0.0
    if k > _HUGE_SHAPE:
        v = 2.0 / (9.0 * k)
        z = ((x / k) ** (1.0 / 3.0) - (1.0 - v)) / math.sqrt(v)
        return 0.5 * math.erfc(-z / math.sqrt(2.0))
    if x < k + 1.0:
        ap = k
        delt = 1.0 / k
        s = delt
        for _ in range(_MAX_ITER):
            ap += 1.0
            delt *= x / ap
            s += delt
            if abs(delt) < abs(s) * _EPS:
                break
        return s * math.exp(k * math.log(x) - x - math.lgamma(k))
    return 1.0 - _q_cf_scalar(k, x)


def _q_cf_scalar(k, x):
    b = x + 1.0 - k
    c = 1.0 / _TINY
    d = 1.0 / b if b != 0.0 else 1.0 / _TINY
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - k)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delt = d * c
        h *= delt
        if abs(delt - 1.0) < _EPS:
            break
    return math.exp(k * math.log(x) - x - math.lgamma(k)) * h


def _gamma_pdf_scalar(k, x):
    if x <= 0.0:
        return 1.0 if k == 1.0 else (0.0 if k > 1.0 else math.inf)
    return math.exp((k - 1.0) * math.log(x) - x - math.lgamma(k))


def ncx2_cdf_vec(x, d, nc):
    """Noncentral chi-squared CDF with d degrees of freedom, elementwise."""
    return ncx2_cdf_grad_vec(x, d, nc)[0]


def ncx2_cdf_grad_vec(x, d, nc):
    """CDF, PDF, and PDF at d+2 dof of the noncentral chi-squared.

    The d+2 density equals -dCDF/d(noncentrality), which the training
    gradients need.  All three come from one Poisson-mixture expansion
    around the Poisson mode so the marginal cost of the extras is small.
    """
    x = np.asarray(x, dtype=np.float64)
    nc = np.asarray(nc, dtype=np.float64)
    x, nc = np.broadcast_arrays(x, nc)
    shape = x.shape
    x = np.ravel(x).astype(float)
    nc = np.ravel(nc).astype(float)
    cdf = np.zeros(x.size)
    pdf = np.zeros(x.size)
    pdf2 = np.zeros(x.size)

    a = 0.5 * d
    z = 0.5 * x
    lam = 0.5 * nc
    pos = x > 0.0

    central = pos & (lam < 1e-300)
    if central.any():
        zc = z[central]
        cdf[central] = reg_gamma_p_vec(np.full(zc.shape, a), zc)
        pdf[central] = 0.5 * gamma_pdf_std_vec(np.full(zc.shape, a), zc)
        pdf2[central] = 0.5 * gamma_pdf_std_vec(np.full(zc.shape, a + 1.0), zc)

    m = pos & ~central
    if m.any():
        zm = z[m]
        lm = lam[m]
        s0 = np.floor(lm)
        w0 = np.exp(-lm + s0 * np.log(lm) - lgamma_vec(s0 + 1.0))
        c0 = reg_gamma_p_vec(a + s0, zm)
        t0 = np.exp((a + s0) * np.log(zm) - zm - lgamma_vec(a + s0 + 1.0))
        v0 = t0 * (a + s0) / zm
        fc = w0 * c0
        fp = w0 * 0.5 * v0
        fp2 = w0 * 0.5 * t0
        sumw = w0.copy()

        # Upward pass.  Beyond the Poisson mode the weights decay at
        # least geometrically with ratio r = lam/(s+2) < 1 and the CDF
        # terms are <= c (nonincreasing), so the remaining mass is
        # bounded by w * r/(1-r) * c; an underflowed weight kills every
        # remaining term exactly.
        w, c, t = w0.copy(), c0.copy(), t0.copy()
        s = s0.copy()
        act = np.ones(zm.shape, dtype=bool)
        for _ in range(_NCX2_MAX_TERMS):
            c = np.where(act, np.maximum(c - t, 0.0), c)
            w = np.where(act, w * lm / (s + 1.0), w)
            tprev = t
            t = np.where(act, t * zm / (a + s + 1.0), t)
            s = np.where(act, s + 1.0, s)
            fc += np.where(act, w * c, 0.0)
            fp += np.where(act, w * 0.5 * tprev, 0.0)
            fp2 += np.where(act, w * 0.5 * t, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                r = lm / (s + 2.0)
                tail = np.where(s + 2.0 > lm, w * (r / (1.0 - r)) * c, np.inf)
            act = act & (w > 0.0) & (tail >= 1e-15)
            if not act.any():
                break
        else:
            raise NumericalError("noncentral chi-squared upward series exceeded term cap")

        # Downward pass: s >= 0 terminates it; below the mode the
        # weights decay with ratio s/lam < 1 and the CDF terms are <= 1.
        w, c, t, v = w0.copy(), c0.copy(), t0.copy(), v0.copy()
        s = s0.copy()
        act = s > 0.0
        while act.any():
            c = np.where(act, np.minimum(c + v, 1.0), c)
            w = np.where(act, w * s / lm, w)
            t = np.where(act, v, t)
            v = np.where(act, v * (a + s - 1.0) / zm, v)
            s = np.where(act, s - 1.0, s)
            fc += np.where(act, w * c, 0.0)
            fp += np.where(act, w * 0.5 * v, 0.0)
            fp2 += np.where(act, w * 0.5 * t, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                r = s / lm
                tail = np.where(s < lm, w * (r / (1.0 - r)), np.inf)
            act = act & (s > 0.0) & (w > 0.0) & (tail >= 1e-15)

        cdf[m] = fc
        pdf[m] = fp
        pdf2[m] = fp2

    np.clip(cdf, 0.0, 1.0, out=cdf)
    return cdf.reshape(shape), pdf.reshape(shape), pdf2.reshape(shape)


def upsilon_block(d, dist, eps, beta, dbeta_dk=None, dbeta_dtau=None):
    """Locality-membership probability and its parameter gradients.

    Averages the noncentral chi-squared CDF P(beta_j^2/eps^2; d,
    dist_i^2/eps^2) over the fixed radius draws ``beta``.  When the
    derivative arrays are given, also returns the partials with respect
    to (dist, eps, k, tau), using dCDF/dx = pdf and dCDF/dnc = -pdf2.
    """
    dist = np.asarray(dist, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    m = dist.size
    J = beta.size
    inv_e2 = 1.0 / (eps * eps)
    xs = beta * beta * inv_e2            # (J,)
    ncs = dist * dist * inv_e2           # (m,)
    X = np.broadcast_to(xs, (m, J))
    NC = np.broadcast_to(ncs[:, None], (m, J))
    want_grad = dbeta_dk is not None
    if not want_grad:
        cdf = ncx2_cdf_vec(X, d, NC)
        return cdf.mean(axis=1)
    cdf, pdf, pdf2 = ncx2_cdf_grad_vec(X, d, NC)
    ups = cdf.mean(axis=1)
    dU_dx = pdf                           # (m, J)
    dU_dnc = -pdf2.mean(axis=1)           # (m,)
    g_beta = dU_dx * (2.0 * beta * inv_e2)         # dU/dbeta_j per (i, j)
    d_k = g_beta @ np.asarray(dbeta_dk, dtype=np.float64) / J
    d_tau = g_beta @ np.asarray(dbeta_dtau, dtype=np.float64) / J
    d_dist = dU_dnc * (2.0 * dist * inv_e2)
    d_eps = (pdf @ (xs * (-2.0 / eps))) / J + dU_dnc * (-2.0 * ncs / eps)
    return ups, d_dist, d_eps, d_k, d_tau
