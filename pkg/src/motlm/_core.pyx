# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Scalar C implementations of the hot special-function kernels, exposed
through array entry points with the same signatures as
:mod:`motlm._purekern`.  The algorithms are identical: series/continued
fraction incomplete gamma, mode-centered Poisson mixture for the
noncentral chi-squared, bracketed Newton for the gamma inverse CDF.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport (M_PI, erfc, exp, fabs, floor, fmax, fmin, isfinite,
                        lgamma, log, sqrt)

from .errors import NumericalError

cnp.import_array()

BACKEND = "compiled"

cdef double _EPS = 1e-16
cdef double _TINY = 1e-300
cdef int _MAX_ITER = 12000
cdef long _NCX2_MAX_TERMS = 200000


# ---------------------------------------------------------------- scalars

cdef double _digamma(double x) noexcept nogil:
    cdef double r = 0.0, inv, inv2, tail
    while x < 6.0:
        r -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 *
           (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0)))))
    return r + log(x) - 0.5 * inv - inv2 * tail


cdef double _trigamma(double x) noexcept nogil:
    cdef double r = 0.0, inv, inv2, tail
    while x < 10.0:
        r += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 1.0 + inv * (0.5 + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 *
           (1.0 / 42.0 - inv2 / 30.0))))
    return r + inv * tail


cdef double _p_series(double k, double x) noexcept nogil:
    cdef double ap = k, delt = 1.0 / k, s = 1.0 / k
    cdef int i
    for i in range(_MAX_ITER):
        ap += 1.0
        delt *= x / ap
        s += delt
        if fabs(delt) < fabs(s) * _EPS:
            break
    return s * exp(k * log(x) - x - lgamma(k))


cdef double _q_cf(double k, double x) noexcept nogil:
    cdef double b = x + 1.0 - k
    cdef double c = 1.0 / _TINY
    cdef double d = 1.0 / b if b != 0.0 else 1.0 / _TINY
    cdef double h = d, an, delt
    cdef int i
    for i in range(1, _MAX_ITER):
        an = -i * (i - k)
        b += 2.0
        d = an * d + b
        if fabs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if fabs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delt = d * c
        h *= delt
        if fabs(delt - 1.0) < _EPS:
            break
    return exp(k * log(x) - x - lgamma(k)) * h


cdef double _HUGE_SHAPE = 1e6


cdef double _p_wh(double k, double x) noexcept nogil:
    # Wilson-Hilferty cube-root approximation; series/CF need O(sqrt(k))
    # iterations near x ~ k, so huge shapes take this ~1e-7-accurate path.
    cdef double v = 2.0 / (9.0 * k)
    cdef double z = ((x / k) ** (1.0 / 3.0) - (1.0 - v)) / sqrt(v)
    return _normal_cdf(z)


cdef double _reg_p(double k, double x) noexcept nogil:
    if x <= 0.0:
        return 0.0
    if k > _HUGE_SHAPE:
        return _p_wh(k, x)
    if x < k + 1.0:
        return _p_series(k, x)
    return 1.0 - _q_cf(k, x)


cdef double _reg_q(double k, double x) noexcept nogil:
    if x <= 0.0:
        return 1.0
    if k > _HUGE_SHAPE:
        return 1.0 - _p_wh(k, x)
    if x < k + 1.0:
        return 1.0 - _p_series(k, x)
    return _q_cf(k, x)


cdef double _gamma_pdf(double k, double x) noexcept nogil:
    if x <= 0.0:
        if k == 1.0:
            return 1.0
        return 0.0 if k > 1.0 else 1.0 / 0.0
    return exp((k - 1.0) * log(x) - x - lgamma(k))


cdef double _normal_cdf(double z) noexcept nogil:
    return 0.5 * erfc(-z / sqrt(2.0))


cdef double _normal_pdf(double z) noexcept nogil:
    return exp(-0.5 * z * z) / sqrt(2.0 * M_PI)


cdef double _normal_inv(double u) noexcept nogil:
    cdef double q, r, x, e, ph
    if u < 0.02425:
        q = sqrt(-2.0 * log(u))
        x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
              - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
              + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
              + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    elif u <= 0.97575:
        q = u - 0.5
        r = q * q
        x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r
              - 2.759285104469687e+02) * r + 1.383577518672690e+02) * r
              - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
            (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r
              - 1.556989798598866e+02) * r + 6.680131188771972e+01) * r
              - 1.328068155288572e+01) * r + 1.0)
    else:
        q = sqrt(-2.0 * log(1.0 - u))
        x = -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
              - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
              + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
              + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    e = _normal_cdf(x) - u
    ph = _normal_pdf(x)
    if ph > 0.0:
        x = x - e / (ph + 0.5 * x * e)
    return x


cdef int _gamma_inv(double k, double u, double tol, double* out) noexcept nogil:
    cdef double z, t, x, lo, hi, f, df, xn
    cdef int i
    z = _normal_inv(u)
    t = 1.0 - 1.0 / (9.0 * k) + z / (3.0 * sqrt(k))
    if t > 0.0:
        x = k * t * t * t
    else:
        x = exp((log(u) + lgamma(k + 1.0)) / k)
    if not (x > 0.0 and isfinite(x)):
        x = 1e-8
    lo = 0.0
    hi = x
    while _reg_p(k, hi) < u:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            return -1
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for i in range(400):
        f = _reg_p(k, x) - u
        if f >= 0.0:
            hi = x
        else:
            lo = x
        if fabs(f) <= tol:
            out[0] = x
            return 0
        df = _gamma_pdf(k, x)
        if df > 0.0 and isfinite(df):
            xn = x - f / df
        else:
            xn = -1.0
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if fabs(xn - x) <= 1e-16 * fabs(x):
            out[0] = xn
            return 0
        x = xn
    return -2


cdef int _ncx2(double x, double a, double lam, double* cdf, double* pdf,
               double* pdf2) noexcept nogil:
    """Poisson-mixture noncentral chi-squared; a = dof/2, lam = nc/2."""
    cdef double z, s0, w0, c0, t0, v0, fc, fp, fp2, sumw, w, c, t, v, s, tprev
    cdef long it
    if x <= 0.0:
        cdf[0] = 0.0
        pdf[0] = 0.0
        pdf2[0] = 0.0
        return 0
    z = 0.5 * x
    if lam < 1e-300:
        cdf[0] = _reg_p(a, z)
        pdf[0] = 0.5 * _gamma_pdf(a, z)
        pdf2[0] = 0.5 * _gamma_pdf(a + 1.0, z)
        return 0
    s0 = floor(lam)
    w0 = exp(-lam + s0 * log(lam) - lgamma(s0 + 1.0))
    c0 = _reg_p(a + s0, z)
    t0 = exp((a + s0) * log(z) - z - lgamma(a + s0 + 1.0))
    v0 = t0 * (a + s0) / z
    fc = w0 * c0
    fp = w0 * 0.5 * v0
    fp2 = w0 * 0.5 * t0
    sumw = w0

    # Upward pass.  Beyond the Poisson mode the weights decay at least
    # geometrically with ratio r = lam/(s+2) < 1, and the mixed CDF terms
    # are <= c (nonincreasing), so the remaining mass is bounded by
    # w * r/(1-r) * c.  A weight that underflowed to zero kills every
    # remaining term exactly.
    cdef double r
    w = w0; c = c0; t = t0; s = s0
    for it in range(_NCX2_MAX_TERMS):
        c = fmax(c - t, 0.0)
        w = w * lam / (s + 1.0)
        tprev = t
        t = t * z / (a + s + 1.0)
        s += 1.0
        fc += w * c
        fp += w * 0.5 * tprev
        fp2 += w * 0.5 * t
        if w == 0.0:
            break
        if s + 2.0 > lam:
            r = lam / (s + 2.0)
            if w * (r / (1.0 - r)) * c < 1e-15:
                break
    else:
        return -1

    # Downward pass: s >= 0 terminates it; below the mode the weights
    # decay with ratio s/lam < 1 and the CDF terms are <= 1.
    w = w0; c = c0; t = t0; v = v0; s = s0
    while s > 0.0:
        c = fmin(c + v, 1.0)
        w = w * s / lam
        t = v
        v = v * (a + s - 1.0) / z
        s -= 1.0
        fc += w * c
        fp += w * 0.5 * v
        fp2 += w * 0.5 * t
        if w == 0.0:
            break
        if s < lam:
            r = s / lam
            if w * (r / (1.0 - r)) < 1e-15:
                break

    cdf[0] = fmin(fmax(fc, 0.0), 1.0)
    pdf[0] = fp
    pdf2[0] = fp2
    return 0


# ----------------------------------------------------------- array fronts

def lgamma_vec(x):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(xv.shape[0])
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        out[i] = lgamma(xv[i])
    return out.reshape(np.shape(x))


def digamma_vec(x):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(xv.shape[0])
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        out[i] = _digamma(xv[i])
    return out.reshape(np.shape(x))


def trigamma_vec(x):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(xv.shape[0])
    cdef Py_ssize_t i
    for i in range(xv.shape[0]):
        out[i] = _trigamma(xv[i])
    return out.reshape(np.shape(x))


def normal_cdf_vec(z):
    cdef cnp.ndarray[double, ndim=1] zv = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(zv.shape[0])
    cdef Py_ssize_t i
    for i in range(zv.shape[0]):
        out[i] = _normal_cdf(zv[i])
    return out.reshape(np.shape(z))


def normal_pdf_vec(z):
    cdef cnp.ndarray[double, ndim=1] zv = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(zv.shape[0])
    cdef Py_ssize_t i
    for i in range(zv.shape[0]):
        out[i] = _normal_pdf(zv[i])
    return out.reshape(np.shape(z))


def normal_inv_cdf_vec(u):
    cdef cnp.ndarray[double, ndim=1] uv = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty(uv.shape[0])
    cdef Py_ssize_t i
    for i in range(uv.shape[0]):
        out[i] = _normal_inv(uv[i])
    return out.reshape(np.shape(u))


cdef tuple _broadcast_pair(a, b):
    bc = np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                             np.asarray(b, dtype=np.float64))
    return (np.ascontiguousarray(bc[0]).ravel(),
            np.ascontiguousarray(bc[1]).ravel(),
            np.broadcast(np.asarray(a), np.asarray(b)).shape)


def reg_gamma_p_vec(k, x):
    kv, xv, shape = _broadcast_pair(k, x)
    cdef double[::1] kk = kv
    cdef double[::1] xx = xv
    cdef cnp.ndarray[double, ndim=1] out = np.empty(kk.shape[0])
    cdef Py_ssize_t i
    for i in range(kk.shape[0]):
        out[i] = _reg_p(kk[i], xx[i])
    return out.reshape(shape)


def reg_gamma_q_vec(k, x):
    kv, xv, shape = _broadcast_pair(k, x)
    cdef double[::1] kk = kv
    cdef double[::1] xx = xv
    cdef cnp.ndarray[double, ndim=1] out = np.empty(kk.shape[0])
    cdef Py_ssize_t i
    for i in range(kk.shape[0]):
        out[i] = _reg_q(kk[i], xx[i])
    return out.reshape(shape)


def gamma_pdf_std_vec(k, x):
    kv, xv, shape = _broadcast_pair(k, x)
    cdef double[::1] kk = kv
    cdef double[::1] xx = xv
    cdef cnp.ndarray[double, ndim=1] out = np.empty(kk.shape[0])
    cdef Py_ssize_t i
    for i in range(kk.shape[0]):
        out[i] = _gamma_pdf(kk[i], xx[i])
    return out.reshape(shape)


def reg_gamma_p_dk_vec(k, x, double h=1e-6):
    kv, xv, shape = _broadcast_pair(k, x)
    cdef double[::1] kk = kv
    cdef double[::1] xx = xv
    cdef cnp.ndarray[double, ndim=1] out = np.empty(kk.shape[0])
    cdef Py_ssize_t i
    cdef double step
    for i in range(kk.shape[0]):
        step = h * fmax(1.0, fabs(kk[i]))
        step = fmin(step, 0.5 * kk[i])
        out[i] = (_reg_p(kk[i] + step, xx[i]) - _reg_p(kk[i] - step, xx[i])) / (2.0 * step)
    return out.reshape(shape)


def gamma_inv_cdf_std_vec(k, u, double tol=1e-13):
    kv, uv, shape = _broadcast_pair(k, u)
    cdef double[::1] kk = kv
    cdef double[::1] uu = uv
    cdef cnp.ndarray[double, ndim=1] out = np.empty(kk.shape[0])
    cdef Py_ssize_t i
    cdef double res
    cdef int rc
    for i in range(kk.shape[0]):
        rc = _gamma_inv(kk[i], uu[i], tol, &res)
        if rc != 0:
            raise NumericalError(
                "gamma inverse CDF did not converge (k=%r, u=%r)" % (kk[i], uu[i]))
        out[i] = res
    return out.reshape(shape)


def ncx2_cdf_vec(x, d, nc):
    xv, nv, shape = _broadcast_pair(x, nc)
    cdef double[::1] xx = xv
    cdef double[::1] nn = nv
    cdef double a = 0.5 * <double> d
    cdef cnp.ndarray[double, ndim=1] out = np.empty(xx.shape[0])
    cdef Py_ssize_t i
    cdef double c, p, p2
    cdef int rc
    for i in range(xx.shape[0]):
        rc = _ncx2(xx[i], a, 0.5 * nn[i], &c, &p, &p2)
        if rc != 0:
            raise NumericalError(
                "noncentral chi-squared series exceeded term cap (x=%r, nc=%r)"
                % (xx[i], nn[i]))
        out[i] = c
    return out.reshape(shape)


def ncx2_cdf_grad_vec(x, d, nc):
    xv, nv, shape = _broadcast_pair(x, nc)
    cdef double[::1] xx = xv
    cdef double[::1] nn = nv
    cdef double a = 0.5 * <double> d
    cdef cnp.ndarray[double, ndim=1] oc = np.empty(xx.shape[0])
    cdef cnp.ndarray[double, ndim=1] op = np.empty(xx.shape[0])
    cdef cnp.ndarray[double, ndim=1] o2 = np.empty(xx.shape[0])
    cdef Py_ssize_t i
    cdef double c, p, p2
    cdef int rc
    for i in range(xx.shape[0]):
        rc = _ncx2(xx[i], a, 0.5 * nn[i], &c, &p, &p2)
        if rc != 0:
            raise NumericalError(
                "noncentral chi-squared series exceeded term cap (x=%r, nc=%r)"
                % (xx[i], nn[i]))
        oc[i] = c
        op[i] = p
        o2[i] = p2
    return oc.reshape(shape), op.reshape(shape), o2.reshape(shape)


def upsilon_block(int d, dist, double eps, beta, dbeta_dk=None, dbeta_dtau=None):
    """Mean noncentral chi-squared CDF over radius draws, with gradients.

    See the pure backend for the derivative algebra.  This version fuses
    the (example, draw) double loop in C.
    """
    cdef cnp.ndarray[double, ndim=1] dd = np.ascontiguousarray(dist, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] bb = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t m = dd.shape[0]
    cdef Py_ssize_t J = bb.shape[0]
    cdef double a = 0.5 * d
    cdef double inv_e2 = 1.0 / (eps * eps)
    cdef bint want_grad = dbeta_dk is not None
    cdef cnp.ndarray[double, ndim=1] xs = np.empty(J)
    cdef Py_ssize_t i, j
    for j in range(J):
        xs[j] = bb[j] * bb[j] * inv_e2

    cdef cnp.ndarray[double, ndim=1] ups = np.zeros(m)
    cdef cnp.ndarray[double, ndim=1] d_dist = np.zeros(m if want_grad else 0)
    cdef cnp.ndarray[double, ndim=1] d_eps = np.zeros(m if want_grad else 0)
    cdef cnp.ndarray[double, ndim=1] d_k = np.zeros(m if want_grad else 0)
    cdef cnp.ndarray[double, ndim=1] d_tau = np.zeros(m if want_grad else 0)
    cdef cnp.ndarray[double, ndim=1] dbk
    cdef cnp.ndarray[double, ndim=1] dbt
    if want_grad:
        dbk = np.ascontiguousarray(dbeta_dk, dtype=np.float64)
        dbt = np.ascontiguousarray(dbeta_dtau, dtype=np.float64)
    else:
        dbk = np.zeros(0)
        dbt = np.zeros(0)

    cdef double nc, lam, sc, sp, sp2, sk, st, se, c, p, p2, gb
    cdef int rc
    for i in range(m):
        nc = dd[i] * dd[i] * inv_e2
        lam = 0.5 * nc
        sc = 0.0; sp2 = 0.0; sk = 0.0; st = 0.0; se = 0.0
        for j in range(J):
            rc = _ncx2(xs[j], a, lam, &c, &p, &p2)
            if rc != 0:
                raise NumericalError(
                    "noncentral chi-squared series exceeded term cap "
                    "(x=%r, nc=%r)" % (xs[j], nc))
            sc += c
            if want_grad:
                sp2 += p2
                gb = p * 2.0 * bb[j] * inv_e2
                sk += gb * dbk[j]
                st += gb * dbt[j]
                se += p * xs[j] * (-2.0 / eps)
        ups[i] = sc / J
        if want_grad:
            d_k[i] = sk / J
            d_tau[i] = st / J
            d_dist[i] = (-sp2 / J) * (2.0 * dd[i] * inv_e2)
            d_eps[i] = se / J + (-sp2 / J) * (-2.0 * nc / eps)
    if want_grad:
        return ups, d_dist, d_eps, d_k, d_tau
    return ups
