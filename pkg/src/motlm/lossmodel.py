"""Vicinity function, posterior losses, and empirical risk.

Per-example closed forms
------------------------
Classification (labels in {-1, +1}), membership probability M_i:

    loss = sum_i M_i * (1 - Phi(y (<w_i, x> + mu_i) / sqrt(sigma_i^2 + ||x||^2)))
         + prod_i (1 - M_i) * (1 - Phi(y (<w_ext, x> + mu_ext) / sqrt(sigma_ext^2 + ||x||^2)))

Regression (squared loss):

    loss = sum_i M_i * (||x||^2 rho_i^2 + sigma_i^2 + (<w_i, x> + mu_i - y)^2)
         + prod_i (1 - M_i) * (||x||^2 rho_ext^2 + sigma_ext^2 + (<w_ext, x> + mu_ext - y)^2)

With known centers the membership probability is the Gamma survival
Theta = Q(k_i, tau_i ||c_i - x||); with trainable Gaussian centers it is
Upsilon, the quadrature average of the noncentral chi-squared CDF over
the radius posterior.

The batch engine at the bottom evaluates whole datasets at once and
optionally the gradient of the mean loss in the natural parameters; the
objective module builds on it.
"""

from dataclasses import dataclass

import math

import numpy as np

from .backend import kernels
from .distrib import CLASSIFICATION, REGRESSION, MixtureParams
from .errors import ContractError, DomainError
from .specfn import QmcPoints, clamp_probability

__all__ = [
    "Example",
    "MetricKind",
    "EUCLIDEAN",
    "vicinity",
    "q_loss_clf_known",
    "q_loss_reg_known",
    "q_loss_clf_unknown",
    "q_loss_reg_unknown",
    "empirical_risk",
]


@dataclass(frozen=True)
class Example:
    """One observation: feature vector and label."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        v = np.asarray(self.x, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ContractError("Example.x must be a finite 1-D vector")
        if not math.isfinite(self.y):
            raise ContractError("Example.y must be finite")
        object.__setattr__(self, "x", v)


@dataclass(frozen=True)
class MetricKind:
    """Distance metric tag; trainable centers require the Euclidean one."""

    tag: str = "euclidean"

    def __post_init__(self):
        if self.tag != "euclidean":
            raise DomainError(f"unsupported metric {self.tag!r}")

    def distance(self, a, b):
        diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        return float(np.sqrt(diff @ diff))


EUCLIDEAN = MetricKind("euclidean")


def vicinity(c, x, beta, metric=EUCLIDEAN):
    """Hard indicator that x lies within distance beta of c."""
    c = np.asarray(c, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if c.shape != x.shape:
        raise ContractError("vicinity: dimension mismatch between c and x")
    if beta < 0.0:
        raise DomainError("vicinity radius must be nonnegative")
    return 1 if metric.distance(c, x) <= beta else 0


# -------------------------------------------------- struct-of-arrays view


class _Arrays:
    """Numeric view of MixtureParams for batch evaluation."""

    __slots__ = ("task", "centers_known", "n", "d", "W", "mu", "sigma", "kk",
                 "tt", "C", "eps", "rho", "w_ext", "mu_ext", "sigma_ext", "rho_ext")

    def __init__(self, params: MixtureParams):
        self.task = params.task
        self.centers_known = params.centers_known
        self.n = params.n_localities
        self.d = params.dim
        n, d = self.n, self.d
        self.W = np.zeros((n, d))
        self.mu = np.zeros(n)
        self.sigma = np.ones(n)
        self.kk = np.ones(n)
        self.tt = np.ones(n)
        self.C = np.zeros((n, d))
        self.eps = np.ones(n) if not params.centers_known else None
        self.rho = np.ones(n) if params.task == REGRESSION else None
        centers = params.centers()
        for i, loc in enumerate(params.localities):
            self.W[i] = loc.weights
            self.mu[i] = loc.bias_mean
            self.sigma[i] = loc.bias_std
            self.kk[i] = loc.shape
            self.tt[i] = loc.rate
            self.C[i] = centers[i]
            if self.eps is not None:
                self.eps[i] = loc.center_std
            if self.rho is not None:
                self.rho[i] = loc.weight_std
        ext = params.external
        self.w_ext = np.asarray(ext.weights, dtype=np.float64)
        self.mu_ext = float(ext.bias_mean)
        self.sigma_ext = float(ext.bias_std)
        self.rho_ext = float(ext.weight_std) if ext.weight_std is not None else None


class _Grads:
    """Gradient accumulators in the natural parameters; mirrors _Arrays."""

    __slots__ = ("W", "mu", "sigma", "kk", "tt", "C", "eps", "rho",
                 "w_ext", "mu_ext", "sigma_ext", "rho_ext")

    def __init__(self, arr: _Arrays):
        n, d = arr.n, arr.d
        self.W = np.zeros((n, d))
        self.mu = np.zeros(n)
        self.sigma = np.zeros(n)
        self.kk = np.zeros(n)
        self.tt = np.zeros(n)
        self.C = np.zeros((n, d)) if not arr.centers_known else None
        self.eps = np.zeros(n) if not arr.centers_known else None
        self.rho = np.zeros(n) if arr.rho is not None else None
        self.w_ext = np.zeros(d)
        self.mu_ext = 0.0
        self.sigma_ext = 0.0
        self.rho_ext = 0.0 if arr.rho_ext is not None else None


def _distances(X, C):
    """Euclidean distances, shape (m, n)."""
    if C.shape[0] == 0:
        return np.zeros((X.shape[0], 0))
    sq = np.maximum(
        (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :],
        0.0,
    )
    return np.sqrt(sq)


def _membership(arr, T, qmc, want_grad):
    """Membership probabilities M (m, n) and their parameter partials."""
    m, n = T.shape
    M = np.empty((m, n))
    parts = None
    if arr.centers_known:
        dk = np.empty((m, n)) if want_grad else None
        dtau = np.empty((m, n)) if want_grad else None
        for i in range(n):
            xti = arr.tt[i] * T[:, i]
            M[:, i] = kernels.reg_gamma_q_vec(np.full(m, arr.kk[i]), xti)
            if want_grad:
                dk[:, i] = -kernels.reg_gamma_p_dk_vec(np.full(m, arr.kk[i]), xti)
                pdf = kernels.gamma_pdf_std_vec(np.full(m, arr.kk[i]), xti)
                dtau[:, i] = np.where(T[:, i] > 0.0, -T[:, i] * pdf, 0.0)
        if want_grad:
            parts = {"dk": dk, "dtau": dtau}
    else:
        u = qmc.as_array()
        J = u.size
        dk = np.empty((m, n)) if want_grad else None
        dtau = np.empty((m, n)) if want_grad else None
        ddist = np.empty((m, n)) if want_grad else None
        deps = np.empty((m, n)) if want_grad else None
        for i in range(n):
            kfull = np.full(J, arr.kk[i])
            g = kernels.gamma_inv_cdf_std_vec(kfull, u)
            beta = g / arr.tt[i]
            if want_grad:
                pdf = kernels.gamma_pdf_std_vec(kfull, g)
                dPk = kernels.reg_gamma_p_dk_vec(kfull, g)
                dbk = np.where(pdf > 1e-290, -dPk / (arr.tt[i] * pdf), 0.0)
                dbt = -beta / arr.tt[i]
                ups, dd, de, dkk, dtt = kernels.upsilon_block(
                    arr.d, np.ascontiguousarray(T[:, i]), float(arr.eps[i]),
                    beta, dbk, dbt)
                M[:, i] = ups
                ddist[:, i] = dd
                deps[:, i] = de
                dk[:, i] = dkk
                dtau[:, i] = dtt
            else:
                M[:, i] = kernels.upsilon_block(
                    arr.d, np.ascontiguousarray(T[:, i]), float(arr.eps[i]), beta)
        if want_grad:
            parts = {"dk": dk, "dtau": dtau, "ddist": ddist, "deps": deps}
    return clamp_probability(M), parts


def _products(M):
    """prod_i (1 - M_i) and the leave-one-out products, stably."""
    B = 1.0 - M
    m, n = B.shape
    if n == 0:
        ones = np.ones(m)
        return ones, np.ones((m, 0))
    pre = np.concatenate([np.ones((m, 1)), np.cumprod(B, axis=1)[:, :-1]], axis=1)
    suf = np.concatenate(
        [np.cumprod(B[:, ::-1], axis=1)[:, ::-1][:, 1:], np.ones((m, 1))], axis=1
    )
    return pre[:, -1] * B[:, -1], pre * suf


def batch_value_and_grad(arr, X, y, qmc=None, want_grad=False):
    """Per-example losses and, optionally, the gradient of their mean.

    Gradients come back in the natural parameters (not log space) as a
    :class:`_Grads`; the objective module applies the chain rule for the
    log reparameterization.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = X.shape[0]
    n = arr.n
    if not arr.centers_known and qmc is None:
        raise ContractError("unknown-centers losses need QMC abscissae")
    if arr.task == CLASSIFICATION and m and not np.all(np.abs(y) == 1.0):
        raise ContractError("classification labels must be exactly +/-1")

    r2 = (X * X).sum(axis=1)
    T = _distances(X, arr.C)
    M, parts = _membership(arr, T, qmc, want_grad)
    Pall, Pminus = _products(M)

    if arr.task == CLASSIFICATION:
        S2 = arr.sigma[None, :] ** 2 + r2[:, None]
        S = np.sqrt(S2)
        raw = X @ arr.W.T + arr.mu[None, :]
        Z = y[:, None] * raw / S
        A = 1.0 - kernels.normal_cdf_vec(Z)
        s2e = arr.sigma_ext ** 2 + r2
        se = np.sqrt(s2e)
        ze = y * (X @ arr.w_ext + arr.mu_ext) / se
        Ae = 1.0 - kernels.normal_cdf_vec(ze)
        per_loc = A
        per_ext = Ae
    else:
        resid = X @ arr.W.T + arr.mu[None, :] - y[:, None]
        per_loc = r2[:, None] * arr.rho[None, :] ** 2 + arr.sigma[None, :] ** 2 + resid ** 2
        resid_e = X @ arr.w_ext + arr.mu_ext - y
        per_ext = r2 * arr.rho_ext ** 2 + arr.sigma_ext ** 2 + resid_e ** 2

    losses = (M * per_loc).sum(axis=1) + Pall * per_ext
    if not want_grad:
        return losses, None

    g = _Grads(arr)
    inv_m = 1.0 / m
    dM = per_loc - Pminus * per_ext[:, None]      # dloss/dM_i, (m, n)

    if arr.task == CLASSIFICATION:
        phi = kernels.normal_pdf_vec(Z)
        dZ = -M * phi                              # dloss/dZ_i
        coefW = dZ * y[:, None] / S
        g.W[:] = inv_m * (coefW.T @ X)
        g.mu[:] = inv_m * coefW.sum(axis=0)
        g.sigma[:] = inv_m * (dZ * (-Z) * arr.sigma[None, :] / S2).sum(axis=0)
        phie = kernels.normal_pdf_vec(ze)
        dZe = -Pall * phie
        coefE = dZe * y / se
        g.w_ext[:] = inv_m * (coefE @ X)
        g.mu_ext = inv_m * coefE.sum()
        g.sigma_ext = inv_m * float((dZe * (-ze) * arr.sigma_ext / s2e).sum())
    else:
        coefW = M * 2.0 * resid
        g.W[:] = inv_m * (coefW.T @ X)
        g.mu[:] = inv_m * coefW.sum(axis=0)
        g.sigma[:] = inv_m * M.sum(axis=0) * 2.0 * arr.sigma
        g.rho[:] = inv_m * (M * r2[:, None]).sum(axis=0) * 2.0 * arr.rho
        g.w_ext[:] = inv_m * ((Pall * 2.0 * resid_e) @ X)
        g.mu_ext = inv_m * float((Pall * 2.0 * resid_e).sum())
        g.sigma_ext = inv_m * float(Pall.sum()) * 2.0 * arr.sigma_ext
        g.rho_ext = inv_m * float((Pall * r2).sum()) * 2.0 * arr.rho_ext

    g.kk[:] = inv_m * (dM * parts["dk"]).sum(axis=0)
    g.tt[:] = inv_m * (dM * parts["dtau"]).sum(axis=0)
    if not arr.centers_known:
        g.eps[:] = inv_m * (dM * parts["deps"]).sum(axis=0)
        coefD = dM * parts["ddist"]
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(T > 0.0, coefD / T, 0.0)
        # d dist/d c0 = (c0 - x)/dist
        g.C[:] = inv_m * (w.sum(axis=0)[:, None] * arr.C - w.T @ X)
    return losses, g


def _batch_from_examples(data):
    if len(data) == 0:
        raise ContractError("empirical risk needs at least one example")
    X = np.stack([ex.x for ex in data])
    y = np.array([ex.y for ex in data], dtype=np.float64)
    return X, y


def _single(params, ex, qmc=None, task=None, centers_known=None):
    if task is not None and params.task != task:
        raise ContractError(f"loss variant requires task={task!r}")
    if centers_known is not None and params.centers_known != centers_known:
        raise ContractError("loss variant does not match params.centers_known")
    arr = _Arrays(params)
    losses, _ = batch_value_and_grad(arr, ex.x[None, :], np.array([ex.y]), qmc)
    return float(losses[0])


def q_loss_clf_known(params, ex):
    """Posterior classification loss with fixed centers."""
    return _single(params, ex, task=CLASSIFICATION, centers_known=True)


def q_loss_reg_known(params, ex):
    """Posterior squared-loss with fixed centers."""
    return _single(params, ex, task=REGRESSION, centers_known=True)


def q_loss_clf_unknown(params, ex, qmc: QmcPoints):
    """Posterior classification loss with Gaussian trainable centers."""
    return _single(params, ex, qmc, task=CLASSIFICATION, centers_known=False)


def q_loss_reg_unknown(params, ex, qmc: QmcPoints):
    """Posterior squared-loss with Gaussian trainable centers."""
    return _single(params, ex, qmc, task=REGRESSION, centers_known=False)


def empirical_risk(params, data, qmc=None):
    """Mean posterior loss over the sample.

    numpy's pairwise summation keeps the reduction order fixed, so the
    value is bit-stable no matter how the caller schedules work.
    """
    X, y = _batch_from_examples(data)
    arr = _Arrays(params)
    losses, _ = batch_value_and_grad(arr, X, y, qmc)
    return float(np.sum(losses) / len(data))
