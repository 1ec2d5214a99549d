"""Training objective: empirical risk + KL/lambda, with its gradient.

The optimizer works on a flat vector.  Positive parameters (sigma, rho,
eps, k, tau) are stored as logarithms so the search is unconstrained;
weights, biases, and centers are stored directly.  Gradients are
analytic throughout except for two places where the regularized
incomplete gamma is differentiated in its shape parameter by a central
difference (step 1e-6), which is itself deterministic and smooth.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .distrib import (CLASSIFICATION, REGRESSION, ExternalPosterior,
                      LocalityPosterior, MixtureParams, PriorSpec)
from .errors import ContractError, NumericalError
from .lossmodel import _Arrays, _batch_from_examples, batch_value_and_grad

__all__ = ["Layout", "FreeVector", "objective_value", "objective_gradient",
           "objective_value_and_grad"]


@dataclass(frozen=True)
class Layout:
    """Maps slices of the flat vector to mixture parameters.

    Per locality: w (d), mu, log sigma, log k, log tau, then the
    trainable center block (c0 (d), log eps) when centers are unknown,
    then log rho in regression mode.  The external block mirrors it
    without center or radius entries.
    """

    n: int
    d: int
    task: str
    centers_known: bool
    fixed_centers: tuple = field(default=())

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ContractError(f"unknown task {self.task!r}")
        if self.n < 0 or self.d < 1:
            raise ContractError("need n >= 0 localities and d >= 1 features")
        if self.centers_known:
            fc = tuple(np.asarray(c, dtype=np.float64) for c in self.fixed_centers)
            if len(fc) != self.n:
                raise ContractError("fixed_centers count must equal n")
            for c in fc:
                if c.shape != (self.d,):
                    raise ContractError("fixed_centers dimension mismatch")
            object.__setattr__(self, "fixed_centers", fc)
        elif self.fixed_centers:
            raise ContractError("fixed_centers given but centers are trainable")

    @property
    def regression(self):
        return self.task == REGRESSION

    @property
    def loc_block(self):
        base = self.d + 4                       # w, mu, log sigma, log k, log tau
        if not self.centers_known:
            base += self.d + 1                  # c0, log eps
        if self.regression:
            base += 1                           # log rho
        return base

    @property
    def ext_block(self):
        return self.d + 2 + (1 if self.regression else 0)

    @property
    def size(self):
        return self.n * self.loc_block + self.ext_block

    def coordinate_names(self):
        names = []
        for i in range(self.n):
            names += [f"w[{i}][{j}]" for j in range(self.d)]
            names += [f"mu[{i}]", f"log_sigma[{i}]", f"log_k[{i}]", f"log_tau[{i}]"]
            if not self.centers_known:
                names += [f"c0[{i}][{j}]" for j in range(self.d)]
                names += [f"log_eps[{i}]"]
            if self.regression:
                names += [f"log_rho[{i}]"]
        names += [f"w_ext[{j}]" for j in range(self.d)]
        names += ["mu_ext", "log_sigma_ext"]
        if self.regression:
            names += ["log_rho_ext"]
        return names

    # ------------------------------------------------------- conversions

    def unpack(self, values):
        """Flat vector -> MixtureParams (positives through exp)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.size,):
            raise ContractError(f"expected a vector of length {self.size}")
        d = self.d
        pos = 0
        locs = []
        for i in range(self.n):
            w = values[pos:pos + d]; pos += d
            mu = values[pos]; pos += 1
            sigma = math.exp(values[pos]); pos += 1
            k = math.exp(values[pos]); pos += 1
            tau = math.exp(values[pos]); pos += 1
            c0 = eps = None
            if not self.centers_known:
                c0 = values[pos:pos + d]; pos += d
                eps = math.exp(values[pos]); pos += 1
            rho = None
            if self.regression:
                rho = math.exp(values[pos]); pos += 1
            locs.append(LocalityPosterior(
                weights=w.copy(), bias_mean=float(mu), bias_std=sigma,
                shape=k, rate=tau,
                center_mean=None if c0 is None else c0.copy(),
                center_std=eps, weight_std=rho))
        w = values[pos:pos + d]; pos += d
        mu = values[pos]; pos += 1
        sigma = math.exp(values[pos]); pos += 1
        rho = None
        if self.regression:
            rho = math.exp(values[pos]); pos += 1
        ext = ExternalPosterior(weights=w.copy(), bias_mean=float(mu),
                                bias_std=sigma, weight_std=rho)
        return MixtureParams(localities=tuple(locs), external=ext, task=self.task,
                             centers_known=self.centers_known,
                             fixed_centers=self.fixed_centers)

    def pack(self, params: MixtureParams):
        """MixtureParams -> flat vector (positives through log)."""
        if (params.task != self.task or params.centers_known != self.centers_known
                or params.n_localities != self.n or params.dim != self.d):
            raise ContractError("params do not match this layout")
        out = np.empty(self.size)
        pos = 0
        for loc in params.localities:
            out[pos:pos + self.d] = loc.weights; pos += self.d
            out[pos] = loc.bias_mean; pos += 1
            out[pos] = math.log(loc.bias_std); pos += 1
            out[pos] = math.log(loc.shape); pos += 1
            out[pos] = math.log(loc.rate); pos += 1
            if not self.centers_known:
                out[pos:pos + self.d] = loc.center_mean; pos += self.d
                out[pos] = math.log(loc.center_std); pos += 1
            if self.regression:
                out[pos] = math.log(loc.weight_std); pos += 1
        ext = params.external
        out[pos:pos + self.d] = ext.weights; pos += self.d
        out[pos] = ext.bias_mean; pos += 1
        out[pos] = math.log(ext.bias_std); pos += 1
        if self.regression:
            out[pos] = math.log(ext.weight_std); pos += 1
        return out


@dataclass(frozen=True)
class FreeVector:
    """Optimizer-facing state: flat values plus their layout."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.layout.size,):
            raise ContractError("FreeVector length does not match layout")
        object.__setattr__(self, "values", v)

    def to_params(self):
        return self.layout.unpack(self.values)

    @classmethod
    def from_params(cls, params, layout):
        return cls(values=layout.pack(params), layout=layout)


# ------------------------------------------------------------ KL (fused)


def _kl_value_and_grad(arr: _Arrays, prior: PriorSpec, want_grad: bool):
    """Fused KL divergence over all factors, with natural-parameter grads."""
    kp, tp = prior.gamma_shape, prior.gamma_rate
    n, d = arr.n, arr.d
    sig, kk, tt = arr.sigma, arr.kk, arr.tt

    kl = 0.0
    kl += 0.5 * float((arr.W * arr.W).sum()) + 0.5 * float((arr.mu ** 2).sum())
    kl += float((-np.log(sig) + 0.5 * (sig ** 2 - 1.0)).sum())
    dig = kernels.digamma_vec(kk)
    kl += float(((kk - kp) * dig + math.lgamma(kp) - kernels.lgamma_vec(kk)
                 + kp * np.log(tt / tp) + kk * (tp - tt) / tt).sum())
    if arr.rho is not None:
        kl += float((-d * np.log(arr.rho) + 0.5 * d * (arr.rho ** 2 - 1.0)).sum())
    if not arr.centers_known:
        kl += float((-d * np.log(arr.eps) + 0.5 * d * (arr.eps ** 2 - 1.0)).sum())
        kl += 0.5 * float((arr.C * arr.C).sum())
    we, mue, sige = arr.w_ext, arr.mu_ext, arr.sigma_ext
    kl += 0.5 * float(we @ we) + 0.5 * mue * mue
    kl += -math.log(sige) + 0.5 * (sige * sige - 1.0)
    if arr.rho_ext is not None:
        kl += -d * math.log(arr.rho_ext) + 0.5 * d * (arr.rho_ext ** 2 - 1.0)

    if not want_grad:
        return kl, None

    g = {}
    g["W"] = arr.W.copy()
    g["mu"] = arr.mu.copy()
    g["sigma"] = sig - 1.0 / sig
    tri = kernels.trigamma_vec(kk)
    g["kk"] = (kk - kp) * tri + tp / tt - 1.0
    g["tt"] = kp / tt - kk * tp / (tt ** 2)
    g["rho"] = d * (arr.rho - 1.0 / arr.rho) if arr.rho is not None else None
    if not arr.centers_known:
        g["eps"] = d * (arr.eps - 1.0 / arr.eps)
        g["C"] = arr.C.copy()
    else:
        g["eps"] = None
        g["C"] = None
    g["w_ext"] = we.copy()
    g["mu_ext"] = mue
    g["sigma_ext"] = sige - 1.0 / sige
    g["rho_ext"] = (d * (arr.rho_ext - 1.0 / arr.rho_ext)
                    if arr.rho_ext is not None else None)
    return kl, g


def _first_nonfinite_name(v: FreeVector):
    names = v.layout.coordinate_names()
    vals = v.values
    for i, name in enumerate(names):
        if not math.isfinite(vals[i]):
            return name
    # positives can overflow through exp even when the log value is finite
    for i, name in enumerate(names):
        if name.startswith("log_") and not math.isfinite(math.exp(min(vals[i], 710.0))):
            return name
    return None


def _assemble(layout, lg, kg, inv_lam, arr):
    """Combine loss and KL gradients, apply the log-coordinate chain rule."""
    out = np.empty(layout.size)
    pos = 0
    d = layout.d
    for i in range(layout.n):
        out[pos:pos + d] = lg.W[i] + inv_lam * kg["W"][i]; pos += d
        out[pos] = lg.mu[i] + inv_lam * kg["mu"][i]; pos += 1
        out[pos] = (lg.sigma[i] + inv_lam * kg["sigma"][i]) * arr.sigma[i]; pos += 1
        out[pos] = (lg.kk[i] + inv_lam * kg["kk"][i]) * arr.kk[i]; pos += 1
        out[pos] = (lg.tt[i] + inv_lam * kg["tt"][i]) * arr.tt[i]; pos += 1
        if not layout.centers_known:
            out[pos:pos + d] = lg.C[i] + inv_lam * kg["C"][i]; pos += d
            out[pos] = (lg.eps[i] + inv_lam * kg["eps"][i]) * arr.eps[i]; pos += 1
        if layout.regression:
            out[pos] = (lg.rho[i] + inv_lam * kg["rho"][i]) * arr.rho[i]; pos += 1
    out[pos:pos + d] = lg.w_ext + inv_lam * kg["w_ext"]; pos += d
    out[pos] = lg.mu_ext + inv_lam * kg["mu_ext"]; pos += 1
    out[pos] = (lg.sigma_ext + inv_lam * kg["sigma_ext"]) * arr.sigma_ext; pos += 1
    if layout.regression:
        out[pos] = (lg.rho_ext + inv_lam * kg["rho_ext"]) * arr.rho_ext; pos += 1
    return out


def objective_value_and_grad(v: FreeVector, data, lam, prior=PriorSpec(),
                             qmc=None, want_grad=True):
    """Evaluate empirical risk + KL/lambda and, optionally, its gradient."""
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ContractError("lambda must be positive and finite")
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = _batch_from_examples(data)
    params = v.to_params()
    arr = _Arrays(params)
    losses, lg = batch_value_and_grad(arr, X, y, qmc, want_grad=want_grad)
    risk = float(np.sum(losses) / losses.shape[0])
    kl, kg = _kl_value_and_grad(arr, prior, want_grad)
    value = risk + kl / lam
    if not math.isfinite(value):
        culprit = _first_nonfinite_name(v)
        detail = f" (parameter {culprit})" if culprit else ""
        part = "empirical risk" if not math.isfinite(risk) else "KL divergence"
        raise NumericalError(f"non-finite objective through {part}{detail}")
    if not want_grad:
        return value, None
    grad = _assemble(v.layout, lg, kg, 1.0 / lam, arr)
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericalError(
            f"non-finite gradient coordinate {v.layout.coordinate_names()[bad]}")
    return value, grad


def objective_value(v: FreeVector, data, lam, prior=PriorSpec(), qmc=None):
    """Empirical risk plus KL/lambda at the given free vector."""
    value, _ = objective_value_and_grad(v, data, lam, prior, qmc, want_grad=False)
    return value


def objective_gradient(v: FreeVector, data, lam, prior=PriorSpec(), qmc=None):
    """Gradient of :func:`objective_value` in the free coordinates."""
    _, grad = objective_value_and_grad(v, data, lam, prior, qmc, want_grad=True)
    return grad
