"""Posterior/prior parameter containers and closed-form KL divergences.

The posterior factorizes over localities and over the variable groups
inside each locality (weights, bias, radius, optionally center), so the
global KL divergence is a sum of per-variable closed forms:

* isotropic Gaussians:
  KL = [ln((s2^2/s1^2)^d) - d + d s1^2/s2^2 + ||m2 - m1||^2/s2^2] / 2
* Gammas (shape k, rate tau):
  KL = (k1 - k2) psi(k1) + ln Gamma(k2)/Gamma(k1)
       + k2 ln(tau1/tau2) + k1 (tau2 - tau1)/tau1

Priors are standard Gaussians for weights/biases/centers and
Gamma(2, 0.1) for the radius, overridable through :class:`PriorSpec`.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError
from .specfn import digamma, ln_gamma

SCHEMA_VERSION = 1

CLASSIFICATION = "classification"
REGRESSION = "regression"


def _as_vector(x, name):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ContractError(f"{name} must be a 1-D vector")
    return v


def _check_positive(value, name):
    if not (value > 0.0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Gamma prior on the radius; Gaussian priors are standard and fixed."""

    gamma_shape: float = 2.0
    gamma_rate: float = 0.1

    def __post_init__(self):
        _check_positive(self.gamma_shape, "gamma_shape")
        _check_positive(self.gamma_rate, "gamma_rate")


@dataclass(frozen=True)
class LocalityPosterior:
    """Posterior over one locality's predictor, bias, radius, and center."""

    weights: np.ndarray
    bias_mean: float
    bias_std: float
    shape: float
    rate: float
    center_mean: np.ndarray | None = None
    center_std: float | None = None
    weight_std: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_vector(self.weights, "weights"))
        _check_positive(self.bias_std, "bias_std")
        _check_positive(self.shape, "shape")
        _check_positive(self.rate, "rate")
        if (self.center_mean is None) != (self.center_std is None):
            raise ContractError("center_mean and center_std must be given together")
        if self.center_mean is not None:
            object.__setattr__(self, "center_mean", _as_vector(self.center_mean, "center_mean"))
            if self.center_mean.shape != self.weights.shape:
                raise ContractError("center_mean dimension must match weights")
            _check_positive(self.center_std, "center_std")
        if self.weight_std is not None:
            _check_positive(self.weight_std, "weight_std")

    @property
    def dim(self):
        return self.weights.shape[0]

    @property
    def radius(self):
        """Posterior-mean radius of the locality."""
        return self.shape / self.rate


@dataclass(frozen=True)
class ExternalPosterior:
    """Posterior over the external (outside every locality) predictor."""

    weights: np.ndarray
    bias_mean: float
    bias_std: float
    weight_std: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_vector(self.weights, "weights"))
        _check_positive(self.bias_std, "bias_std")
        if self.weight_std is not None:
            _check_positive(self.weight_std, "weight_std")

    @property
    def dim(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class MixtureParams:
    """Full trainable parameter set of the mixture."""

    localities: tuple
    external: ExternalPosterior
    task: str
    centers_known: bool
    fixed_centers: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "localities", tuple(self.localities))
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ContractError(f"unknown task {self.task!r}")
        d = self.external.dim
        regression = self.task == REGRESSION
        if regression and self.external.weight_std is None:
            raise ContractError("regression mode requires external weight_std")
        if not regression and self.external.weight_std is not None:
            raise ContractError("classification mode fixes the weight spread at 1")
        centers = []
        for i, loc in enumerate(self.localities):
            if loc.dim != d:
                raise ContractError(f"locality {i} dimension differs from external")
            if regression and loc.weight_std is None:
                raise ContractError(f"locality {i} lacks weight_std in regression mode")
            if not regression and loc.weight_std is not None:
                raise ContractError(f"locality {i} carries weight_std in classification mode")
            if self.centers_known:
                if loc.center_mean is not None:
                    raise ContractError("known-centers mode stores no trainable centers")
            else:
                if loc.center_mean is None:
                    raise ContractError(f"locality {i} lacks a trainable center")
        if self.centers_known:
            centers = tuple(_as_vector(c, "fixed_center") for c in self.fixed_centers)
            if len(centers) != len(self.localities):
                raise ContractError("fixed_centers count must equal the locality count")
            for c in centers:
                if c.shape[0] != d:
                    raise ContractError("fixed_centers dimension mismatch")
            object.__setattr__(self, "fixed_centers", centers)
        elif len(self.fixed_centers):
            raise ContractError("fixed_centers only apply to known-centers mode")

    @property
    def n_localities(self):
        return len(self.localities)

    @property
    def dim(self):
        return self.external.dim

    def centers(self):
        """Locality centers: fixed when known, posterior means otherwise."""
        if self.centers_known:
            return self.fixed_centers
        return tuple(loc.center_mean for loc in self.localities)

    # ------------------------------------------------------------- JSON

    def to_json_dict(self):
        def vec(v):
            return [float(t) for t in v]

        locs = []
        for loc in self.localities:
            entry = {
                "w": vec(loc.weights),
                "mu": loc.bias_mean,
                "sigma": loc.bias_std,
                "k": loc.shape,
                "tau": loc.rate,
            }
            if loc.center_mean is not None:
                entry["c0"] = vec(loc.center_mean)
                entry["eps"] = loc.center_std
            if loc.weight_std is not None:
                entry["rho"] = loc.weight_std
            locs.append(entry)
        ext = {
            "w": vec(self.external.weights),
            "mu": self.external.bias_mean,
            "sigma": self.external.bias_std,
        }
        if self.external.weight_std is not None:
            ext["rho"] = self.external.weight_std
        out = {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "centers_known": self.centers_known,
            "localities": locs,
            "external": ext,
        }
        if self.centers_known:
            out["fixed_centers"] = [vec(c) for c in self.fixed_centers]
        return out

    @classmethod
    def from_json_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ContractError(f"unsupported schema_version {doc.get('schema_version')!r}")
        locs = tuple(
            LocalityPosterior(
                weights=np.array(e["w"], dtype=np.float64),
                bias_mean=e["mu"],
                bias_std=e["sigma"],
                shape=e["k"],
                rate=e["tau"],
                center_mean=np.array(e["c0"], dtype=np.float64) if "c0" in e else None,
                center_std=e.get("eps"),
                weight_std=e.get("rho"),
            )
            for e in doc["localities"]
        )
        ext = ExternalPosterior(
            weights=np.array(doc["external"]["w"], dtype=np.float64),
            bias_mean=doc["external"]["mu"],
            bias_std=doc["external"]["sigma"],
            weight_std=doc["external"].get("rho"),
        )
        return cls(
            localities=locs,
            external=ext,
            task=doc["task"],
            centers_known=doc["centers_known"],
            fixed_centers=tuple(
                np.array(c, dtype=np.float64) for c in doc.get("fixed_centers", [])
            ),
        )

    def to_json(self):
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


# ------------------------------------------------------------------ KLs


def kl_gaussian_iso(mean1, std1, mean2, std2):
    """KL between isotropic Gaussians N(mean1, I std1^2) || N(mean2, I std2^2)."""
    m1 = _as_vector(np.atleast_1d(mean1), "mean1")
    m2 = _as_vector(np.atleast_1d(mean2), "mean2")
    if m1.shape != m2.shape:
        raise ContractError("kl_gaussian_iso dimension mismatch")
    _check_positive(std1, "std1")
    _check_positive(std2, "std2")
    d = m1.shape[0]
    r = (std1 / std2) ** 2
    diff = m2 - m1
    return 0.5 * (d * math.log((std2 * std2) / (std1 * std1)) - d + d * r
                  + float(diff @ diff) / (std2 * std2))


def kl_gamma(k1, tau1, k2, tau2):
    """KL between Gamma(k1, tau1) || Gamma(k2, tau2), shape/rate form."""
    for v, name in ((k1, "k1"), (tau1, "tau1"), (k2, "k2"), (tau2, "tau2")):
        _check_positive(v, name)
    return ((k1 - k2) * digamma(k1) + ln_gamma(k2) - ln_gamma(k1)
            + k2 * math.log(tau1 / tau2) + k1 * (tau2 - tau1) / tau1)


def kl_total(params, prior=PriorSpec()):
    """Sum of per-variable KL terms for the variant implied by params.

    Variant selection: the weight-spread terms appear only in regression
    mode; the center terms appear only in unknown-centers mode.
    """
    total = 0.0
    kp, tp = prior.gamma_shape, prior.gamma_rate
    for loc in params.localities:
        wstd = loc.weight_std if loc.weight_std is not None else 1.0
        total += kl_gaussian_iso(loc.weights, wstd, np.zeros(loc.dim), 1.0)
        total += kl_gaussian_iso(np.array([loc.bias_mean]), loc.bias_std, np.zeros(1), 1.0)
        total += kl_gamma(loc.shape, loc.rate, kp, tp)
        if loc.center_mean is not None:
            total += kl_gaussian_iso(loc.center_mean, loc.center_std, np.zeros(loc.dim), 1.0)
    ext = params.external
    wstd = ext.weight_std if ext.weight_std is not None else 1.0
    total += kl_gaussian_iso(ext.weights, wstd, np.zeros(ext.dim), 1.0)
    total += kl_gaussian_iso(np.array([ext.bias_mean]), ext.bias_std, np.zeros(1), 1.0)
    return total
