"""Deterministic prediction with overlap semantics, and metrics.

The deterministic predictor uses posterior means only: weights w_i,
biases mu_i, centers (fixed or posterior mean), and radii k_i/tau_i
(the mean of the Gamma radius posterior).  Membership is the hard
vicinity test.  When an instance falls into several localities the
resolution rule is configurable:

* ``nearest``  - the member with the smallest distance-to-radius ratio
  wins (default; keeps metrics computable),
* ``external`` - overlaps defer to the external model,
* ``abstain``  - disagreeing overlaps yield NaN.

Ambiguity is always reported: for classification when member signs
disagree, for regression when member outputs differ by more than the
model's ambiguity tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .distrib import CLASSIFICATION, REGRESSION
from .errors import ContractError

__all__ = ["Prediction", "OVERLAP_RULES", "predict", "predict_batch",
           "accuracy", "r2_score"]

OVERLAP_RULES = ("nearest", "external", "abstain")


@dataclass(frozen=True)
class Prediction:
    member_localities: tuple
    per_locality_outputs: tuple
    external_output: float
    resolved: float
    ambiguous: bool


def _det_arrays(model):
    det = model.deterministic
    C = np.asarray(det["centers"], dtype=np.float64).reshape(len(det["radii"]), -1)
    radii = np.asarray(det["radii"], dtype=np.float64)
    W = np.asarray(det["weights"], dtype=np.float64).reshape(len(det["radii"]), -1)
    mu = np.asarray(det["biases"], dtype=np.float64)
    w_ext = np.asarray(det["external_weights"], dtype=np.float64)
    mu_ext = float(det["external_bias"])
    return C, radii, W, mu, w_ext, mu_ext


def predict_batch(model, X, rule=None):
    """Vectorized scoring: (resolved, ambiguous, member lists)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError("predict_batch expects an (m, d) matrix")
    C, radii, W, mu, w_ext, mu_ext = _det_arrays(model)
    n = radii.shape[0]
    if X.shape[1] != w_ext.shape[0]:
        raise ContractError(
            f"feature dimension {X.shape[1]} does not match model ({w_ext.shape[0]})")
    rule = rule or model.overlap_rule
    if rule not in OVERLAP_RULES:
        raise ContractError(f"unknown overlap rule {rule!r}")
    m = X.shape[0]
    ext_out = X @ w_ext + mu_ext
    if n == 0:
        resolved = np.sign(ext_out) if model.task == CLASSIFICATION else ext_out
        if model.task == CLASSIFICATION:
            resolved = np.where(resolved == 0.0, 1.0, resolved)
        return resolved, np.zeros(m, dtype=bool), [[] for _ in range(m)], ext_out

    D = np.sqrt(np.maximum(
        (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :], 0.0))
    member = D <= radii[None, :]
    outputs = X @ W.T + mu[None, :]
    norm_dist = np.where(member, D / radii[None, :], np.inf)

    resolved = np.empty(m)
    ambiguous = np.zeros(m, dtype=bool)
    members = []
    for i in range(m):
        idx = np.flatnonzero(member[i])
        members.append(idx.tolist())
        if idx.size == 0:
            out = ext_out[i]
        elif idx.size == 1:
            out = outputs[i, idx[0]]
        else:
            outs = outputs[i, idx]
            if model.task == CLASSIFICATION:
                signs = np.where(outs >= 0.0, 1.0, -1.0)
                disagree = bool(signs.max() != signs.min())
            else:
                disagree = bool(outs.max() - outs.min() > model.ambiguity_tol)
            ambiguous[i] = disagree
            if rule == "nearest":
                out = outputs[i, idx[np.argmin(norm_dist[i, idx])]]
            elif rule == "external":
                out = ext_out[i]
            else:
                out = (outputs[i, idx[np.argmin(norm_dist[i, idx])]]
                       if not disagree else np.nan)
        resolved[i] = out
    if model.task == CLASSIFICATION:
        with np.errstate(invalid="ignore"):
            resolved = np.where(np.isnan(resolved), np.nan,
                                np.where(resolved >= 0.0, 1.0, -1.0))
    return resolved, ambiguous, members, ext_out


def predict(model, x, rule=None):
    """Score a single standardized instance."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("predict expects a 1-D feature vector")
    resolved, ambiguous, members, ext_out = predict_batch(model, x[None, :], rule)
    C, radii, W, mu, w_ext, mu_ext = _det_arrays(model)
    outs = tuple(float(x @ W[i] + mu[i]) for i in members[0])
    return Prediction(member_localities=tuple(members[0]),
                      per_locality_outputs=outs,
                      external_output=float(ext_out[0]),
                      resolved=float(resolved[0]),
                      ambiguous=bool(ambiguous[0]))


def accuracy(model, data):
    """Fraction of correct signs; sign(0) counts as +1."""
    if model.task != CLASSIFICATION or data.task != CLASSIFICATION:
        raise ContractError("accuracy requires a classification model and data")
    resolved, _, _, _ = predict_batch(model, data.features)
    with np.errstate(invalid="ignore"):
        hits = resolved == data.labels
    return float(np.mean(hits))


def r2_score(model, data):
    """Coefficient of determination about the evaluation-set label mean."""
    if model.task != REGRESSION or data.task != REGRESSION:
        raise ContractError("r2_score requires a regression model and data")
    if data.m < 2:
        raise ContractError("r2_score needs at least two examples")
    y = data.labels
    sst = float(((y - y.mean()) ** 2).sum())
    if sst <= 0.0:
        raise ContractError("labels have zero variance; R^2 is undefined")
    resolved, _, _, _ = predict_batch(model, data.features)
    sse = float(((y - resolved) ** 2).sum())
    return 1.0 - sse / sst
