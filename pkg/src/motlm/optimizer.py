"""Nesterov-accelerated Adam and the single-restart training loop.

The update keeps exponential moving averages of the gradient and its
square, bias-corrects both, applies a Nesterov look-ahead to the first
moment, and steps

    delta = -lr * (beta1 * m_hat + (1 - beta1) * g / (1 - beta1^t))
            / (sqrt(v_hat) + eps_hat)

A restart returns the best iterate seen, not the last one: the
objective is non-convex with plateaus next to cliffs, and overshooting
near the end of a run must not cost the best solution found.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .distrib import PriorSpec
from .errors import ContractError, NumericalError
from .objective import FreeVector, Layout, objective_value_and_grad

__all__ = ["NadamConfig", "NadamState", "RestartResult", "nadam_step",
           "run_restart", "init_restart", "GRAD_CLIP"]

# Phi tails and membership tails create flat regions bordered by cliffs;
# an infinity-norm clip keeps single steps sane without changing descent
# directions in the benign regime.
GRAD_CLIP = 100.0


@dataclass(frozen=True)
class NadamConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    max_steps: int = 2000
    plateau_patience: int = 200
    plateau_tol: float = 1e-6

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ContractError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon_hat <= 0 or self.max_steps < 1:
            raise ContractError("epsilon_hat must be positive, max_steps >= 1")
        if self.plateau_patience < 1 or self.plateau_tol < 0:
            raise ContractError("invalid plateau settings")


@dataclass
class NadamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, size):
        return cls(m=np.zeros(size), v=np.zeros(size))


@dataclass(frozen=True)
class RestartResult:
    params: object            # MixtureParams of the best iterate
    objective: float
    steps_taken: int
    converged: bool
    free_values: np.ndarray = field(repr=False, default=None)


def nadam_step(state: NadamState, grad, step_index, cfg: NadamConfig):
    """One update; returns the new state and the parameter delta."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ContractError("gradient dimension does not match optimizer state")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient passed to nadam_step")
    if step_index < 1:
        raise ContractError("step_index starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    bc1 = 1.0 - b1 ** step_index
    bc2 = 1.0 - b2 ** step_index
    m_hat = m / bc1
    v_hat = v / bc2
    m_nes = b1 * m_hat + (1.0 - b1) * grad / bc1
    delta = -cfg.learning_rate * m_nes / (np.sqrt(v_hat) + cfg.epsilon_hat)
    return NadamState(m=m, v=v), delta


def run_restart(init: FreeVector, data, lam, prior=PriorSpec(), qmc=None,
                cfg=NadamConfig()):
    """Minimize the objective from one starting point.

    Stops at max_steps or when the best objective has not improved by
    plateau_tol within plateau_patience steps.  Numerical failures abort
    the restart and return the best finite iterate seen with
    ``converged=False``.
    """
    layout = init.layout
    values = init.values.copy()
    state = NadamState.zeros(layout.size)
    best_val = np.inf
    best_values = values.copy()
    since_improve = 0
    steps = 0
    converged = True
    try:
        for t in range(1, cfg.max_steps + 1):
            val, grad = objective_value_and_grad(
                FreeVector(values, layout), data, lam, prior, qmc)
            if val < best_val - cfg.plateau_tol:
                since_improve = 0
            else:
                since_improve += 1
            if val < best_val:
                best_val = val
                best_values = values.copy()
            if since_improve >= cfg.plateau_patience:
                break
            norm = np.max(np.abs(grad))
            if norm > GRAD_CLIP:
                grad = grad * (GRAD_CLIP / norm)
            state, delta = nadam_step(state, grad, t, cfg)
            values = values + delta
            steps = t
        else:
            # final iterate was never scored inside the loop
            val, _ = objective_value_and_grad(
                FreeVector(values, layout), data, lam, prior, qmc,
                want_grad=False)
            if val < best_val:
                best_val = val
                best_values = values.copy()
    except NumericalError:
        converged = False
    if not np.isfinite(best_val):
        raise NumericalError("restart produced no finite objective value")
    best = FreeVector(best_values, layout)
    return RestartResult(params=best.to_params(), objective=float(best_val),
                         steps_taken=steps, converged=converged,
                         free_values=best_values)


def init_restart(d, n, task, centers_known, rng, train_features=None,
                 fixed_centers=()):
    """Draw a random starting point.

    Weights and biases start near zero (N(0, 0.5^2)); spreads start at
    their prior scales with mild log-space jitter on the Gamma
    parameters.  Trainable centers start at a uniformly chosen training
    instance plus N(0, 0.1^2 I) noise: localities must intersect the
    data mass to receive any membership gradient, which the origin-mean
    prior would not provide.
    """
    layout = Layout(n=n, d=d, task=task, centers_known=centers_known,
                    fixed_centers=tuple(fixed_centers) if centers_known else ())
    if not centers_known and n > 0:
        if train_features is None or len(train_features) == 0:
            raise ContractError("center initialization needs training features")
        train_features = np.asarray(train_features, dtype=np.float64)
    values = np.empty(layout.size)
    pos = 0
    for _ in range(n):
        values[pos:pos + d] = rng.normal(0.0, 0.5, d); pos += d
        values[pos] = rng.normal(0.0, 0.5); pos += 1
        values[pos] = 0.0; pos += 1                                  # log sigma
        values[pos] = np.log(2.0) + rng.normal(0.0, 0.2); pos += 1   # log k
        values[pos] = np.log(0.1) + rng.normal(0.0, 0.2); pos += 1   # log tau
        if not centers_known:
            row = train_features[rng.integers(0, train_features.shape[0])]
            values[pos:pos + d] = row + rng.normal(0.0, 0.1, d); pos += d
            values[pos] = 0.0; pos += 1                              # log eps
        if layout.regression:
            values[pos] = 0.0; pos += 1                              # log rho
    values[pos:pos + d] = rng.normal(0.0, 0.5, d); pos += d
    values[pos] = rng.normal(0.0, 0.5); pos += 1
    values[pos] = 0.0; pos += 1
    if layout.regression:
        values[pos] = 0.0; pos += 1
    return FreeVector(values, layout)
