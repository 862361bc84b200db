"""Check (pinball) loss, non-crossing penalty, and the penalized objective.

All aggregate quantities use the mean convention: sums over the batch are
divided by the number of samples, so gradient magnitudes and the penalty
weight do not scale with batch size.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantileLevels",
    "check_loss",
    "check_subgrad",
    "relu_penalty",
    "penalized_objective",
    "objective_output_grads",
]


@dataclass(frozen=True)
class QuantileLevels:
    """An ordered pair of quantile levels 0 < tau1 < tau2 < 1."""

    tau1: float
    tau2: float

    def __post_init__(self):
        if not (0.0 < self.tau1 < self.tau2 < 1.0):
            raise ValueError(
                f"quantile levels must satisfy 0 < tau1 < tau2 < 1, "
                f"got ({self.tau1}, {self.tau2})"
            )

    @staticmethod
    def from_alpha(alpha: float) -> "QuantileLevels":
        """Equal-tailed levels (alpha/2, 1 - alpha/2) for miscoverage alpha."""
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        return QuantileLevels(alpha / 2.0, 1.0 - alpha / 2.0)


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def check_loss(u, tau: float):
    """Check loss rho_tau(u) = u * (tau - 1{u <= 0}), elementwise."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return u * (tau - (u <= 0.0))


def check_subgrad(u, tau: float):
    """Subgradient of the check loss: tau for u > 0, tau - 1 for u <= 0."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return np.where(u > 0.0, tau, tau - 1.0)


def relu_penalty(f1, f2):
    """Crossing penalty max{f1 - f2, 0}, elementwise; zero iff f1 <= f2."""
    return np.maximum(np.asarray(f1, dtype=float) - np.asarray(f2, dtype=float), 0.0)


def _validate_preds(preds, y):
    preds = np.asarray(preds, dtype=float)
    y = np.asarray(y, dtype=float)
    if preds.ndim != 2 or preds.shape[1] != 2:
        raise ValueError(f"preds must have shape (n, 2), got {preds.shape}")
    if y.shape != (preds.shape[0],):
        raise ValueError(f"y must have shape ({preds.shape[0]},), got {y.shape}")
    return preds, y


def penalized_objective(preds, y, levels: QuantileLevels, penalty_weight: float) -> float:
    """Mean check loss of both columns plus the weighted mean crossing penalty.

    preds[:, 0] estimates the tau1 curve and preds[:, 1] the tau2 curve.
    Returns (1/n) sum_i [rho_tau1(y_i - f1_i) + rho_tau2(y_i - f2_i)]
    + penalty_weight * (1/n) sum_i max{f1_i - f2_i, 0}.
    """
    if penalty_weight < 0:
        raise ValueError(f"penalty weight must be >= 0, got {penalty_weight}")
    preds, y = _validate_preds(preds, y)
    f1, f2 = preds[:, 0], preds[:, 1]
    pinball = check_loss(y - f1, levels.tau1) + check_loss(y - f2, levels.tau2)
    # Penalty enters as a separate product so that a zero total penalty
    # leaves the objective bitwise identical to the unpenalized one.
    return float(np.mean(pinball) + penalty_weight * np.mean(relu_penalty(f1, f2)))


def objective_output_grads(preds, y, levels: QuantileLevels, penalty_weight: float):
    """Subgradient of penalized_objective with respect to preds, shape (n, 2).

    Column 1: -check_subgrad(y - f1, tau1)/n + (w/n) * 1{f1 > f2}
    Column 2: -check_subgrad(y - f2, tau2)/n - (w/n) * 1{f1 > f2}
    The tie f1 == f2 contributes no penalty gradient.
    """
    if penalty_weight < 0:
        raise ValueError(f"penalty weight must be >= 0, got {penalty_weight}")
    preds, y = _validate_preds(preds, y)
    n = preds.shape[0]
    f1, f2 = preds[:, 0], preds[:, 1]
    crossing = (f1 > f2).astype(float)
    g = np.empty_like(preds)
    g[:, 0] = -check_subgrad(y - f1, levels.tau1) / n + penalty_weight * crossing / n
    g[:, 1] = -check_subgrad(y - f2, levels.tau2) / n - penalty_weight * crossing / n
    return g
