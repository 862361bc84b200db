"""Penalty-weight selection by K-fold cross-validation on the ALC score.

ALC on a validation fold is the average absolute band width plus the raw
count of crossing points, so a single crossing outweighs any plausible
width difference and the criterion strongly prefers non-crossing fits,
breaking remaining ties toward narrow bands.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .conformal import QuantileModel, TrainConfig, fit_nccqr
from .data import Dataset
from .losses import QuantileLevels

__all__ = ["CvPlan", "default_grid", "alc", "select_lambda"]


@dataclass(frozen=True)
class CvPlan:
    """Fold count, candidate penalty grid, and the fold-assignment seed."""

    K: int = 5
    lambda_grid: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        grid = tuple(float(v) for v in self.lambda_grid)
        if not grid:
            raise ValueError("lambda_grid must be nonempty")
        if any(v < 0 for v in grid):
            raise ValueError(f"lambda_grid values must be >= 0, got {grid}")
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValueError(f"lambda_grid must be sorted strictly ascending, got {grid}")
        object.__setattr__(self, "lambda_grid", grid)


def default_grid(n_train: int) -> tuple[float, ...]:
    """Multiples of the log(n) default: {0, ln n / 2, ln n, 2 ln n, 4 ln n}."""
    ln = math.log(n_train)
    return (0.0, 0.5 * ln, ln, 2.0 * ln, 4.0 * ln)


def alc(model: QuantileModel, fold: Dataset) -> float:
    """Average |f2 - f1| over the fold plus the number of crossing points."""
    if fold.n == 0:
        raise ValueError("fold must be nonempty")
    preds = model.predict(fold.X)
    width = preds[:, 1] - preds[:, 0]
    return float(np.mean(np.abs(width)) + np.sum(width < 0.0))


def select_lambda(train: Dataset, plan: CvPlan, levels: QuantileLevels,
                  cfg: TrainConfig):
    """K-fold CV over the penalty grid; returns (lambda_hat, table).

    Folds are a seeded random partition with sizes differing by at most
    one. Each fold's network is initialized identically across penalty
    values (the seed depends on plan.seed and the fold only), so the grid
    comparison isolates the effect of the penalty. The winner is the grid
    value with the smallest mean ALC; exact ties go to the smaller lambda.
    The table rows are {"penalty", "alc", "fold_alcs"} dicts, one per
    grid value in ascending order.
    """
    if train.n < plan.K:
        raise ValueError(f"need at least K={plan.K} training rows, got {train.n}")
    perm = np.random.default_rng(plan.seed).permutation(train.n)
    folds = np.array_split(perm, plan.K)
    fold_seeds = [int(np.random.SeedSequence([plan.seed, k]).generate_state(1)[0])
                  for k in range(plan.K)]

    table = []
    for lam in plan.lambda_grid:
        fold_alcs = []
        for k, fold_idx in enumerate(folds):
            rest = np.concatenate([f for j, f in enumerate(folds) if j != k])
            sub_cfg = replace(cfg, penalty=lam, seed=fold_seeds[k])
            model = fit_nccqr(train.subset(rest), levels, sub_cfg)
            fold_alcs.append(alc(model, train.subset(fold_idx)))
        table.append({
            "penalty": lam,
            "alc": float(np.mean(fold_alcs)),
            "fold_alcs": fold_alcs,
        })
    best = min(range(len(table)), key=lambda i: (table[i]["alc"], table[i]["penalty"]))
    return table[best]["penalty"], table
