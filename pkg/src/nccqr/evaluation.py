"""Band evaluation statistics and a seeded replication harness.

Conventions: intervals are evaluated exactly as produced. An inverted
interval (upper < lower, possible when the conformal margin is negative)
covers nothing, while its length still contributes |upper - lower| to the
average length. Crossing rates are fractions of test points, reported for
both the raw network heads (CR-NN) and the calibrated interval (CR-CI).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import (
    ConformalBand,
    QuantileModel,
    TrainConfig,
    calibrate,
    fit_cqr,
    fit_nccqr,
    fit_qr,
)
from .data import Dataset, SyntheticSpec, generate, oracle_quantile, split, standardize
from .losses import QuantileLevels

__all__ = [
    "coverage",
    "avg_length",
    "crossing_rate_nn",
    "crossing_rate_ci",
    "oracle_gap",
    "EvalReport",
    "evaluate",
    "Experiment",
    "fit_band",
    "held_out_test",
    "ReplicationSummary",
    "replicate",
    "format_table",
    "METHODS",
]

METHODS = ("nccqr", "cqr", "qr")


def coverage(band: ConformalBand, test: Dataset) -> float:
    """Fraction of test responses inside their interval."""
    iv = band.intervals(test.X)
    return float(np.mean((test.y >= iv[:, 0]) & (test.y <= iv[:, 1])))


def avg_length(band: ConformalBand, test: Dataset) -> float:
    """Mean absolute interval length over the test points."""
    iv = band.intervals(test.X)
    return float(np.mean(np.abs(iv[:, 1] - iv[:, 0])))


def crossing_rate_nn(model: QuantileModel, test: Dataset) -> float:
    """Fraction of test points where the raw upper head falls below the lower."""
    preds = model.predict(test.X)
    return float(np.mean(preds[:, 1] < preds[:, 0]))


def crossing_rate_ci(band: ConformalBand, test: Dataset) -> float:
    """Fraction of test points with an inverted calibrated interval."""
    iv = band.intervals(test.X)
    return float(np.mean(iv[:, 1] < iv[:, 0]))


def oracle_gap(band: ConformalBand, spec: SyntheticSpec, X_test) -> float:
    """Monte-Carlo estimate of the band-width excess over the oracle band.

    Computes ||(f2_hat + q) - (f1_hat - q)||_{L2} - ||f_tau2 - f_tau1||_{L2}
    with both norms taken over the same test draws, so the comparison is
    paired and the estimate is exactly zero when the band equals the oracle.
    """
    X = np.asarray(X_test, dtype=float)
    iv = band.intervals(X)
    fitted = iv[:, 1] - iv[:, 0]
    levels = band.model.levels
    lo = oracle_quantile(spec, X, levels.tau1)
    hi = oracle_quantile(spec, X, levels.tau2)
    return float(np.sqrt(np.mean(fitted ** 2)) - np.sqrt(np.mean((hi - lo) ** 2)))


@dataclass
class EvalReport:
    """All statistics for one fitted band on one test set."""

    method: str
    alpha: float
    n_test: int
    coverage: float
    avg_length: float
    cr_nn: float
    cr_ci: float
    q_hat: float
    oracle_gap: float | None = None

    _FIELDS = ("coverage", "avg_length", "cr_nn", "cr_ci", "q_hat", "oracle_gap")

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "n_test": self.n_test,
            "coverage": self.coverage,
            "avg_length": self.avg_length,
            "cr_nn": self.cr_nn,
            "cr_ci": self.cr_ci,
            "q_hat": self.q_hat,
            "oracle_gap": self.oracle_gap,
        }


def evaluate(band: ConformalBand, test: Dataset,
             spec: SyntheticSpec | None = None,
             method: str = "nccqr") -> EvalReport:
    """Score a calibrated band on held-out data.

    When the generating spec is supplied, the oracle width gap is included;
    for real data it is unavailable and left as None.
    """
    gap = oracle_gap(band, spec, test.X) if spec is not None else None
    return EvalReport(
        method=method,
        alpha=band.alpha,
        n_test=test.n,
        coverage=coverage(band, test),
        avg_length=avg_length(band, test),
        cr_nn=crossing_rate_nn(band.model, test),
        cr_ci=crossing_rate_ci(band, test),
        q_hat=band.q_hat,
        oracle_gap=gap,
    )


@dataclass
class Experiment:
    """One repeatable fit/calibrate/evaluate protocol.

    data is either a SyntheticSpec (fresh draws every run; spec.n is the
    train+calibration pool, split in half by default, with test_size extra
    test draws) or a fixed Dataset that gets re-split by ratios each run
    (real-data protocol; features are standardized on the training part).
    """

    data: SyntheticSpec | Dataset
    method: str = "nccqr"
    alpha: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    R: int = 1
    base_seed: int = 0
    n_train: int | None = None
    n_calib: int | None = None
    test_size: int = 3000
    ratios: tuple[float, float, float] = (0.3, 0.3, 0.4)
    levels: QuantileLevels | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if self.levels is None:
            self.levels = QuantileLevels.from_alpha(self.alpha)

    def resolved_sizes(self) -> tuple[int, int, int]:
        if not isinstance(self.data, SyntheticSpec):
            raise TypeError("resolved_sizes applies to synthetic experiments only")
        n = self.data.n
        n_tr = self.n_train if self.n_train is not None else math.ceil(n / 2)
        n_cal = self.n_calib if self.n_calib is not None else n - n_tr
        return n_tr, n_cal, self.test_size


_FITTERS = {"nccqr": fit_nccqr, "cqr": fit_cqr, "qr": fit_qr}


def _prepare_run(exp: Experiment, run_seed: int):
    """Seeded data draw and three-way split for one run.

    One seed per run; independent child seeds keep the data draw, the
    split permutation, and the weight initialization uncorrelated.
    Returns (train, calib, test, scaler, spec, train_config).
    """
    s_data, s_split, s_train = (int(s) for s in
                                np.random.SeedSequence(run_seed).generate_state(3))
    if isinstance(exp.data, SyntheticSpec):
        n_tr, n_cal, n_te = exp.resolved_sizes()
        pool = generate(replace(exp.data, n=n_tr + n_cal + n_te, seed=s_data))
        idx = split(pool.n, counts=(n_tr, n_cal, n_te), seed=s_split)
        spec = exp.data
    else:
        pool = exp.data
        idx = split(pool.n, ratios=exp.ratios, seed=s_split)
        spec = None
    train_ds = pool.subset(idx.train)
    calib_ds = pool.subset(idx.calib)
    test_ds = pool.subset(idx.test)
    scaler = None if spec is not None else standardize(train_ds)
    return train_ds, calib_ds, test_ds, scaler, spec, replace(exp.train, seed=s_train)


def fit_band(exp: Experiment, run_seed: int) -> tuple[ConformalBand, Dataset]:
    """One seeded split/fit/calibrate pass.

    Returns the calibrated band together with the held-out test part of
    the same draw (never touched by fitting or calibration), so a later
    evaluation under the same (experiment, seed) is exactly reproducible.
    """
    train_ds, calib_ds, test_ds, scaler, _, cfg = _prepare_run(exp, run_seed)
    model = _FITTERS[exp.method](train_ds, exp.levels, cfg, scaler=scaler)
    band = calibrate(model, calib_ds, exp.alpha,
                     metadata={"run_seed": run_seed, "config_hash": cfg.digest()})
    return band, test_ds


def held_out_test(exp: Experiment, run_seed: int) -> Dataset:
    """The test part that fit_band(exp, run_seed) holds out, without refitting."""
    return _prepare_run(exp, run_seed)[2]


def _run_once(exp: Experiment, run_seed: int) -> EvalReport:
    band, test_ds = fit_band(exp, run_seed)
    spec = exp.data if isinstance(exp.data, SyntheticSpec) else None
    return evaluate(band, test_ds, spec=spec, method=exp.method)


@dataclass
class ReplicationSummary:
    """Per-run reports plus across-run mean and sample sd of each statistic.

    With R=1 the standard deviation is undefined; it is reported as 0.0 and
    flagged via sd_defined=False.
    """

    reports: list[EvalReport]
    stats: dict[str, tuple[float, float]]
    R: int
    base_seed: int
    sd_defined: bool

    def to_json(self) -> dict:
        return {
            "R": self.R,
            "base_seed": self.base_seed,
            "sd_defined": self.sd_defined,
            "stats": {k: {"mean": m, "sd": s} for k, (m, s) in self.stats.items()},
            "reports": [r.to_json() for r in self.reports],
        }


def replicate(exp: Experiment) -> ReplicationSummary:
    """Run the experiment R times with seeds base_seed, base_seed+1, ...

    Fully deterministic: the i-th run depends only on (experiment, seed),
    so results do not depend on execution order.
    """
    reports = [_run_once(exp, exp.base_seed + i) for i in range(exp.R)]
    stats: dict[str, tuple[float, float]] = {}
    for name in EvalReport._FIELDS:
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            continue
        arr = np.asarray(vals, dtype=float)
        sd = float(arr.std(ddof=1)) if exp.R > 1 else 0.0
        stats[name] = (float(arr.mean()), sd)
    return ReplicationSummary(reports, stats, exp.R, exp.base_seed, exp.R > 1)


def format_table(headers, rows, precision: int = 3) -> str:
    """Render rows as a plain aligned text table (numbers right-justified)."""

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.{precision}f}"
        return str(v)

    cells = [[fmt(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[j]) for r in cells)) if cells else len(h)
              for j, h in enumerate(headers)]
    out = ["  ".join(h.ljust(widths[j]) for j, h in enumerate(headers))]
    out.append("  ".join("-" * w for w in widths))
    for r in cells:
        out.append("  ".join(r[j].rjust(widths[j]) for j in range(len(headers))))
    return "\n".join(out)
