"""Quantile model fitting and split-conformal calibration.

The estimator fits one network with two output heads for the lower and
upper quantile levels, minimizing the mean check loss plus a weighted mean
ReLU penalty on head crossings. Calibration follows the split-conformal
recipe: conformity scores on a held-out set, then a finite-sample-corrected
empirical quantile that widens (or shrinks) the band symmetrically.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ._io import atomic_write_text
from .data import Dataset, Scaler
from .losses import QuantileLevels, objective_output_grads, penalized_objective, check_subgrad
from .network import (
    NetworkParams,
    adam_step,
    backward,
    forward_batch,
    init_adam_state,
    init_network,
    network_from_json,
    network_to_json,
)

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "ModelFamily",
    "QuantileModel",
    "ConformalBand",
    "fit_nccqr",
    "fit_cqr",
    "fit_linear_qr",
    "fit_qr",
    "conformity_scores",
    "empirical_quantile",
    "calibrate",
    "predict_interval",
    "band_to_json",
    "band_from_json",
    "save_band",
    "load_band",
]

# Above this training size, full-batch gradients stop paying for themselves.
_FULL_BATCH_MAX = 4000
_MINI_BATCH = 256


class TrainingDiverged(RuntimeError):
    """Raised when the objective or a gradient goes non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for the neural quantile fits.

    penalty is the crossing-penalty weight; None selects the default
    log(n_train) at fit time, and fit_cqr forces it to 0. batch_size None
    means full batch up to 4000 training points and 256 otherwise.
    """

    penalty: float | None = None
    hidden: tuple[int, ...] = (256, 256, 256)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000
    tol: float = 1e-6
    patience: int = 50
    batch_size: int | None = None
    output_bound: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.penalty is not None and self.penalty < 0:
            raise ValueError(f"penalty must be >= 0, got {self.penalty}")
        if not self.hidden or any(int(h) <= 0 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when given")
        if self.output_bound is not None and self.output_bound <= 0:
            raise ValueError("output_bound must be positive when given")

    def to_json(self) -> dict:
        return {
            "penalty": self.penalty,
            "hidden": list(self.hidden),
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "epochs": self.epochs,
            "tol": self.tol,
            "patience": self.patience,
            "batch_size": self.batch_size,
            "output_bound": self.output_bound,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "hidden" in kwargs and kwargs["hidden"] is not None:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        return TrainConfig(**kwargs)

    def digest(self) -> str:
        """Short stable hash of the resolved configuration, for provenance."""
        blob = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


class ModelFamily(str, Enum):
    NEURAL = "neural"
    LINEAR = "linear"


@dataclass
class QuantileModel:
    """A fitted pair of quantile curves sharing one predictor.

    Neural models hold NetworkParams; linear models hold a (2, d+1)
    coefficient matrix whose rows are (intercept, slopes) for the lower and
    upper level. If a scaler is attached, predict() standardizes inputs
    first, so the model can be applied to raw features directly.
    """

    kind: ModelFamily
    levels: QuantileLevels
    network: NetworkParams | None = None
    coef: np.ndarray | None = None
    scaler: Scaler | None = None
    bound: float | None = None
    trace: list[float] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ModelFamily(self.kind)
        if self.kind is ModelFamily.NEURAL and self.network is None:
            raise ValueError("neural model requires network parameters")
        if self.kind is ModelFamily.LINEAR:
            if self.coef is None:
                raise ValueError("linear model requires coefficients")
            self.coef = np.asarray(self.coef, dtype=float)
            if self.coef.ndim != 2 or self.coef.shape[0] != 2:
                raise ValueError(f"coef must have shape (2, d+1), got {self.coef.shape}")

    @property
    def d(self) -> int:
        if self.kind is ModelFamily.NEURAL:
            return self.network.widths[0]
        return self.coef.shape[1] - 1

    def predict(self, X) -> np.ndarray:
        """Evaluate both quantile heads on rows of X; returns (n, 2)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if self.scaler is not None:
            X = self.scaler.transform_X(X)
        if self.kind is ModelFamily.NEURAL:
            return forward_batch(self.network, X, bound=self.bound)
        ones = np.ones((X.shape[0], 1))
        out = np.hstack([ones, X]) @ self.coef.T
        if self.bound is not None:
            out = np.clip(out, -self.bound, self.bound)
        return out

    def predict_one(self, x) -> tuple[float, float]:
        out = self.predict(np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1))[0]
        return float(out[0]), float(out[1])


def _resolve_batches(n: int, cfg: TrainConfig):
    if cfg.batch_size is not None:
        return min(cfg.batch_size, n)
    return n if n <= _FULL_BATCH_MAX else _MINI_BATCH


def fit_nccqr(train: Dataset, levels: QuantileLevels, cfg: TrainConfig,
              scaler: Scaler | None = None) -> QuantileModel:
    """Fit the penalized two-head quantile network.

    The crossing-penalty weight defaults to log(n_train). The parameters
    achieving the lowest full-sample objective along the trajectory are
    returned, so the fitted objective never exceeds the initial one. The
    per-epoch objective trace is attached to the returned model.
    """
    X = scaler.transform_X(train.X) if scaler is not None else train.X
    y = train.y
    n = train.n
    lam = float(cfg.penalty) if cfg.penalty is not None else math.log(n)
    if lam < 0:
        raise ValueError(f"penalty must be >= 0, got {lam}")

    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    params = init_network(train.d, cfg.hidden, int(seeds[0]))
    state = init_adam_state(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    batch_rng = np.random.default_rng(int(seeds[1]))
    batch = _resolve_batches(n, cfg)

    def full_objective(p):
        preds = forward_batch(p, X, bound=cfg.output_bound)
        return penalized_objective(preds, y, levels, lam)

    obj = full_objective(params)
    if not np.isfinite(obj):
        raise TrainingDiverged(0, "objective non-finite at initialization")
    trace = [obj]
    prefix_best = [obj]
    best_obj, best_params = obj, params

    for epoch in range(1, cfg.epochs + 1):
        order = batch_rng.permutation(n) if batch < n else np.arange(n)
        try:
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                Xb, yb = X[idx], y[idx]
                raw = forward_batch(params, Xb)
                if cfg.output_bound is None:
                    preds = raw
                else:
                    preds = np.clip(raw, -cfg.output_bound, cfg.output_bound)
                # backward averages over the batch, so feed it per-sample
                # subgradients (objective grads carry an extra 1/n).
                G = objective_output_grads(preds, yb, levels, lam) * len(yb)
                if cfg.output_bound is not None:
                    G = np.where(np.abs(raw) >= cfg.output_bound, 0.0, G)
                grads = backward(params, Xb, G)
                params, state = adam_step(params, grads, state)
        except ValueError as exc:
            raise TrainingDiverged(epoch, f"epoch {epoch}: {exc}") from exc

        obj = full_objective(params)
        if not np.isfinite(obj):
            raise TrainingDiverged(epoch, f"objective non-finite at epoch {epoch}")
        trace.append(obj)
        if obj < best_obj:
            best_obj, best_params = obj, params
        prefix_best.append(min(prefix_best[-1], obj))
        if epoch >= cfg.patience and prefix_best[epoch - cfg.patience] - best_obj < cfg.tol:
            break

    meta = {
        "penalty": lam,
        "n_train": n,
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "epochs_run": len(trace) - 1,
    }
    return QuantileModel(ModelFamily.NEURAL, levels, network=best_params,
                         scaler=scaler, bound=cfg.output_bound,
                         trace=trace, metadata=meta)


def fit_cqr(train: Dataset, levels: QuantileLevels, cfg: TrainConfig,
            scaler: Scaler | None = None) -> QuantileModel:
    """Unpenalized baseline: identical training with the penalty forced to 0."""
    model = fit_nccqr(train, levels, replace(cfg, penalty=0.0), scaler=scaler)
    model.metadata["method"] = "cqr"
    return model


# Step-size schedule for the affine fits. Adam with the neural default of
# 1e-3 cannot move an intercept by O(1) within the epoch budget, so the
# linear fits anneal from a larger step instead.
_LINEAR_LR_STAGES = ((0.5, 0.1), (0.8, 0.01), (1.0, 0.001))


def fit_linear_qr(train: Dataset, tau: float, cfg: TrainConfig,
                  scaler: Scaler | None = None):
    """Fit an affine tau-quantile a + b.x by subgradient descent on check loss.

    Returns (a, b) with b of shape (d,). Uses Adam with a three-stage
    annealed step size; the iterate with the lowest full-sample loss wins.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    X = scaler.transform_X(train.X) if scaler is not None else train.X
    y = train.y
    n, d = X.shape
    Z = np.hstack([np.ones((n, 1)), X])
    theta = np.zeros(d + 1)
    m = np.zeros(d + 1)
    v = np.zeros(d + 1)

    def loss(th):
        u = y - Z @ th
        return float(np.mean(u * (tau - (u <= 0.0))))

    best = (loss(theta), theta.copy())
    steps = max(cfg.epochs, 200)
    t = 0
    for step in range(steps):
        frac = step / steps
        lr = next(rate for cutoff, rate in _LINEAR_LR_STAGES if frac < cutoff)
        u = y - Z @ theta
        g = -(Z.T @ check_subgrad(u, tau)) / n
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(step, "non-finite gradient in linear fit")
        t += 1
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mh = m / (1 - cfg.beta1 ** t)
        vh = v / (1 - cfg.beta2 ** t)
        theta = theta - lr * mh / (np.sqrt(vh) + cfg.eps)
        cur = loss(theta)
        if cur < best[0]:
            best = (cur, theta.copy())
    theta = best[1]
    return float(theta[0]), theta[1:].copy()


def fit_qr(train: Dataset, levels: QuantileLevels, cfg: TrainConfig,
           scaler: Scaler | None = None) -> QuantileModel:
    """Two independent affine quantile fits packaged as one model."""
    a1, b1 = fit_linear_qr(train, levels.tau1, cfg, scaler=scaler)
    a2, b2 = fit_linear_qr(train, levels.tau2, cfg, scaler=scaler)
    coef = np.vstack([[a1, *b1], [a2, *b2]])
    meta = {"method": "qr", "n_train": train.n, "seed": cfg.seed,
            "config_hash": cfg.digest()}
    return QuantileModel(ModelFamily.LINEAR, levels, coef=coef, scaler=scaler,
                         bound=cfg.output_bound, metadata=meta)


def conformity_scores(model: QuantileModel, calib: Dataset) -> np.ndarray:
    """E_i = max{f1(x_i) - y_i, y_i - f2(x_i)}: signed distance outside the band."""
    preds = model.predict(calib.X)
    return np.maximum(preds[:, 0] - calib.y, calib.y - preds[:, 1])


def empirical_quantile(scores, alpha: float) -> float:
    """Finite-sample-corrected (1-alpha) empirical quantile of the scores.

    Returns the k-th smallest score with k = ceil((1-alpha) * (m+1)).
    Raises if the calibration set is too small for the requested level
    (k > m), rather than silently truncating.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a nonempty 1-d array")
    m = scores.size
    k = math.ceil((1.0 - alpha) * (m + 1))
    if k > m:
        raise ValueError(
            f"calibration set of size {m} cannot support alpha={alpha} "
            f"(needs k={k} <= m); add calibration points or raise alpha"
        )
    return float(np.partition(scores, k - 1)[k - 1])


@dataclass
class ConformalBand:
    """A calibrated prediction band: model plus symmetric margin q_hat."""

    model: QuantileModel
    q_hat: float
    alpha: float
    calib_size: int
    metadata: dict = field(default_factory=dict)

    def intervals(self, X) -> np.ndarray:
        """Row-wise [lower, upper] endpoints; q_hat < 0 can invert them."""
        preds = self.model.predict(X)
        out = np.empty_like(preds)
        out[:, 0] = preds[:, 0] - self.q_hat
        out[:, 1] = preds[:, 1] + self.q_hat
        return out


def calibrate(model: QuantileModel, calib: Dataset, alpha: float,
              metadata: dict | None = None) -> ConformalBand:
    """Split-conformal calibration of a fitted model on held-out data."""
    scores = conformity_scores(model, calib)
    q_hat = empirical_quantile(scores, alpha)
    return ConformalBand(model, q_hat, alpha, calib.n, metadata or {})


def predict_interval(band: ConformalBand, x) -> tuple[float, float]:
    """The band's interval at a single point. No clamping is applied: a
    negative margin can produce an empty (inverted) interval, which is
    reported as-is and counts as covering nothing."""
    lo, hi = band.intervals(np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1))[0]
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Serialization.

_BAND_FORMAT = "nccqr-band"
_BAND_VERSION = 1


def _model_to_json(model: QuantileModel) -> dict:
    obj = {
        "kind": model.kind.value,
        "levels": {"tau1": model.levels.tau1, "tau2": model.levels.tau2},
        "bound": model.bound,
        "scaler": model.scaler.to_json() if model.scaler is not None else None,
        "metadata": dict(model.metadata),
    }
    if model.kind is ModelFamily.NEURAL:
        obj["network"] = network_to_json(model.network)
    else:
        obj["coef"] = model.coef.tolist()
    return obj


def _model_from_json(obj: dict) -> QuantileModel:
    levels = QuantileLevels(obj["levels"]["tau1"], obj["levels"]["tau2"])
    scaler = Scaler.from_json(obj["scaler"]) if obj.get("scaler") else None
    kind = ModelFamily(obj["kind"])
    if kind is ModelFamily.NEURAL:
        return QuantileModel(kind, levels, network=network_from_json(obj["network"]),
                             scaler=scaler, bound=obj.get("bound"),
                             metadata=dict(obj.get("metadata", {})))
    return QuantileModel(kind, levels, coef=np.asarray(obj["coef"], dtype=float),
                         scaler=scaler, bound=obj.get("bound"),
                         metadata=dict(obj.get("metadata", {})))


def band_to_json(band: ConformalBand) -> dict:
    return {
        "format": _BAND_FORMAT,
        "version": _BAND_VERSION,
        "alpha": band.alpha,
        "q_hat": band.q_hat,
        "calib_size": band.calib_size,
        "model": _model_to_json(band.model),
        "metadata": dict(band.metadata),
    }


def band_from_json(obj: dict) -> ConformalBand:
    if obj.get("format") != _BAND_FORMAT:
        raise ValueError(f"not a serialized band: format={obj.get('format')!r}")
    if obj.get("version") != _BAND_VERSION:
        raise ValueError(f"unsupported band version {obj.get('version')!r}")
    return ConformalBand(_model_from_json(obj["model"]), float(obj["q_hat"]),
                         float(obj["alpha"]), int(obj["calib_size"]),
                         dict(obj.get("metadata", {})))


def save_band(band: ConformalBand, path: str) -> None:
    atomic_write_text(path, json.dumps(band_to_json(band)))


def load_band(path: str) -> ConformalBand:
    with open(path, encoding="utf-8") as fh:
        return band_from_json(json.load(fh))
