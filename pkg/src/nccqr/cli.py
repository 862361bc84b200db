"""Command line interface: seeded, file-driven experiment plumbing.

Commands
--------
simulate         draw a synthetic dataset, write CSV plus provenance JSON
fit-calibrate    split/fit/calibrate once, write band JSON and loss trace CSV
evaluate         score a saved band on its held-out data, write report files
cv-lambda        K-fold penalty selection, write the ALC table
reproduce-table  rerun one of the paper-style results grids at a given scale

Every output embeds the fully resolved configuration and the seeds that
produced it, contains no timestamps, and is written atomically, so running
the same command twice yields byte-identical files. The default output
directory comes from $NCCQR_OUT_DIR (falling back to the current
directory); --out overrides both.

Config files are JSON. Schema (all keys optional unless a command needs
them; unknown keys are rejected):

    {
      "data": {"kind": "synthetic", "model": "sine", "error": "normal",
               "n": 2000, "d": 1}
            | {"kind": "csv", "path": "data.csv", "target": "y",
               "drop": ["id"]},
      "method": "nccqr" | "cqr" | "qr",
      "alpha": 0.1,
      "levels": [0.05, 0.95],          # overrides the alpha-derived pair
      "train": { ... TrainConfig keys ... },
      "split": [0.3, 0.3, 0.4],        # train/calib/test ratios (csv data)
      "n_train": null, "n_calib": null,  # synthetic split sizes
      "test_size": 3000,               # synthetic held-out draws
      "replications": 1,
      "seed": 0,
      "cv": {"k": 5, "lambda_grid": [0.0, 7.6], "seed": 0},
      "out_dir": "results"
    }

Command line flags override the corresponding file keys (--seed, --method,
--alpha, --out).
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, replace

from ._io import atomic_write_text
from .conformal import TrainConfig, load_band, band_to_json
from .data import (
    Dataset,
    ErrorKind,
    ModelKind,
    SyntheticSpec,
    generate,
    load_csv,
    save_csv,
)
from .evaluation import (
    Experiment,
    ReplicationSummary,
    _prepare_run,
    evaluate,
    fit_band,
    format_table,
    held_out_test,
    replicate,
    METHODS,
)
from .losses import QuantileLevels
from .model_selection import CvPlan, default_grid, select_lambda

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "main"]

OUT_DIR_ENV = "NCCQR_OUT_DIR"


class ConfigError(ValueError):
    """A config file problem, reported with the offending key path."""


@dataclass
class CsvSource:
    """A CSV-backed data source: file path, target column, dropped columns."""

    path: str
    target: str
    drop: tuple = ()

    def load(self) -> Dataset:
        return load_csv(self.path, self.target, self.drop)

    def to_json(self) -> dict:
        return {"kind": "csv", "path": self.path, "target": self.target,
                "drop": list(self.drop)}


@dataclass
class ExperimentConfig:
    """Everything a command needs, resolved and validated.

    Module-level preconditions (model names, level ordering, training
    settings) are enforced here at load time by constructing the
    corresponding objects, so a bad config fails before any work starts.
    """

    data: SyntheticSpec | CsvSource | None = None
    method: str = "nccqr"
    alpha: float = 0.1
    levels: QuantileLevels | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    split: tuple = (0.3, 0.3, 0.4)
    n_train: int | None = None
    n_calib: int | None = None
    test_size: int | None = None
    replications: int = 1
    seed: int = 0
    cv: dict | None = None
    out_dir: str | None = None

    def experiment(self) -> Experiment:
        if self.data is None:
            raise ConfigError("this command requires a 'data' section")
        data = self.data if isinstance(self.data, SyntheticSpec) else self.data.load()
        return Experiment(
            data=data,
            method=self.method,
            alpha=self.alpha,
            train=self.train,
            R=self.replications,
            base_seed=self.seed,
            n_train=self.n_train,
            n_calib=self.n_calib,
            test_size=self.test_size if self.test_size is not None else 3000,
            ratios=self.split,
            levels=self.levels,
        )

    def to_json(self) -> dict:
        if isinstance(self.data, SyntheticSpec):
            data = {"kind": "synthetic", "model": self.data.model.value,
                    "error": self.data.error.value, "n": self.data.n,
                    "d": self.data.d}
        elif isinstance(self.data, CsvSource):
            data = self.data.to_json()
        else:
            data = None
        levels = None
        if self.levels is not None:
            levels = [self.levels.tau1, self.levels.tau2]
        return {
            "data": data,
            "method": self.method,
            "alpha": self.alpha,
            "levels": levels,
            "train": self.train.to_json(),
            "split": list(self.split),
            "n_train": self.n_train,
            "n_calib": self.n_calib,
            "test_size": self.test_size,
            "replications": self.replications,
            "seed": self.seed,
            "cv": self.cv,
            "out_dir": self.out_dir,
        }


_TOP_KEYS = {"data", "method", "alpha", "levels", "train", "split", "n_train",
             "n_calib", "test_size", "replications", "seed", "cv", "out_dir"}
_SYNTH_KEYS = {"kind", "model", "error", "n", "d"}
_CSV_KEYS = {"kind", "path", "target", "drop"}
_CV_KEYS = {"k", "lambda_grid", "seed"}


def _reject_unknown(obj: dict, known: set, where: str) -> None:
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {unknown}")


def _parse_data(obj) -> SyntheticSpec | CsvSource:
    if not isinstance(obj, dict):
        raise ConfigError("'data' must be an object")
    kind = obj.get("kind")
    if kind == "synthetic":
        _reject_unknown(obj, _SYNTH_KEYS, "data")
        for key in ("model", "error", "n"):
            if key not in obj:
                raise ConfigError(f"data.{key} is required for synthetic data")
        models = [m.value for m in ModelKind]
        if obj["model"] not in models:
            raise ConfigError(f"data.model: {obj['model']!r} is not one of {models}")
        errors = [e.value for e in ErrorKind]
        if obj["error"] not in errors:
            raise ConfigError(f"data.error: {obj['error']!r} is not one of {errors}")
        try:
            return SyntheticSpec(model=obj["model"], error=obj["error"],
                                 n=int(obj["n"]), d=int(obj.get("d", 1)))
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from None
    if kind == "csv":
        _reject_unknown(obj, _CSV_KEYS, "data")
        for key in ("path", "target"):
            if key not in obj:
                raise ConfigError(f"data.{key} is required for csv data")
        return CsvSource(str(obj["path"]), str(obj["target"]),
                         tuple(obj.get("drop", ())))
    raise ConfigError(f"data.kind must be 'synthetic' or 'csv', got {kind!r}")


def parse_config(obj: dict) -> ExperimentConfig:
    """Validate a raw config dict and build the resolved ExperimentConfig."""
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(obj, _TOP_KEYS, "config")
    cfg = ExperimentConfig()
    if obj.get("data") is not None:
        cfg.data = _parse_data(obj["data"])
    if "method" in obj:
        if obj["method"] not in METHODS:
            raise ConfigError(f"method must be one of {list(METHODS)}, "
                              f"got {obj['method']!r}")
        cfg.method = obj["method"]
    if "alpha" in obj:
        cfg.alpha = float(obj["alpha"])
        if not 0.0 < cfg.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if obj.get("levels") is not None:
        pair = obj["levels"]
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigError(f"levels must be a [tau1, tau2] pair, got {pair!r}")
        try:
            cfg.levels = QuantileLevels(float(pair[0]), float(pair[1]))
        except ValueError as exc:
            raise ConfigError(f"levels: {exc}") from None
    if obj.get("train") is not None:
        try:
            cfg.train = TrainConfig.from_json(obj["train"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"train: {exc}") from None
    if obj.get("split") is not None:
        ratios = obj["split"]
        if not (isinstance(ratios, (list, tuple)) and len(ratios) == 3):
            raise ConfigError(f"split must be 3 ratios, got {ratios!r}")
        cfg.split = tuple(float(v) for v in ratios)
    for key in ("n_train", "n_calib"):
        if obj.get(key) is not None:
            setattr(cfg, key, int(obj[key]))
    if obj.get("test_size") is not None:
        cfg.test_size = int(obj["test_size"])
        if cfg.test_size < 1:
            raise ConfigError(f"test_size must be >= 1, got {cfg.test_size}")
    if "replications" in obj:
        cfg.replications = int(obj["replications"])
        if cfg.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {cfg.replications}")
    if "seed" in obj:
        cfg.seed = int(obj["seed"])
    if obj.get("cv") is not None:
        if not isinstance(obj["cv"], dict):
            raise ConfigError("'cv' must be an object")
        _reject_unknown(obj["cv"], _CV_KEYS, "cv")
        cfg.cv = dict(obj["cv"])
    if obj.get("out_dir") is not None:
        cfg.out_dir = str(obj["out_dir"])
    return cfg


def _load_config(args) -> ExperimentConfig:
    """Read --config (if any) and apply flag overrides on top."""
    raw = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    cfg = parse_config(raw)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "method", None) is not None:
        cfg.method = args.method
    if getattr(args, "alpha", None) is not None:
        cfg.alpha = args.alpha
        if not 0.0 < cfg.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {cfg.alpha}")
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    return cfg


def _resolve_out_dir(cfg: ExperimentConfig) -> str:
    out = cfg.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _dump_json(payload: dict, path: str) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _provenance(command: str, cfg: ExperimentConfig, **extra) -> dict:
    out = {"format": "nccqr-provenance", "version": 1, "command": command,
           "config": cfg.to_json()}
    out.update(extra)
    return out


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if not isinstance(cfg.data, SyntheticSpec):
        raise ConfigError("simulate requires synthetic data "
                          "(config key data.kind = 'synthetic')")
    out = _resolve_out_dir(cfg)
    ds = generate(replace(cfg.data, seed=cfg.seed))
    csv_path = os.path.join(out, "dataset.csv")
    save_csv(ds, csv_path)
    _dump_json(_provenance("simulate", cfg, seed=cfg.seed, n=ds.n, d=ds.d,
                           feature_names=ds.feature_names,
                           target_name=ds.target_name),
               os.path.join(out, "dataset.provenance.json"))
    print(f"wrote {csv_path} ({ds.n} rows, d={ds.d})")
    return 0


def cmd_fit_calibrate(args) -> int:
    cfg = _load_config(args)
    exp = cfg.experiment()
    out = _resolve_out_dir(cfg)
    band, _ = fit_band(exp, cfg.seed)
    band.metadata.update({"command": "fit-calibrate", "config": cfg.to_json(),
                          "run_seed": cfg.seed})
    band_path = os.path.join(out, "band.json")
    _dump_json(band_to_json(band), band_path)
    trace = band.model.trace or []
    lines = ["epoch,objective"]
    lines += [f"{i},{repr(float(v))}" for i, v in enumerate(trace)]
    atomic_write_text(os.path.join(out, "trace.csv"), "\n".join(lines) + "\n")
    print(f"wrote {band_path} (method={cfg.method}, q_hat={band.q_hat:.6g})")
    return 0


def cmd_evaluate(args) -> int:
    if not os.path.exists(args.band):
        raise FileNotFoundError(f"band file not found: {args.band}")
    band = load_band(args.band)
    if getattr(args, "config", None):
        cfg = _load_config(args)
    elif "config" in band.metadata:
        cfg = parse_config(band.metadata["config"])
        if getattr(args, "out", None) is not None:
            cfg.out_dir = args.out
    else:
        raise ConfigError("band file has no embedded config; pass --config")
    run_seed = band.metadata.get("run_seed", cfg.seed)
    exp = cfg.experiment()
    test_ds = held_out_test(exp, run_seed)
    spec = exp.data if isinstance(exp.data, SyntheticSpec) else None
    report = evaluate(band, test_ds, spec=spec, method=cfg.method)

    out = _resolve_out_dir(cfg)
    payload = _provenance("evaluate", cfg, run_seed=run_seed,
                          band_file=os.path.basename(args.band),
                          report=report.to_json())
    _dump_json(payload, os.path.join(out, "report.json"))

    text = [f"method        {report.method}",
            f"alpha         {report.alpha}",
            f"n_test        {report.n_test}",
            f"coverage      {report.coverage:.4f}",
            f"avg_length    {report.avg_length:.4f}",
            f"cr_nn         {report.cr_nn:.4f}",
            f"cr_ci         {report.cr_ci:.4f}",
            f"q_hat         {report.q_hat:.6g}"]
    if report.oracle_gap is not None:
        text.append(f"oracle_gap    {report.oracle_gap:.4f}")
    atomic_write_text(os.path.join(out, "report.txt"), "\n".join(text) + "\n")

    iv = band.intervals(test_ds.X)
    header = [*test_ds.feature_names, test_ds.target_name, "lo", "hi"]
    rows = [",".join(header)]
    for xi, yi, (lo, hi) in zip(test_ds.X, test_ds.y, iv):
        cells = [repr(float(v)) for v in xi]
        cells += [repr(float(yi)), repr(float(lo)), repr(float(hi))]
        rows.append(",".join(cells))
    atomic_write_text(os.path.join(out, "intervals.csv"), "\n".join(rows) + "\n")
    print("\n".join(text))
    return 0


def cmd_cv_lambda(args) -> int:
    cfg = _load_config(args)
    exp = cfg.experiment()
    train_ds, _, _, scaler, _, train_cfg = _prepare_run(exp, cfg.seed)
    if scaler is not None:
        # CV folds see features scaled on the whole training part; the
        # final fit uses the same convention.
        train_ds = scaler.transform(train_ds)

    cv = cfg.cv or {}
    grid = cv.get("lambda_grid")
    plan = CvPlan(K=int(cv.get("k", 5)),
                  lambda_grid=tuple(grid) if grid else default_grid(train_ds.n),
                  seed=int(cv.get("seed", cfg.seed)))
    lam, table = select_lambda(train_ds, plan, exp.levels, train_cfg)

    out = _resolve_out_dir(cfg)
    payload = _provenance("cv-lambda", cfg, lambda_hat=lam,
                          plan={"k": plan.K, "lambda_grid": list(plan.lambda_grid),
                                "seed": plan.seed},
                          table=table)
    _dump_json(payload, os.path.join(out, "cv.json"))
    lines = ["penalty,mean_alc," +
             ",".join(f"fold{k + 1}" for k in range(plan.K))]
    for row in table:
        cells = [repr(float(row["penalty"])), repr(float(row["alc"]))]
        cells += [repr(float(v)) for v in row["fold_alcs"]]
        lines.append(",".join(cells))
    atomic_write_text(os.path.join(out, "cv_table.csv"), "\n".join(lines) + "\n")
    print(f"lambda_hat = {lam:.6g}")
    return 0


# Table grids. Replication counts at scale 1.0 match the source studies;
# --scale shrinks them (minimum 1) because the full grids are hours-scale.
_S1_SETTINGS = [("sine", "Sine"), ("two_phase", "2-phase"),
                ("triangle", "Triangle"), ("discontinuous", "Discontinuous")]
_S1_ERRORS = ["normal", "exp", "sin"]
_S2_DIMS = [5, 10, 15, 20, 25]
_S3_SOURCES = [("house", "house.csv", "price", ("id", "date", "zipcode")),
               ("bike", "bike.csv", "count", ("datetime", "casual", "registered")),
               ("airfoil", "airfoil.csv", "pressure", ())]


def _scaled_R(full: int, scale: float) -> int:
    return max(1, round(full * scale))


def _cell_summary(summary: ReplicationSummary) -> dict:
    return {name: {"mean": m, "sd": s} for name, (m, s) in summary.stats.items()}


def _stat_cell(summary: ReplicationSummary, name: str) -> str:
    mean, sd = summary.stats[name]
    return f"{mean:.3f}({sd:.3f})"


def cmd_reproduce_table(args) -> int:
    cfg = _load_config(args)
    table_id = args.table.upper()
    scale = args.scale if args.scale is not None else 0.2
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    out = _resolve_out_dir(cfg)

    if table_id == "S1":
        cells, rows = _table_s1(cfg, scale)
        headers = ["setting", "error", "method", "coverage", "length", "q_hat"]
    elif table_id == "S2":
        cells, rows = _table_s2(cfg, scale)
        headers = ["d", "method", "cr_nn", "cr_ci", "coverage", "length", "q_hat"]
    elif table_id == "S3":
        cells, rows = _table_s3(cfg, scale, args.data_dir)
        headers = ["dataset", "method", "cr_nn", "cr_ci", "coverage", "length",
                   "q_hat"]
    else:
        raise ConfigError(f"unknown table id {args.table!r}; expected S1, S2 or S3")

    text = format_table(headers, rows)
    payload = _provenance("reproduce-table", cfg, table=table_id, scale=scale,
                          cells=cells)
    _dump_json(payload, os.path.join(out, f"table_{table_id}.json"))
    atomic_write_text(os.path.join(out, f"table_{table_id}.txt"), text + "\n")
    print(text)
    return 0


def _table_s1(cfg: ExperimentConfig, scale: float):
    """Univariate settings grid: 4 curves x 3 noise laws x {nccqr, qr}."""
    R = _scaled_R(50, scale)
    cells, rows = [], []
    cell_index = 0
    for model, label in _S1_SETTINGS:
        for error in _S1_ERRORS:
            spec = SyntheticSpec(model=model, error=error, n=2000)
            for method in ("nccqr", "qr"):
                exp = Experiment(data=spec, method=method, alpha=0.1,
                                 train=cfg.train, R=R,
                                 base_seed=cfg.seed + 1000 * cell_index,
                                 n_train=cfg.n_train, n_calib=cfg.n_calib,
                                 test_size=cfg.test_size if cfg.test_size
                                 is not None else 3000)
                summary = replicate(exp)
                cells.append({"setting": label, "error": error, "method": method,
                              "R": R, "base_seed": exp.base_seed,
                              "stats": _cell_summary(summary)})
                rows.append([label, error, method,
                             _stat_cell(summary, "coverage"),
                             _stat_cell(summary, "avg_length"),
                             _stat_cell(summary, "q_hat")])
                cell_index += 1
    return cells, rows


def _table_s2(cfg: ExperimentConfig, scale: float):
    """Index-model dimension sweep: d in {5,...,25} x {cqr, nccqr}."""
    R = _scaled_R(10, scale)
    cells, rows = [], []
    cell_index = 0
    for d in _S2_DIMS:
        spec = SyntheticSpec(model="single_index", error="sin", n=4000, d=d)
        for method in ("cqr", "nccqr"):
            exp = Experiment(data=spec, method=method, alpha=0.2,
                             train=cfg.train, R=R,
                             base_seed=cfg.seed + 1000 * cell_index,
                             n_train=cfg.n_train, n_calib=cfg.n_calib,
                             test_size=cfg.test_size if cfg.test_size
                             is not None else 1000)
            summary = replicate(exp)
            cells.append({"d": d, "method": method, "R": R,
                          "base_seed": exp.base_seed,
                          "stats": _cell_summary(summary)})
            rows.append([d, method,
                         _stat_cell(summary, "cr_nn"),
                         _stat_cell(summary, "cr_ci"),
                         _stat_cell(summary, "coverage"),
                         _stat_cell(summary, "avg_length"),
                         _stat_cell(summary, "q_hat")])
            cell_index += 1
    return cells, rows


def _table_s3(cfg: ExperimentConfig, scale: float, data_dir: str | None):
    """Real-data grid: three CSV datasets x {nccqr, cqr, qr}.

    Expects <data_dir>/house.csv, bike.csv, airfoil.csv with target columns
    price, count, pressure (0.3/0.3/0.4 train/calib/test split, alpha 0.2).
    """
    if not data_dir:
        raise ConfigError("table S3 needs --data-dir pointing at the CSV files")
    R = _scaled_R(10, scale)
    cells, rows = [], []
    cell_index = 0
    for name, filename, target, drop in _S3_SOURCES:
        path = os.path.join(data_dir, filename)
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"table S3 dataset {name!r} not found at {path}")
        with open(path, encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
        # only drop the id-like columns that are actually present, so both
        # raw downloads and pre-cleaned files work
        ds = load_csv(path, target, tuple(c for c in drop if c in header))
        for method in ("nccqr", "cqr", "qr"):
            exp = Experiment(data=ds, method=method, alpha=0.2,
                             train=cfg.train, R=R,
                             base_seed=cfg.seed + 1000 * cell_index,
                             ratios=(0.3, 0.3, 0.4))
            summary = replicate(exp)
            cells.append({"dataset": name, "method": method, "R": R,
                          "base_seed": exp.base_seed,
                          "stats": _cell_summary(summary)})
            rows.append([name, method,
                         _stat_cell(summary, "cr_nn"),
                         _stat_cell(summary, "cr_ci"),
                         _stat_cell(summary, "coverage"),
                         _stat_cell(summary, "avg_length"),
                         _stat_cell(summary, "q_hat")])
            cell_index += 1
    return cells, rows


# ------------------------------------------------------------------ driver


def _add_common(sub, *, config_required=False):
    sub.add_argument("--config", required=config_required,
                     help="JSON config file")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--out", help="output directory "
                     f"(default: config out_dir, then ${OUT_DIR_ENV}, then .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nccqr",
        description="Conformalized quantile regression with a non-crossing "
                    "penalty: simulation, fitting, and evaluation commands.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset to CSV")
    _add_common(p, config_required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-calibrate",
                       help="split, fit, and conformally calibrate once")
    _add_common(p, config_required=True)
    p.add_argument("--method", choices=METHODS, help="override config method")
    p.add_argument("--alpha", type=float, help="override config alpha")
    p.set_defaults(func=cmd_fit_calibrate)

    p = sub.add_parser("evaluate", help="score a saved band on held-out data")
    p.add_argument("--band", required=True, help="band JSON from fit-calibrate")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv-lambda",
                       help="select the crossing-penalty weight by K-fold CV")
    _add_common(p, config_required=True)
    p.set_defaults(func=cmd_cv_lambda)

    p = sub.add_parser("reproduce-table",
                       help="rerun a full results grid at a replication scale")
    p.add_argument("--table", required=True, help="table id: S1, S2 or S3")
    p.add_argument("--scale", type=float,
                   help="replication scale factor (default 0.2)")
    p.add_argument("--data-dir", help="directory with the real-data CSVs (S3)")
    _add_common(p)
    p.set_defaults(func=cmd_reproduce_table)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as a message, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
