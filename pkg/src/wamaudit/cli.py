"""Command-line front end.

    wam audit --data compas.csv --y decile_score --s race --model linear

Exit status: 0 on success, 2 for configuration errors, 3 for data errors,
4 for fit errors. Failures print one line ``wam: error[<category>]: ...``
to standard error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import compute_wam_matrix, cell_predictions, fit_group_models, resolve_features
from .errors import ConfigError, WamError
from .inference import analytic_linear_table, bootstrap_audit
from .rates import VARIANTS, compute_rate_matrix, rate_bootstrap
from .regressors import ModelSpec
from .render import FORMATS, AuditResult, render
from .tabular import DEFAULT_MIN_GROUP_SIZE, SchemaConfig, load_csv, read_header, scalarize_sensitive

EXIT_CODES = {"config": 2, "data": 3, "fit": 4}
MODELS = ("linear", "logistic", "knn")


@dataclass
class AuditConfig:
    data_path: str
    outcome_col: str
    sensitive_cols: list[str]
    feature_cols: list[str] | None = None
    exclude_cols: list[str] = field(default_factory=list)
    model: str = "linear"
    knn_k: int = 10
    bins: int | None = None
    boot_resamples: int = 0
    seed: int = 0
    rate: str = "none"
    threshold: float = 0.5
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE
    output_format: str = "table"
    output_path: str | None = None
    n_jobs: int = 1
    delimiter: str = ","
    categorical_cols: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.sensitive_cols:
            raise ConfigError("at least one sensitive column is required")
        if self.outcome_col in self.sensitive_cols:
            raise ConfigError(f"outcome {self.outcome_col!r} is also listed as sensitive")
        banned = {self.outcome_col, *self.sensitive_cols}
        for name, cols in (("feature", self.feature_cols or []), ("exclude", self.exclude_cols)):
            clash = banned.intersection(cols)
            if clash:
                raise ConfigError(f"{name} list overlaps outcome/sensitive columns: {sorted(clash)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; have {MODELS}")
        if self.rate not in ("none",) + VARIANTS:
            raise ConfigError(f"unknown rate {self.rate!r}")
        if self.boot_resamples < 0 or self.boot_resamples == 1:
            raise ConfigError("--boot must be 0 (off) or at least 2")
        if self.knn_k < 1:
            raise ConfigError("--k must be >= 1")
        if self.bins is not None and self.bins < 1:
            raise ConfigError("--bins must be >= 1")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("--threshold must lie in (0, 1]")
        if self.min_group_size < 1:
            raise ConfigError("--min-group-size must be >= 1")
        if self.output_format not in FORMATS:
            raise ConfigError(f"unknown format {self.output_format!r}")
        if self.n_jobs < 1:
            raise ConfigError("--jobs must be >= 1")


def _used_columns(cfg: AuditConfig) -> list[str]:
    header = read_header(cfg.data_path, cfg.delimiter)
    if cfg.feature_cols:
        cols = [cfg.outcome_col, *cfg.sensitive_cols, *cfg.feature_cols]
    else:
        cols = [c for c in header if c not in set(cfg.exclude_cols)]
    for c in [cfg.outcome_col, *cfg.sensitive_cols]:
        if c not in cols:
            cols.append(c)
    return list(dict.fromkeys(cols))


def run_audit(cfg: AuditConfig) -> AuditResult:
    """Load, partition, fit, compute cells, optionally bootstrap."""
    cfg.validate()
    schema = SchemaConfig(columns=_used_columns(cfg), categorical=cfg.categorical_cols,
                          delimiter=cfg.delimiter)
    ds = load_csv(cfg.data_path, schema)
    gi = scalarize_sensitive(ds, cfg.sensitive_cols, bins=cfg.bins,
                             min_group_size=cfg.min_group_size)
    features = resolve_features(ds, cfg.outcome_col, cfg.sensitive_cols, cfg.feature_cols,
                                cfg.exclude_cols)
    spec = ModelSpec(kind=cfg.model, knn_k=cfg.knn_k)
    models = fit_group_models(ds, gi, features, cfg.outcome_col, spec, n_jobs=cfg.n_jobs)
    cells = cell_predictions(models, ds, gi)
    wam = compute_wam_matrix(models, ds, gi, cfg.outcome_col, cells=cells)

    warnings: dict = {}
    if ds.n_dropped:
        warnings["dropped_rows"] = ds.n_dropped
    warnings.update(wam.warnings)

    rates = None
    if cfg.rate != "none":
        rates = compute_rate_matrix(models, ds, gi, cfg.rate, cfg.threshold, cfg.outcome_col)
        warnings.update(rates.warnings)
    analytic = analytic_linear_table(models, ds, gi) if cfg.model == "linear" else None

    boot = None
    if cfg.boot_resamples:
        if rates is not None:
            boot = rate_bootstrap(ds, gi, features, cfg.outcome_col, spec, cfg.boot_resamples,
                                  cfg.seed, variant=cfg.rate, threshold=cfg.threshold,
                                  n_jobs=cfg.n_jobs)
        else:
            boot = bootstrap_audit(ds, gi, features, cfg.outcome_col, spec, cfg.boot_resamples,
                                   cfg.seed, n_jobs=cfg.n_jobs)
        if boot.n_discarded:
            warnings["discarded_resamples"] = boot.n_discarded

    metadata = {
        "data": Path(cfg.data_path).name,
        "outcome": cfg.outcome_col,
        "sensitive": list(cfg.sensitive_cols),
        "features": features,
        "sensitive_in_features": bool(set(features) & set(cfg.sensitive_cols)),
        "model": cfg.model,
        "knn_k": cfg.knn_k if cfg.model == "knn" else None,
        "groups": list(gi.labels),
        "group_sizes": gi.sizes,
        "n_rows": ds.n_rows,
        "seed": cfg.seed,
        "n_resamples": cfg.boot_resamples,
        "variant": None if cfg.rate == "none" else cfg.rate,
        "threshold": cfg.threshold if cfg.rate != "none" else None,
    }
    return AuditResult(wam, rates, analytic, boot, metadata, warnings)


def _split(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wam", description="Walk-a-mile group fairness audits")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    a = sub.add_parser("audit", help="run an audit on a CSV file")
    a.add_argument("--data", required=True, help="input CSV file")
    a.add_argument("--y", required=True, dest="outcome", help="outcome column")
    a.add_argument("--s", required=True, dest="sensitive",
                   help="sensitive column(s), comma separated for intersectional groups")
    a.add_argument("--features", help="comma-separated feature columns (default: all others)")
    a.add_argument("--exclude", help="comma-separated columns to leave out")
    a.add_argument("--categorical", help="comma-separated columns to force categorical")
    a.add_argument("--model", choices=MODELS, default="linear")
    a.add_argument("--k", type=int, default=10, dest="knn_k", help="neighbors for --model knn")
    a.add_argument("--bins", type=int, help="equal-width bins for a numeric sensitive column")
    a.add_argument("--boot", type=int, default=0, help="bootstrap resamples (0 = off)")
    a.add_argument("--seed", type=int, help="bootstrap seed (default: $WAM_SEED or 0)")
    a.add_argument("--rate", choices=("none",) + VARIANTS, default="none")
    a.add_argument("--threshold", type=float, default=0.5)
    a.add_argument("--min-group-size", type=int, default=DEFAULT_MIN_GROUP_SIZE)
    a.add_argument("--format", choices=FORMATS, default="table", dest="output_format")
    a.add_argument("--output", help="write the report here instead of standard output")
    a.add_argument("--jobs", type=int, default=1, help="worker threads for fits and resamples")
    a.add_argument("--sep", default=",", help="CSV field separator")
    return parser


def config_from_args(args: argparse.Namespace, environ=os.environ) -> AuditConfig:
    seed = args.seed
    if seed is None:
        env = environ.get("WAM_SEED")
        try:
            seed = int(env) if env else 0
        except ValueError:
            raise ConfigError(f"WAM_SEED must be an integer, got {env!r}") from None
    return AuditConfig(
        data_path=args.data,
        outcome_col=args.outcome,
        sensitive_cols=_split(args.sensitive),
        feature_cols=_split(args.features) or None,
        exclude_cols=_split(args.exclude),
        model=args.model,
        knn_k=args.knn_k,
        bins=args.bins,
        boot_resamples=args.boot,
        seed=seed,
        rate=args.rate,
        threshold=args.threshold,
        min_group_size=args.min_group_size,
        output_format=args.output_format,
        output_path=args.output,
        n_jobs=args.jobs,
        delimiter=args.sep,
        categorical_cols=_split(args.categorical),
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        text = render(run_audit(cfg), cfg.output_format)
    except WamError as exc:
        print(f"wam: error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    if cfg.output_path:
        Path(cfg.output_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
