"""Sampling variability of the counterfactual means.

Two routes are offered. For linear group models the variance of a cell has
a closed form: conditioning on group i's feature mean A_i and applying the
law of total variance,

    Var(nu_ij) = A_i' Cov(beta_j) A_i + beta_j' Cov(X_i) beta_j / n_i

where the first term is the sampling noise of group j's fitted model
evaluated at A_i and the second the sampling noise of A_i itself. Here the
intercept is carried as a coefficient on a constant feature, so with
coordinates centered on group j's fit rows the first term becomes
sigma2_j / n_j + a' Cov(slopes_j) a with a = A_i - mean(X_j).

For any model kind the stratified bootstrap resamples each group with
replacement, refits every group model and recomputes the cells.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import counterfactual_predictions, fit_group_models
from .errors import ConfigError, FitError
from .regressors import FittedModel, ModelSpec, shifted_mean
from .tabular import Dataset, EncodingMap, GroupIndex

Z_QUANTILES = {0.90: 1.6448536269514722, 0.95: 1.959963984540054, 0.99: 2.5758293035489004}
MAX_DISCARD_RATE = 0.10


def confidence_interval(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval ``estimate +/- z * se``."""
    if se < 0:
        raise ConfigError(f"standard error must be >= 0, got {se}")
    try:
        z = Z_QUANTILES[level]
    except KeyError:
        raise ConfigError(f"unsupported confidence level {level}; use one of {sorted(Z_QUANTILES)}"
                          ) from None
    return estimate - z * se, estimate + z * se


# ---------------------------------------------------------------------------
# Analytic linear variance


@dataclass(frozen=True)
class GroupMoments:
    """Feature mean and sample covariance of one group in a model's coordinates."""

    group: str
    mean: np.ndarray
    cov: np.ndarray
    n: int


def group_moments(ds: Dataset, gi: GroupIndex, i: int, encoding_map: EncodingMap) -> GroupMoments:
    X, _ = encoding_map.transform(ds, gi.row_ids[i])
    n = X.shape[0]
    mean = X.mean(axis=0)
    if n > 1:
        Xc = X - mean
        cov = Xc.T @ Xc / (n - 1)
        cov = 0.5 * (cov + cov.T)
    else:
        cov = np.zeros((X.shape[1], X.shape[1]))
    return GroupMoments(gi.labels[i], mean, cov, n)


@dataclass(frozen=True)
class LinearVarianceReport:
    act: str
    cf: str
    nu_hat: float
    variance: float
    std_error: float
    ci95: tuple[float, float]
    term_sampling_beta: float
    term_sampling_A: float


def analytic_linear_variance(
    models: Sequence[FittedModel], ds: Dataset, gi: GroupIndex, i: str | int, j: str | int
) -> LinearVarianceReport:
    i = gi.index(i) if isinstance(i, str) else i
    j = gi.index(j) if isinstance(j, str) else j
    model = models[j]
    if model.kind != "linear" or model.coef_covariance is None:
        raise FitError(f"analytic variance needs linear models, got {model.kind!r}",
                       model.fit_group)
    mom = group_moments(ds, gi, i, model.encoding_map)
    beta = model.coefficients
    a = mom.mean - model.fit_means
    term_beta = model.sigma2 / model.n_fit + float(a @ model.coef_covariance @ a)
    term_A = float(beta @ mom.cov @ beta) / mom.n
    # quadratic forms of PSD matrices; clip rounding below zero
    term_beta = max(term_beta, 0.0)
    term_A = max(term_A, 0.0)
    variance = term_beta + term_A
    nu_hat = model.intercept + float(mom.mean @ beta)
    se = math.sqrt(variance)
    return LinearVarianceReport(gi.labels[i], gi.labels[j], nu_hat, variance, se,
                                confidence_interval(nu_hat, se), term_beta, term_A)


def analytic_linear_table(models, ds, gi) -> list[LinearVarianceReport]:
    return [analytic_linear_variance(models, ds, gi, i, j)
            for i in range(gi.s) for j in range(gi.s)]


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class BootstrapRow:
    act: str
    cf: str
    myGrpEst: float
    myGrpSE: float
    theirGrpEst: float
    theirGrpSE: float
    bias: float
    biasSE: float
    myGrpPlugin: float = math.nan
    theirGrpPlugin: float = math.nan


REPORT_COLUMNS = ("act", "cf", "myGrpEst", "myGrpSE", "theirGrpEst", "theirGrpSE",
                  "bias", "biasSE")


@dataclass(frozen=True)
class BootstrapReport:
    """Bootstrap summary per (actual, counterfactual) pair.

    ``myGrpEst`` is the resample mean of cell (i, i), ``theirGrpEst`` of
    cell (i, j); ``bias`` is the resample mean of their difference. The
    full-data plug-in cells ride along in ``myGrpPlugin``/``theirGrpPlugin``.
    """

    rows: tuple[BootstrapRow, ...]
    n_resamples: int
    seed: int
    n_discarded: int = 0
    statistic: str = "mean"
    threshold: float | None = None

    def row(self, act: str, cf: str) -> BootstrapRow:
        for r in self.rows:
            if r.act == act and r.cf == cf:
                return r
        raise KeyError((act, cf))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([getattr(r, c) if c in ("act", "cf") else repr(float(getattr(r, c)))
                        for c in REPORT_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "columns": list(REPORT_COLUMNS),
            "rows": [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in self.rows],
            "plugin": [{"act": r.act, "cf": r.cf, "myGrpPlugin": r.myGrpPlugin,
                        "theirGrpPlugin": r.theirGrpPlugin} for r in self.rows],
            "n_resamples": self.n_resamples,
            "seed": self.seed,
            "n_discarded": self.n_discarded,
            "statistic": self.statistic,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BootstrapReport:
        plugin = {(p["act"], p["cf"]): p for p in d.get("plugin", [])}
        rows = []
        for r in d["rows"]:
            p = plugin.get((r["act"], r["cf"]), {})
            rows.append(BootstrapRow(**r, myGrpPlugin=p.get("myGrpPlugin", math.nan),
                                     theirGrpPlugin=p.get("theirGrpPlugin", math.nan)))
        return cls(tuple(rows), d["n_resamples"], d["seed"], d.get("n_discarded", 0),
                   d.get("statistic", "mean"), d.get("threshold"))


# cells -> {(i, j): value}; NaN marks an undefined cell and forces a redraw
CellStatistic = Callable[[Sequence[FittedModel], Dataset, GroupIndex, Sequence[tuple[int, int]]],
                         dict]


def mean_cells(models, ds, gi, cells) -> dict:
    return {(i, j): counterfactual_predictions(models, ds, gi, i, j).mean for i, j in cells}


def default_pairs(gi: GroupIndex) -> list[tuple[int, int]]:
    if gi.s == 1:
        return [(0, 0)]
    return [(i, j) for i in range(gi.s) for j in range(gi.s) if i != j]


def _resolve_pairs(gi: GroupIndex, pairs) -> list[tuple[int, int]]:
    if pairs is None:
        return default_pairs(gi)
    out = []
    for i, j in pairs:
        out.append((gi.index(i) if isinstance(i, str) else int(i),
                    gi.index(j) if isinstance(j, str) else int(j)))
    return out


def resample_rng(seed: int, index: int, attempt: int) -> np.random.Generator:
    """Independent stream for one resample attempt, fixed by (seed, index, attempt)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, attempt)))


def _sd(v: np.ndarray, mean: float) -> float:
    return math.sqrt(math.fsum((v - mean) ** 2) / (len(v) - 1))


def run_bootstrap(
    ds: Dataset,
    gi: GroupIndex,
    feature_cols: Sequence[str],
    outcome_col: str,
    spec: ModelSpec,
    statistic: CellStatistic = mean_cells,
    n_resamples: int = 100,
    seed: int = 0,
    pairs=None,
    n_jobs: int = 1,
    label: str = "mean",
    threshold: float | None = None,
) -> BootstrapReport:
    """Generic stratified bootstrap over a per-cell statistic.

    Resample r uses the stream ``resample_rng(seed, r, attempt)``; a failed
    refit or an undefined cell discards the draw and retries with the next
    attempt number. Results land in indexed slots, so the report does not
    depend on ``n_jobs``.
    """
    if n_resamples < 2:
        raise ConfigError(f"n_resamples must be >= 2, got {n_resamples}")
    pairs = _resolve_pairs(gi, pairs)
    cells = sorted({(i, i) for i, _ in pairs} | set(pairs))
    limit = int(MAX_DISCARD_RATE * n_resamples)

    full_models = fit_group_models(ds, gi, feature_cols, outcome_col, spec)
    plugin = statistic(full_models, ds, gi, cells)

    def one(r: int):
        for attempt in range(limit + 1):
            boot = gi.resample(resample_rng(seed, r, attempt))
            try:
                models = fit_group_models(ds, boot, feature_cols, outcome_col, spec)
                vals = statistic(models, ds, boot, cells)
            except FitError:
                continue
            if all(math.isfinite(v) for v in vals.values()):
                return attempt, vals
        return limit + 1, None

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, range(n_resamples)))
    else:
        results = [one(r) for r in range(n_resamples)]
    discarded = sum(a for a, _ in results)
    if discarded > limit or any(v is None for _, v in results):
        raise FitError(
            f"bootstrap discarded {discarded} draws, above the {MAX_DISCARD_RATE:.0%} limit "
            f"({limit} of {n_resamples})"
        )

    table = {c: np.array([v[c] for _, v in results]) for c in cells}
    rows = []
    for i, j in pairs:
        mine, theirs = table[(i, i)], table[(i, j)]
        diff = mine - theirs
        m_mine, m_theirs, m_diff = shifted_mean(mine), shifted_mean(theirs), shifted_mean(diff)
        rows.append(BootstrapRow(
            gi.labels[i], gi.labels[j],
            m_mine, _sd(mine, m_mine), m_theirs, _sd(theirs, m_theirs),
            m_diff, _sd(diff, m_diff),
            float(plugin[(i, i)]), float(plugin[(i, j)]),
        ))
    return BootstrapReport(tuple(rows), n_resamples, seed, discarded, label, threshold)


def bootstrap_audit(
    ds: Dataset,
    gi: GroupIndex,
    feature_cols: Sequence[str],
    outcome_col: str,
    spec: ModelSpec,
    n_resamples: int = 100,
    seed: int = 0,
    pairs=None,
    n_jobs: int = 1,
) -> BootstrapReport:
    """Stratified bootstrap of the counterfactual mean cells.

    ``pairs`` lists (actual, counterfactual) groups by label or position;
    the default is every ordered pair of distinct groups.
    """
    return run_bootstrap(ds, gi, feature_cols, outcome_col, spec, mean_cells, n_resamples,
                         seed, pairs, n_jobs)

