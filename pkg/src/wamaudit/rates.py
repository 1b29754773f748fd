"""Counterfactual positive-classification rates for binary outcomes.

Group j's model classifies group i's rows as positive when the predicted
probability m = mu_j(x) reaches the threshold (inclusive). Two rate
normalizations are available:

``paper_gamma``
    sum(I * (1 - m)) / sum(I): the expected share of true negatives among
    the predicted positives, i.e. P(Y = 0 | Yhat = 1). Although this
    quantity is often called a false positive rate, it is a
    false-discovery-style ratio.
``conditional_fpr``
    sum(I * (1 - m)) / sum(1 - m): the textbook false positive rate
    P(Yhat = 1 | Y = 0).

A cell whose denominator is zero is undefined (NaN), never 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import counterfactual_predictions
from .errors import ConfigError, FitError
from .inference import BootstrapReport, run_bootstrap
from .regressors import PROBABILITY_KINDS, FittedModel, ModelSpec
from .tabular import Dataset, GroupIndex

VARIANTS = ("paper_gamma", "conditional_fpr")
VARIANT_NOTES = {
    "paper_gamma": "normalized by the predicted-positive count: estimates P(Y=0 | Yhat=1), "
                   "a false-discovery-style rate",
    "conditional_fpr": "normalized by the expected negative mass: estimates P(Yhat=1 | Y=0)",
}


@dataclass(frozen=True)
class RateMatrix:
    group_labels: tuple[str, ...]
    values: np.ndarray
    variant: str = "paper_gamma"
    threshold: float = 0.5
    n_clamped: int = 0
    warnings: dict = field(default_factory=dict)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def note(self) -> str:
        return VARIANT_NOTES[self.variant]

    def cell(self, act: str, cf: str) -> float:
        return float(self.values[self.group_labels.index(act), self.group_labels.index(cf)])


def rate_from_probabilities(m: np.ndarray, variant: str = "paper_gamma",
                            threshold: float = 0.5) -> float:
    """Rate of one cell from predicted probabilities; NaN when undefined."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown rate variant {variant!r}; have {VARIANTS}")
    m = np.asarray(m, dtype=np.float64)
    positive = m >= threshold
    numerator = math.fsum((1.0 - m)[positive])
    if variant == "paper_gamma":
        denominator = float(positive.sum())
    else:
        denominator = math.fsum(1.0 - m)
    if denominator == 0:
        return math.nan
    return numerator / denominator


def _probabilities(models, ds, gi, i, j) -> tuple[np.ndarray, int]:
    m = counterfactual_predictions(models, ds, gi, i, j).per_row
    if models[j].kind in PROBABILITY_KINDS:
        return m, 0
    clamped = int(((m < 0) | (m > 1)).sum())
    return np.clip(m, 0.0, 1.0), clamped


def _check_binary(ds: Dataset, outcome_col: str | None):
    if outcome_col is None:
        return
    y = ds.numeric(outcome_col)
    if not np.isin(y, (0.0, 1.0)).all():
        raise FitError(f"rate audits need a 0/1 outcome; {outcome_col!r} is not binary")


def compute_rate_matrix(
    models: Sequence[FittedModel],
    ds: Dataset,
    gi: GroupIndex,
    variant: str = "paper_gamma",
    threshold: float = 0.5,
    outcome_col: str | None = None,
) -> RateMatrix:
    """Counterfactual rate of every (actual, counterfactual) cell.

    Non-probabilistic models (linear probability models) have their
    predictions clamped to [0, 1]; the number of clamped values is reported.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown rate variant {variant!r}; have {VARIANTS}")
    _check_binary(ds, outcome_col)
    values = np.full((gi.s, gi.s), np.nan)
    clamped = 0
    for i in range(gi.s):
        for j in range(gi.s):
            m, c = _probabilities(models, ds, gi, i, j)
            clamped += c
            values[i, j] = rate_from_probabilities(m, variant, threshold)
    warns = {}
    if clamped:
        warns["clamped_predictions"] = clamped
    undefined = int(np.isnan(values).sum())
    if undefined:
        warns["undefined_cells"] = undefined
    return RateMatrix(tuple(gi.labels), values, variant, threshold, clamped, warns)


def _rate_cells(variant, threshold):
    def statistic(models, ds, gi, cells):
        return {(i, j): rate_from_probabilities(_probabilities(models, ds, gi, i, j)[0],
                                                variant, threshold)
                for i, j in cells}
    return statistic


def rate_bootstrap(
    ds: Dataset,
    gi: GroupIndex,
    feature_cols: Sequence[str],
    outcome_col: str,
    spec: ModelSpec,
    n_resamples: int = 100,
    seed: int = 0,
    pairs=None,
    variant: str = "paper_gamma",
    threshold: float = 0.5,
    n_jobs: int = 1,
) -> BootstrapReport:
    """Stratified bootstrap of rate cells; undefined cells trigger a redraw."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown rate variant {variant!r}; have {VARIANTS}")
    _check_binary(ds, outcome_col)
    return run_bootstrap(ds, gi, feature_cols, outcome_col, spec, _rate_cells(variant, threshold),
                         n_resamples, seed, pairs, n_jobs, label=variant, threshold=threshold)
