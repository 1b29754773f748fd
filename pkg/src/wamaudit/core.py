"""Group models and the walk-a-mile counterfactual matrix.

Cell (i, j) of the matrix is the mean, over group i's rows, of group j's
fitted regression function: what group i's average outcome would be if
group i were treated by group j's outcome model while keeping its own
features. Each cell mean is ``math.fsum(predictions) / n_i`` (a correctly
rounded sum, so the result does not depend on evaluation order).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, FitError
from .regressors import PROBABILITY_KINDS, FittedModel, ModelSpec, fit
from .tabular import Dataset, GroupIndex, encode

CENTERED_KINDS = {"linear", "logistic"}


@dataclass(frozen=True)
class WamMatrix:
    """Rows are actual groups, columns counterfactual groups."""

    group_labels: tuple[str, ...]
    values: np.ndarray
    n_per_group: tuple[int, ...]
    model_kind: str
    outcome_name: str
    unseen_levels: int = 0
    warnings: dict = field(default_factory=dict)

    def cell(self, act: str, cf: str) -> float:
        return float(self.values[self.group_labels.index(act), self.group_labels.index(cf)])


@dataclass(frozen=True)
class CounterfactualPredictions:
    actual_group: str
    cf_group: str
    per_row: np.ndarray
    row_ids: np.ndarray
    n_unseen: int = 0

    @property
    def mean(self) -> float:
        return math.fsum(self.per_row) / len(self.per_row)


def resolve_features(
    ds: Dataset,
    outcome_col: str,
    sensitive_cols: Sequence[str],
    include: Sequence[str] | None = None,
    exclude: Sequence[str] = (),
) -> list[str]:
    """Default features: every column that is neither outcome nor sensitive."""
    banned = {outcome_col, *sensitive_cols}
    if include:
        clash = banned.intersection(include)
        if clash:
            raise DataError(f"feature list contains outcome/sensitive columns: {sorted(clash)}")
        for name in include:
            ds[name]
        feats = list(include)
    else:
        feats = [c for c in ds.column_names if c not in banned]
    return [c for c in feats if c not in set(exclude)]


def _fit_one(ds, rows, feature_cols, y, spec, label) -> FittedModel:
    design = encode(ds, feature_cols, rows, center=spec.kind in CENTERED_KINDS)
    return fit(spec, design, y[rows], group=label)


def fit_group_models(
    ds: Dataset,
    gi: GroupIndex,
    feature_cols: Sequence[str],
    outcome_col: str,
    spec: ModelSpec,
    n_jobs: int = 1,
) -> list[FittedModel]:
    """Fit one model per group, each on that group's rows with its own encoding."""
    banned = set(gi.columns) | {outcome_col}
    clash = banned.intersection(feature_cols)
    if clash:
        raise DataError(f"features must exclude outcome and sensitive columns: {sorted(clash)}")
    y = ds.numeric(outcome_col)
    if spec.kind == "logistic" and not np.isin(y, (0.0, 1.0)).all():
        raise FitError(f"logistic outcome {outcome_col!r} must be coded 0/1")
    jobs = [(rows, label) for rows, label in zip(gi.row_ids, gi.labels)]
    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(lambda a: _fit_one(ds, a[0], feature_cols, y, spec, a[1]), jobs))
    return [_fit_one(ds, rows, feature_cols, y, spec, label) for rows, label in jobs]


def _check_aligned(models: Sequence[FittedModel], gi: GroupIndex):
    if len(models) != gi.s:
        raise DataError(f"{len(models)} models for {gi.s} groups")


def counterfactual_predictions(
    models: Sequence[FittedModel], ds: Dataset, gi: GroupIndex, i: str | int, j: str | int
) -> CounterfactualPredictions:
    """Group j's model applied to group i's rows."""
    _check_aligned(models, gi)
    i = gi.index(i) if isinstance(i, str) else i
    j = gi.index(j) if isinstance(j, str) else j
    if not (0 <= i < gi.s and 0 <= j < gi.s):
        raise DataError(f"group position out of range: ({i}, {j})")
    rows = gi.row_ids[i]
    pred, unseen = models[j].predict_rows(ds, rows)
    return CounterfactualPredictions(gi.labels[i], gi.labels[j], pred, rows, unseen)


def cell_predictions(models, ds, gi) -> list[list[CounterfactualPredictions]]:
    return [[counterfactual_predictions(models, ds, gi, i, j) for j in range(gi.s)]
            for i in range(gi.s)]


def compute_wam_matrix(
    models: Sequence[FittedModel],
    ds: Dataset,
    gi: GroupIndex,
    outcome_name: str = "",
    cells: list[list[CounterfactualPredictions]] | None = None,
) -> WamMatrix:
    _check_aligned(models, gi)
    cells = cells if cells is not None else cell_predictions(models, ds, gi)
    values = np.array([[c.mean for c in row] for row in cells]).reshape(gi.s, gi.s)
    unseen = sum(c.n_unseen for row in cells for c in row)
    kind = models[0].kind if models else ""
    warns = {}
    if unseen:
        warns["unseen_levels"] = unseen
    dropped = sorted({n for m in models for n in m.state.get("dropped_constant", [])})
    if dropped:
        warns["dropped_constant_columns"] = dropped
    return WamMatrix(tuple(gi.labels), values, tuple(gi.sizes), kind, outcome_name,
                     unseen, warns)


def group_means(ds: Dataset, gi: GroupIndex, outcome_col: str) -> np.ndarray:
    y = ds.numeric(outcome_col)
    return np.array([math.fsum(y[r]) / len(r) for r in gi.row_ids])


def is_probabilistic(models: Sequence[FittedModel]) -> bool:
    return all(m.kind in PROBABILITY_KINDS for m in models)
