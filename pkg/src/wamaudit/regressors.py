"""Per-group conditional-mean estimators behind one fit/predict interface.

Three kinds ship: ordinary least squares (``linear``), logistic regression
fit by IRLS (``logistic``) and k-nearest-neighbor averaging (``knn``).
Further kinds can be plugged in with :func:`register_model_kind`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import ConfigError, FitError
from .tabular import Dataset, EncodedMatrix, EncodingMap

SEPARATION_LIMIT = 1e6
KNN_CHUNK = 1 << 22  # distance-matrix cells evaluated per block


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "linear"
    knn_k: int = 10
    knn_standardize: bool = True
    irls_max_iter: int = 50
    irls_tol: float = 1e-8
    ridge_lambda: float = 0.0

    def __post_init__(self):
        if self.kind not in _FITTERS:
            raise ConfigError(f"unknown model kind {self.kind!r}; have {sorted(_FITTERS)}")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if not self.irls_tol > 0:
            raise ConfigError("irls_tol must be > 0")
        if self.irls_max_iter < 1:
            raise ConfigError("irls_max_iter must be >= 1")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be >= 0")


@dataclass(frozen=True)
class FittedModel:
    """A fitted group model.

    Linear and logistic models store an intercept and a slope per design
    column; ``fit_means`` are the fit-row column means the slopes pivot
    around. Only linear models carry ``coef_covariance`` and ``sigma2``.
    kNN models keep their training points and standardization statistics.
    """

    spec: ModelSpec
    encoding_map: EncodingMap
    n_fit: int
    fit_group: str | None = None
    intercept: float | None = None
    coefficients: np.ndarray | None = None
    fit_means: np.ndarray | None = None
    coef_covariance: np.ndarray | None = None
    sigma2: float | None = None
    dropped_columns: tuple[int, ...] = ()
    train_X: np.ndarray | None = None
    train_y: np.ndarray | None = None
    scale_mean: np.ndarray | None = None
    scale_sd: np.ndarray | None = None
    state: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.spec.kind

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self, X)

    def predict_rows(self, ds: Dataset, rows) -> tuple[np.ndarray, int]:
        """Encode ``rows`` with this model's map and predict; also returns the unseen-level count."""
        X, unseen = self.encoding_map.transform(ds, rows)
        return predict(self, X), unseen

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "spec": asdict(self.spec),
            "encoding_map": self.encoding_map.to_dict(),
            "n_fit": self.n_fit,
            "fit_group": self.fit_group,
            "intercept": self.intercept,
            "coefficients": arr(self.coefficients),
            "fit_means": arr(self.fit_means),
            "coef_covariance": arr(self.coef_covariance),
            "sigma2": self.sigma2,
            "dropped_columns": list(self.dropped_columns),
            "train_X": arr(self.train_X),
            "train_y": arr(self.train_y),
            "scale_mean": arr(self.scale_mean),
            "scale_sd": arr(self.scale_sd),
            "state": self.state,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> FittedModel:
        def arr(a):
            return None if a is None else np.array(a, dtype=np.float64)

        width = EncodingMap.from_dict(d["encoding_map"]).width
        cov = arr(d["coef_covariance"])
        if cov is not None:
            cov = cov.reshape(width, width)
        train_X = arr(d["train_X"])
        if train_X is not None:
            train_X = train_X.reshape(-1, width)

        return cls(
            spec=ModelSpec(**d["spec"]),
            encoding_map=EncodingMap.from_dict(d["encoding_map"]),
            n_fit=d["n_fit"],
            fit_group=d["fit_group"],
            intercept=d["intercept"],
            coefficients=arr(d["coefficients"]),
            fit_means=arr(d["fit_means"]),
            coef_covariance=cov,
            sigma2=d["sigma2"],
            dropped_columns=tuple(d["dropped_columns"]),
            train_X=train_X,
            train_y=arr(d["train_y"]),
            scale_mean=arr(d["scale_mean"]),
            scale_sd=arr(d["scale_sd"]),
            state=d.get("state", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> FittedModel:
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Shared numerics


def shifted_mean(v: np.ndarray) -> float:
    """Mean computed as v[0] + fsum(v - v[0]) / n; exact for constant input."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return math.nan
    v0 = float(v[0])
    return v0 + math.fsum(v - v0) / v.size


def _active_columns(X: np.ndarray, constant: tuple[int, ...]) -> tuple[np.ndarray, tuple[int, ...]]:
    const = set(constant)
    if X.shape[0]:
        const |= {int(k) for k in np.flatnonzero(np.ptp(X, axis=0) == 0)}
    dropped = tuple(sorted(const))
    active = np.array([k for k in range(X.shape[1]) if k not in const], dtype=np.int64)
    return active, dropped


def _pivoted_qr(Xc: np.ndarray, names: list[str], group):
    """Pivoted QR with an explicit rank check; raises on collinear columns."""
    Q, R, piv = linalg.qr(Xc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(Xc.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < Xc.shape[1]:
        bad = [names[k] for k in piv[rank:]]
        raise FitError(f"design is rank deficient; collinear columns: {bad}", group)
    return Q, R, piv


def _check_size(n: int, p: int, group):
    if n <= p + 1:
        raise FitError(f"need more than {p + 1} rows to fit {p} slopes, have {n}", group)


# ---------------------------------------------------------------------------
# Fitters


def _fit_linear(spec: ModelSpec, design: EncodedMatrix, y: np.ndarray, group) -> FittedModel:
    X = design.design
    n, width = X.shape
    active, dropped = _active_columns(X, design.constant_columns)
    names = [design.feature_names[k] for k in active]
    Xa = X[:, active]
    p = Xa.shape[1]
    _check_size(n, p, group)

    means = Xa.mean(axis=0) if p else np.zeros(0)
    ybar = shifted_mean(y)
    Xc = Xa - means
    yc = y - ybar
    beta_a = np.zeros(p)
    cov_a = np.zeros((p, p))
    rss = float(yc @ yc)
    if p:
        lam = spec.ridge_lambda
        if lam > 0:
            Xs = np.vstack([Xc, math.sqrt(lam) * np.eye(p)])
            ys = np.concatenate([yc, np.zeros(p)])
            Q, R, piv = linalg.qr(Xs, mode="economic", pivoting=True)
        else:
            Xs, ys = Xc, yc
            Q, R, piv = _pivoted_qr(Xc, names, group)
        sol = linalg.solve_triangular(R, Q.T @ ys)
        beta_a[piv] = sol
        resid = yc - Xc @ beta_a
        rss = float(resid @ resid)
        Rinv = linalg.solve_triangular(R, np.eye(p))
        inv_piv = Rinv @ Rinv.T
        inv = np.empty_like(inv_piv)
        inv[np.ix_(piv, piv)] = inv_piv
        if lam > 0:
            # ridge sandwich (X'X + lam I)^-1 X'X (X'X + lam I)^-1
            inv = inv @ (Xc.T @ Xc) @ inv
            inv = 0.5 * (inv + inv.T)
        cov_a = inv
    sigma2 = rss / (n - p - 1)
    cov_a = sigma2 * cov_a

    beta = np.zeros(width)
    beta[active] = beta_a
    cov = np.zeros((width, width))
    cov[np.ix_(active, active)] = cov_a
    fit_means = X.mean(axis=0)
    fit_means[active] = means
    intercept = ybar - float(fit_means @ beta)
    if dropped:
        dropped_names = [design.feature_names[k] for k in dropped]
        note = {"dropped_constant": dropped_names}
    else:
        note = {}
    return FittedModel(
        spec, design.encoding_map, n, group, intercept, beta, fit_means, cov, sigma2,
        dropped, state=note,
    )


def _fit_logistic(spec: ModelSpec, design: EncodedMatrix, y: np.ndarray, group) -> FittedModel:
    X = design.design
    n, width = X.shape
    if not np.isin(y, (0.0, 1.0)).all():
        raise FitError("logistic outcome must be coded 0/1", group)
    active, dropped = _active_columns(X, design.constant_columns)
    names = [design.feature_names[k] for k in active]
    Xa = X[:, active]
    p = Xa.shape[1]
    _check_size(n, p, group)
    means = Xa.mean(axis=0) if p else np.zeros(0)
    X1 = np.column_stack([np.ones(n), Xa - means])
    if p:
        _pivoted_qr(X1[:, 1:], names, group)

    theta = np.zeros(p + 1)
    for _ in range(spec.irls_max_iter):
        mu = expit(X1 @ theta)
        w = mu * (1.0 - mu)
        H = X1.T @ (w[:, None] * X1)
        g = X1.T @ (y - mu)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(H, g, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            raise FitError("IRLS Hessian is singular (complete separation?)", group) from None
        theta = theta + step
        if np.abs(theta).max() > SEPARATION_LIMIT:
            raise FitError("coefficients diverge (complete separation)", group)
        if np.abs(step).max() < spec.irls_tol:
            break
    else:
        raise FitError(
            f"IRLS did not converge in {spec.irls_max_iter} iterations (possible separation)",
            group,
        )

    beta = np.zeros(width)
    beta[active] = theta[1:]
    fit_means = X.mean(axis=0)
    fit_means[active] = means
    intercept = float(theta[0]) - float(fit_means @ beta)
    return FittedModel(spec, design.encoding_map, n, group, intercept, beta, fit_means,
                       dropped_columns=dropped)


def _fit_knn(spec: ModelSpec, design: EncodedMatrix, y: np.ndarray, group) -> FittedModel:
    X = np.array(design.design, dtype=np.float64)
    n = X.shape[0]
    if n < spec.knn_k:
        raise FitError(f"knn_k={spec.knn_k} exceeds the {n} fit rows", group)
    if spec.knn_standardize:
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
    else:
        mean = np.zeros(X.shape[1])
        sd = np.ones(X.shape[1])
    return FittedModel(spec, design.encoding_map, n, group, train_X=(X - mean) / sd,
                       train_y=np.array(y, dtype=np.float64), scale_mean=mean, scale_sd=sd)


def _predict_linear(model: FittedModel, X: np.ndarray) -> np.ndarray:
    return X @ model.coefficients + model.intercept


def _predict_logistic(model: FittedModel, X: np.ndarray) -> np.ndarray:
    return expit(X @ model.coefficients + model.intercept)


def knn_neighbors(train: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask (queries x train) selecting each query's k nearest rows.

    Squared Euclidean distances accumulate feature by feature. Distance ties
    at the k-th place go to the lower training-row index.
    """
    nq, nt = query.shape[0], train.shape[0]
    mask = np.zeros((nq, nt), dtype=bool)
    step = max(1, KNN_CHUNK // max(nt, 1))
    for lo in range(0, nq, step):
        q = query[lo:lo + step]
        d = np.zeros((q.shape[0], nt))
        for f in range(train.shape[1]):
            diff = q[:, f, None] - train[None, :, f]
            d += diff * diff
        kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
        less = d < kth
        tied = d == kth
        need = k - less.sum(axis=1, keepdims=True)
        mask[lo:lo + step] = less | (tied & (np.cumsum(tied, axis=1) <= need))
    return mask


def _predict_knn(model: FittedModel, X: np.ndarray) -> np.ndarray:
    Z = (X - model.scale_mean) / model.scale_sd
    mask = knn_neighbors(model.train_X, Z, model.spec.knn_k)
    y = model.train_y
    k = model.spec.knn_k
    return np.array([math.fsum(y[row]) / k for row in mask])


Fitter = Callable[[ModelSpec, EncodedMatrix, np.ndarray, "str | None"], FittedModel]
Predictor = Callable[[FittedModel, np.ndarray], np.ndarray]

_FITTERS: dict[str, Fitter] = {
    "linear": _fit_linear,
    "logistic": _fit_logistic,
    "knn": _fit_knn,
}
_PREDICTORS: dict[str, Predictor] = {
    "linear": _predict_linear,
    "logistic": _predict_logistic,
    "knn": _predict_knn,
}
PROBABILITY_KINDS = {"logistic", "knn"}


def register_model_kind(kind: str, fitter: Fitter, predictor: Predictor,
                        probabilistic: bool = False) -> None:
    """Add a model kind; the fitter must return a :class:`FittedModel`.

    Custom fitters can keep whatever they need in ``FittedModel.state``.
    """
    _FITTERS[kind] = fitter
    _PREDICTORS[kind] = predictor
    if probabilistic:
        PROBABILITY_KINDS.add(kind)


def fit(spec: ModelSpec, design: EncodedMatrix, y, group: str | None = None) -> FittedModel:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != design.design.shape[0]:
        raise FitError(
            f"outcome length {y.shape[0]} does not match {design.design.shape[0]} design rows",
            group,
        )
    return _FITTERS[spec.kind](spec, design, y, group)


def predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.encoding_map.width:
        raise FitError(
            f"rows have shape {X.shape}, model expects width {model.encoding_map.width}",
            model.fit_group,
        )
    return _PREDICTORS[model.kind](model, X)


def coefficient_covariance(model: FittedModel) -> np.ndarray:
    """OLS slope covariance sigma2 (Xc'Xc)^-1, Xc the fit-row-centered design."""
    if model.kind != "linear" or model.coef_covariance is None:
        raise FitError(f"coefficient covariance needs a linear model, got {model.kind!r}",
                       model.fit_group)
    return model.coef_covariance
