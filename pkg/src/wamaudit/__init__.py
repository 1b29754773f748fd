"""Walk-a-mile group-counterfactual fairness audits.

For groups i and j, the audit estimates the mean outcome group i would
have under group j's outcome model while keeping group i's own features.
"""

__version__ = "0.1.0"

from .core import (
    CounterfactualPredictions,
    WamMatrix,
    compute_wam_matrix,
    counterfactual_predictions,
    fit_group_models,
    group_means,
    resolve_features,
)
from .errors import ConfigError, DataError, FitError, WamError
from .inference import (
    BootstrapReport,
    BootstrapRow,
    GroupMoments,
    LinearVarianceReport,
    analytic_linear_table,
    analytic_linear_variance,
    bootstrap_audit,
    confidence_interval,
    group_moments,
)
from .rates import RateMatrix, compute_rate_matrix, rate_bootstrap, rate_from_probabilities
from .regressors import (
    FittedModel,
    ModelSpec,
    coefficient_covariance,
    fit,
    predict,
    register_model_kind,
)
from .tabular import (
    Column,
    Dataset,
    EncodedMatrix,
    EncodingMap,
    GroupIndex,
    SchemaConfig,
    encode,
    load_csv,
    scalarize_sensitive,
)
