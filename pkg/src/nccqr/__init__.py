"""Non-crossing conformalized quantile regression (NC-CQR).

Fits a pair of neural quantile curves with a ReLU penalty that discourages
the upper curve from dipping below the lower one, then wraps them in a
split-conformal band with finite-sample marginal coverage. Includes
synthetic benchmark generators with analytic quantile oracles, evaluation
statistics, and cross-validated penalty selection.
"""

from .losses import (
    QuantileLevels,
    check_loss,
    check_subgrad,
    relu_penalty,
    penalized_objective,
    objective_output_grads,
)
from .network import (
    NetworkParams,
    Gradients,
    AdamState,
    init_network,
    forward,
    forward_batch,
    backward,
    init_adam_state,
    adam_step,
    save_network,
    load_network,
)
from .data import (
    ModelKind,
    ErrorKind,
    SyntheticSpec,
    Dataset,
    Scaler,
    SplitIndices,
    THETA_STAR,
    generate,
    oracle_quantile,
    normal_inv_cdf,
    load_csv,
    save_csv,
    standardize,
    split,
)
from .conformal import (
    TrainConfig,
    TrainingDiverged,
    ModelFamily,
    QuantileModel,
    ConformalBand,
    fit_nccqr,
    fit_cqr,
    fit_linear_qr,
    fit_qr,
    conformity_scores,
    empirical_quantile,
    calibrate,
    predict_interval,
    save_band,
    load_band,
)
from .evaluation import (
    coverage,
    avg_length,
    crossing_rate_nn,
    crossing_rate_ci,
    oracle_gap,
    EvalReport,
    evaluate,
    Experiment,
    ReplicationSummary,
    replicate,
    format_table,
)
from .model_selection import CvPlan, default_grid, alc, select_lambda

__version__ = "0.1.0"
