"""Activation-aware weight pruning and quantization by projected gradient descent."""
from .baselines import (
    ActivationNorms,
    awq_lite_quantize,
    magnitude_prune,
    rtn_quantize,
    sequential_pipeline,
    wanda_prune,
)
from .engine import (
    CompressionConfig,
    CompressionResult,
    ConfigError,
    DivergenceError,
    LossTrace,
    RampSchedule,
    StepRule,
    initialize,
    pgd_step,
    run,
    step_size,
)
from .projections import (
    QuantGrid,
    QuantSpec,
    RowSparsitySpec,
    fit_quant_grid,
    project_joint,
    project_row_sparse,
    quantize_to_grid,
)
from .tensor import (
    ConvergenceError,
    Covariance,
    CovarianceError,
    NumericalError,
    ShapeError,
    SpectralSummary,
    activation_loss,
    covariance,
    frobenius,
    spectral_extremes,
)

__version__ = "0.1.0"
