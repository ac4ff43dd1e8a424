"""Factor-augmented partially linear models: estimation and high-dimensional inference."""
from .core import (
    STREAM_BOOTSTRAP,
    STREAM_CV,
    STREAM_SIMULATION,
    AffineMap,
    Dataset,
    DegenerateFitError,
    DimensionError,
    FaplmError,
    GroundTruth,
    InfeasibleError,
    NonFiniteError,
    RankDeficientError,
    RngSpec,
    rescale_z_to_unit,
    validate_dataset,
)
from .factors import (
    FactorCount,
    FactorDecomposition,
    estimate_factors,
    factor_scores,
    no_factors,
    select_num_factors,
)
from .inference import (
    InferenceConfig,
    InferenceResult,
    bootstrap_critical_value,
    debias,
    estimate_noise_variance,
    max_statistic,
    run_test,
)
from .kernels import BACKEND
from .precision import PrecisionEstimate, Surrogates, compute_surrogates, estimate_precision
from .regression import FitConfig, FitResult, FittedModel, fit_faplm, fit_model, predict
from .simulation import (
    SimulationConfig,
    run_estimation_study,
    run_power_study,
    simulate_dataset,
)
from .splines import BasisMatrix, SplineBasis, build_basis, evaluate_basis, projector_onto_basis

__version__ = "0.1.0"
