"""Change-point testing for the drift of periodic Ornstein-Uhlenbeck processes."""

__version__ = "0.1.0"

from .asymptotics import (
    BridgeQuantileTable,
    GumbelNorm,
    critical_value_full,
    gumbel_cdf,
    gumbel_norming,
    gumbel_quantile,
    simulate_bridge_sup,
)
from .errors import (
    DependentBasis,
    DomainError,
    GridTooCoarse,
    HorizonTooShort,
    NonpositiveAlpha,
    NumericalError,
    OUChangeError,
    SigmaNonpositive,
    SingularStats,
    WindowInvalid,
)
from .inference import CandidateGrid, GlrCurve, MleFit, TestReport, glr_curve, loglik, mle, run_test
from .model import (
    DriftParams,
    ModelSpec,
    PeriodicBasis,
    eval_mean_reversion,
    fourier_basis,
    gram_matrix,
    h_tilde,
    orthonormalize,
    sigma_matrix,
)
from .simulate import (
    ChangeSpec,
    SamplePath,
    simulate_euler,
    simulate_exact,
    simulate_with_change,
    stationary_init,
)
from .suffstats import SuffStats, accumulate, combine, estimate_sigma_sq, prefix_stats
