"""Geodesic optimization toolkit: manifold kernels for the sphere, the
rotation group and the Stiefel manifold, large-step optimizers (steepest
descent, Newton, conjugate gradient), isospectral matrix flows, and the
one-step-per-sample subspace tracker, with a batch experiment CLI."""

from .linalg import (
    ArgumentError,
    FactoredQR,
    SkewCanonical,
    householder_qr,
    jacobi_eigh,
    skew_canonical,
    skew_expm,
)
from .manifolds import (
    Sphere,
    SpecialOrthogonal,
    Stiefel,
    StiefelPoint,
    TangentM,
    gram_schmidt,
    stiefel_coset,
)
from .objectives import (
    DiagSquaresTrace,
    GenRayleigh,
    LeftSingularObjective,
    Negated,
    RayleighQuotient,
    SingularPairObjective,
    SymmetricOperator,
    TraceQN,
)
from .optimizers import (
    CgDriver,
    LineSearchParams,
    StoppingCriteria,
    brockett_step,
    conjugate_gradient,
    newton,
    newton_trial_step,
    rayleigh_exact_step,
    steepest_descent,
    wolfe_powell_search,
)
from .eigensolvers import (
    EigResult,
    extreme_eigpair_sphere,
    newton_rayleigh,
    sort_frame,
    topk_eigpairs_stiefel,
    topk_left_singular,
)
from .flows import (
    double_bracket_flow,
    fit_exponential_rate,
    genray_flow,
    predicted_svd_rates,
    rate_report,
    rk4_integrate,
    so_gradient_flow,
    svd_flow_sigma,
    svd_flow_uv,
)
from .tracking import (
    CovarianceWindow,
    FadingMemory,
    Scenario,
    TrackerConfig,
    scenario_first,
    scenario_second,
    scenario_third,
    track,
    track_from_data,
)

__version__ = "0.1.0"
