"""Spectral dynamics of a linear teacher-student gradient flow: bulk density,
teacher outliers, transient detection windows and finite-N simulation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateBlockError,
    DegenerateRootError,
    DysonConvergenceError,
    DysonDomainError,
    EdgeDetectionError,
    InvalidArgumentError,
    ResolutionError,
    SingularityError,
)
from .model import (  # noqa: E402
    KernelCoeffs,
    ModelParams,
    VarianceProfile,
    kernel_coefficients,
    variance_profile,
)
from .dyson import (  # noqa: E402
    BulkEdges,
    DensityCurve,
    PartialTransforms,
    bulk_edges,
    dyson_derivative,
    solve_dyson,
    spectral_density,
)
from .outlier import (  # noqa: E402
    OutlierResult,
    QuadraticForms,
    RegimeReport,
    classify_regime,
    critical_theta,
    edge_discriminant,
    optimal_stopping,
    outlier_location,
    overlap_theory,
    quadratic_forms,
    refine_transition,
)
from .simulate import (  # noqa: E402
    Histogram,
    SimConfig,
    SpectrumSample,
    empirical_density,
    empirical_overlap_curve,
    powerlaw_singular_values,
    run_ensemble,
    sample_powerlaw_flow,
    sample_two_block,
)
from .scans import (  # noqa: E402
    PhaseDiagramTL,
    PhaseDiagramTT,
    phase_diagram_theta_lambda,
    phase_diagram_theta_time,
    theta_c_curve,
)
