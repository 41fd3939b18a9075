"""Scalar curvature flow on axisymmetric n-spheres."""
from ._kernels import BACKEND
from .conditions import (
    ConditionReport,
    CriticalPoint,
    MorseSystem,
    Verdict,
    check_condition_i,
    check_nondegeneracy,
    check_simple_bubble,
    check_symmetry_conditions,
    condition_report,
    index_count,
    morse_counts,
    pole_critical_points,
    solve_morse_system,
)
from .conformal import Dilation, NormalizationResult, bubble, center_of_mass, dilation_map, normalize, pullback
from .errors import SphereFlowError
from .flow import (
    BoundsReport,
    DiagnosticsRecord,
    FlowParams,
    FlowState,
    Outcome,
    bounds_report,
    detect_concentration,
    energy_functional,
    f2,
    homotopy_path,
    lam,
    lambda_prime,
    run,
    scalar_curvature,
    step,
    total_energy,
)
from .sphere import Grid, build_grid, laplace_beltrami, quad_average

__version__ = "0.1.0"
