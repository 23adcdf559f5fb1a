"""Geodesics of O(n)-invariant positive Lagrangian spheres in A_m Milnor fibers."""

__version__ = "0.1.0"

from .cycle import (  # noqa: E402
    InvariantFunction,
    PolynomialArc,
    PositivityReport,
    SymmetricCircle,
    check_positive,
    cycle_from_arc,
    inner,
    integrate,
    is_special,
    measure_density,
    norm,
    project_mean_zero,
    round_cycle,
)
from .errors import LagGeoflowError  # noqa: E402
from .fiber import MilnorFiber, branch_track_sqrt, eval_f, eval_fprime, make_fiber  # noqa: E402
from .foliation import (  # noqa: E402
    ChartPoint,
    HitCurve,
    LeafTrace,
    MatchResult,
    MaxArclength,
    area_form,
    direction,
    horizontal_match,
    singular_angles,
    trace_leaf,
)
from .geodesic import (  # noqa: E402
    GeodesicPath,
    TransportMap,
    bvp_solve,
    check_horizontal_family,
    distance,
    exp_isometry_check,
    hausdorff,
    horizontal_reparametrize,
    ivp_solve,
    pullback,
    transport,
    triangle_identity,
    verify_geodesic,
)
from .tolerances import DEFAULT, ToleranceProfile  # noqa: E402
