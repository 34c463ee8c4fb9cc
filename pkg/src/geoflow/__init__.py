"""geoflow: a numerical workbench for geodesic dynamics on closed orientable
Riemannian surfaces.

Core pieces: chart-based surface models (spheres and tori of revolution,
focusing caps, conformal perturbations), geodesic shooting and closed-geodesic
refinement, Jacobi/Morse index machinery, the curve shortening semi-flow with
intersection bookkeeping, flat-knot signatures and length spectra, and
Birkhoff-annuli hitting-time scans with polygon audits.
"""

from .profiles import CapProfile, CapConstructionError, build_cap
from .surfaces import (
    ChartPoint,
    ConformalPerturbation,
    ConstantFactor,
    DomainError,
    FlatTorus,
    LocalizedBumpFactor,
    ModelSphere,
    RadialBumpFactor,
    RoundSphere,
    SurfaceModel,
    TorusOfRevolution,
    build_model_sphere,
    surface_from_json,
)
from .geodesics import (
    ClosedGeodesic,
    GeodesicSegment,
    MeridianTarget,
    ParallelTarget,
    PolylineTarget,
    UnitTangent,
    cap_rotation,
    cap_rotation_derivative,
    exact_meridian,
    exact_meridian_circle,
    exact_parallel,
    exact_torus_line,
    hitting_time,
    refine_closed,
    shoot,
)
from .variational import (
    IndexReport,
    cap_jacobi_transfer_check,
    index_broken,
    index_sturm_liouville,
    local_homology_ranks,
    make_index_report,
    monodromy,
)
from .curves import DiscreteCurve, curve_from_closed_geodesic
from .flow import FlowRun, detect_subloops, run, step, verify_curvature_pde, verify_length_law
from .knots import (
    FlatKnotSignature,
    SpectrumReport,
    homotopy_label,
    link_intersections,
    self_intersections,
    signature,
    spectrum,
)
from .birkhoff import BirkhoffAnnulus, BirkhoffScanReport, annuli_of, boundary_budget, scan
from .arrangement import PolygonAuditReport, polygon_audit

__version__ = "0.1.0"
