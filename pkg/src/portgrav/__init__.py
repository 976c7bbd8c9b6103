"""Gravity toolkit for bilateral portfolio holdings.

PPML estimation with high-dimensional fixed effects, cluster-robust
inference, great-circle distances, distance-bin histograms and
residency-to-nationality restatement diagnostics.
"""

__version__ = "0.1.0"

from .design import build_baseline_design, build_timevarying_design, detect_collinear  # noqa: E402
from .estimator import FitConfig, FitResult, detect_separation, fit_ppml  # noqa: E402
from .geo import DistanceTable, GeoPoint, bin_holdings, build_distance_table, haversine_km  # noqa: E402
from .inference import ClusteredVcov, cluster_vcov, coefficient_table, confidence_interval  # noqa: E402
from .panel import Basis, GroupAssignment, Instrument, Panel, assign_groups, ingest_panel  # noqa: E402
from .restatement import allocation_shares, passthrough_estimate, restatement_diff, top_destinations  # noqa: E402
from .synth import DgpConfig, generate_panel  # noqa: E402

__all__ = [
    "Basis",
    "ClusteredVcov",
    "DgpConfig",
    "DistanceTable",
    "FitConfig",
    "FitResult",
    "GeoPoint",
    "GroupAssignment",
    "Instrument",
    "Panel",
    "allocation_shares",
    "assign_groups",
    "bin_holdings",
    "build_baseline_design",
    "build_distance_table",
    "build_timevarying_design",
    "cluster_vcov",
    "coefficient_table",
    "confidence_interval",
    "detect_collinear",
    "detect_separation",
    "fit_ppml",
    "generate_panel",
    "haversine_km",
    "ingest_panel",
    "passthrough_estimate",
    "restatement_diff",
    "top_destinations",
]
