"""Executable structural checks on state sequences."""

from .anomaly import AnomalyReport, anomaly_frontier, certify_anomaly_free, probe_directions
from .diagnose import DIAGNOSTIC_COLUMNS, TrajectoryDiagnostics, diagnose_trajectory
from .l1norm import (
    L1Decomposition,
    OutlierSet,
    exists_large_witness,
    l1_span_norm,
    outlier_count_bound,
    outlier_indices,
    outlier_threshold,
)
from .leverage import LeverageReport, leverage_diagnostics, theoretical_constants
from .polynomials import (
    char_poly,
    ch_noise_bound,
    ch_recurrence_residual,
    faddeev_leverrier,
    is_small_multiple,
    jordan_char_poly,
    jordan_power_check,
    poly_mod,
    primorial,
    small_multiple_search,
)
from .volume import DoublingRecord, check_volume_doubling, hull_volume

__all__ = [
    "DIAGNOSTIC_COLUMNS",
    "TrajectoryDiagnostics",
    "diagnose_trajectory",
    "AnomalyReport",
    "DoublingRecord",
    "L1Decomposition",
    "LeverageReport",
    "OutlierSet",
    "anomaly_frontier",
    "certify_anomaly_free",
    "ch_noise_bound",
    "ch_recurrence_residual",
    "char_poly",
    "check_volume_doubling",
    "exists_large_witness",
    "faddeev_leverrier",
    "hull_volume",
    "is_small_multiple",
    "jordan_char_poly",
    "jordan_power_check",
    "l1_span_norm",
    "leverage_diagnostics",
    "outlier_count_bound",
    "outlier_indices",
    "outlier_threshold",
    "poly_mod",
    "primorial",
    "probe_directions",
    "small_multiple_search",
    "theoretical_constants",
]
