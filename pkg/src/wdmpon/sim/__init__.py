"""Simulators: event-driven polling, frame-based allocation and the homogeneous toy model."""

from .polling import run, run_gpon_frame
from .report import (
    SimReport,
    VacationSummary,
    detect_growth,
    measure_vacations,
    pooled_mean,
    write_csv,
)

__all__ = [
    "run",
    "run_gpon_frame",
    "SimReport",
    "VacationSummary",
    "detect_growth",
    "measure_vacations",
    "pooled_mean",
    "write_csv",
]
