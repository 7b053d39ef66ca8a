"""
Utility modules for echo-moe.
"""

from .analytics import (
    check_dispatch,
    coefficient_of_variation,
    modality_summary,
    routing_frame,
    write_routing_csv,
)
from .performance import PerformanceMetrics, PerformanceMonitor

__all__ = [
    "PerformanceMetrics",
    "PerformanceMonitor",
    "routing_frame",
    "check_dispatch",
    "coefficient_of_variation",
    "write_routing_csv",
    "modality_summary",
]
