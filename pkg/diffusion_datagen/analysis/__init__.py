"""Dataset quality metrics and report rendering."""

from .quality import (
    QualityReport,
    build_report,
    consistency_curve,
    count_noops,
    emit_report,
    mean_squared_jerk,
    read_report_csv,
)

__all__ = [
    "QualityReport",
    "count_noops",
    "mean_squared_jerk",
    "consistency_curve",
    "build_report",
    "emit_report",
    "read_report_csv",
]
