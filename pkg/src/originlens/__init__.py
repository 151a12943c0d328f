"""Local image-provenance verification: manifests, metadata and graded verdicts."""

from .container import ImageBytes, ImageFormat
from .errors import OriginLensError
from .pipeline import Engine, EngineConfig, analyze
from .verdict import Report, Status, Verdict, render_report

__all__ = ["Engine", "EngineConfig", "ImageBytes", "ImageFormat", "OriginLensError", "Report",
           "Status", "Verdict", "analyze", "render_report"]
__version__ = "0.1.0"
