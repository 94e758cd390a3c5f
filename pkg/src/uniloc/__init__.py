"""Unified localization: model-based geometry routed with an unsupervised
channel chart for mixed LoS/NLoS street scenes."""

__version__ = "0.1.0"

from . import chansim, chart, estimation, evalsuite, ot, scene, setmetrics

__all__ = [
    "chansim",
    "chart",
    "estimation",
    "evalsuite",
    "ot",
    "scene",
    "setmetrics",
    "__version__",
]
