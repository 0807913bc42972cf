"""Short simple orthogonal geodesic chords on Riemannian 2-disks.

Pipeline: metric analysis -> ball-cover disk flows -> Berger fan and radial
sweepout -> two-parameter min-max -> certified chords, with a double-normal
scan as an independent oracle and a collar extension for non-convex
boundaries.
"""

from .config import DEFAULTS, Tolerances
from .metrics import MetricDisk, TangentVec, catalog, load_metric_json, save_metric_json

__all__ = [
    "DEFAULTS",
    "Tolerances",
    "MetricDisk",
    "TangentVec",
    "catalog",
    "load_metric_json",
    "save_metric_json",
]

__version__ = "0.1.0"
