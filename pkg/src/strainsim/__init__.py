"""Reduced-order variable-strain dynamics and two-level task-space control
for a tendon-driven conical soft arm."""

__version__ = "0.1.0"

from .model import RobotModel, RodGeometry, StrainBasis, TendonRoute  # noqa: F401
from .liegroup import Pose  # noqa: F401
