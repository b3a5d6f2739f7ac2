"""Event-camera simulation, voxel-grid encoding and motion-distillation kernels."""

from .errors import (
    EvMotionError,
    FormatError,
    InputError,
    NumericError,
)
from .events import Event, EventStream

__all__ = [
    "Event",
    "EventStream",
    "EvMotionError",
    "FormatError",
    "InputError",
    "NumericError",
]

__version__ = "0.1.0"
