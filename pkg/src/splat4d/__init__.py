"""Motion-aware isotropic 4D Gaussian splatting on the CPU.

Turns a calibrated monocular video bundle (RGB, consistent depth, poses,
intrinsics, motion-probability maps) into a compact 4D Gaussian scene via
grid-pruned initialization and differentiable splatting optimization, then
renders novel viewpoints at arbitrary timestamps.
"""

from . import _threads
from ._threads import get_threads, max_threads, set_threads
from .geometry import DepthMap, Intrinsics, PoseSE3, back_project, project

__version__ = "0.1.0"

__all__ = [
    "Intrinsics",
    "PoseSE3",
    "DepthMap",
    "project",
    "back_project",
    "set_threads",
    "get_threads",
    "max_threads",
    "__version__",
]
