"""Online dynamic-object removal for LiDAR static map construction."""

from .grid import DynamicLevel, GridConfig, GridIndex, Level
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "DynamicLevel", "GridConfig", "GridIndex", "Level", "__version__"]
