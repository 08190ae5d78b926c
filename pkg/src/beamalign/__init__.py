"""Learned hierarchical beam alignment for mmWave MISO and MIMO links."""

from .config import DESK_MIMO, DESK_MISO, MIMO_PRESET, MISO_PRESET, PRESETS, SystemConfig

__version__ = "0.1.0"

__all__ = ["SystemConfig", "PRESETS", "MISO_PRESET", "MIMO_PRESET", "DESK_MISO", "DESK_MIMO"]
