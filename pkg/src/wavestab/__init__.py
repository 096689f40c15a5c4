"""Stability analysis of a finite-dimensional plant closed through a damped string."""

from .model import CoupledSystem, LtiPlant, WaveChannel, classify, load_plant
from .systems import BUILTIN

__all__ = ["BUILTIN", "CoupledSystem", "LtiPlant", "WaveChannel", "classify", "load_plant"]
__version__ = "0.1.0"
