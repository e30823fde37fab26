"""Optimization toolkit for pinching-antenna systems."""
from ._accel import COMPILED
from .coupling import CouplingParams, equal_power_spacings, radiation_ratios, spacing_for_targets
from .model import ActivationPattern, Scenario, build_channels, build_geometry, effective_channel

__version__ = "0.1.0"

__all__ = [
    "COMPILED", "ActivationPattern", "CouplingParams", "Scenario", "build_channels",
    "build_geometry", "effective_channel", "equal_power_spacings", "radiation_ratios",
    "spacing_for_targets",
]
