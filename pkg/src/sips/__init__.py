"""Stochastic-interpolant sampling with a predictive/generative drift split."""

from sips.errors import ConfigError, DivergenceError, DomainError
from sips.schedule import NoiseSchedule

__all__ = ["ConfigError", "DivergenceError", "DomainError", "NoiseSchedule"]
__version__ = "0.1.0"
