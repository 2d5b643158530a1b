"""Noise schedule gamma(t) = c * sin^2(pi t) and the training noise level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sips.errors import DomainError

DEFAULT_C = 0.5
DEFAULT_A = 0.1


def check_time(t):
    """Reject times outside [0, 1] instead of clamping them."""
    arr = np.asarray(t, dtype=float)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise DomainError(f"time must lie in [0, 1], got {t!r}")
    return arr


@dataclass(frozen=True)
class NoiseSchedule:
    """Amplitude ``c`` of the interpolant noise and training offset ``a``.

    All methods accept scalars or arrays of times and return the same shape.
    """

    c: float = DEFAULT_C
    a: float = DEFAULT_A

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c >= 0):
            raise ValueError(f"c must be finite and >= 0, got {self.c}")
        if not (np.isfinite(self.a) and self.a >= 0):
            raise ValueError(f"a must be finite and >= 0, got {self.a}")

    def gamma(self, t):
        t = check_time(t)
        # sin(pi) is not exactly zero in floating point; pin the endpoints.
        out = self.c * np.sin(np.pi * t) ** 2
        out = np.where((t == 0.0) | (t == 1.0), 0.0, out)
        return out[()] if out.ndim == 0 else out

    def gamma_dot(self, t):
        t = check_time(t)
        out = self.c * np.pi * np.sin(2.0 * np.pi * t)
        return out[()] if out.ndim == 0 else out

    def training_sigma(self, t):
        """Noise level ``a + gamma(t)`` seen by the denoiser during training."""
        return self.a + self.gamma(t)
