"""Predictors P(y) -> s_hat supplying the constant drift P(y) - y."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sips.oracle import GaussianPairMixture, mmse_predict


class Identity:
    def __call__(self, y, context=None):
        return np.array(y, dtype=float)


class OracleClean:
    """Returns the paired clean signal; only meaningful in tests."""

    def __call__(self, y, context=None):
        if context is None:
            raise ValueError("OracleClean needs the paired clean signal as context")
        s = np.asarray(context, dtype=float)
        if s.shape != np.shape(y):
            raise ValueError(f"context shape {s.shape} does not match input {np.shape(y)}")
        return s.copy()


@dataclass(frozen=True)
class MmsePosteriorMean:
    prior: GaussianPairMixture

    def __call__(self, y, context=None):
        y = np.asarray(y, dtype=float)
        d = self.prior.dim
        if y.size % d:
            raise ValueError(f"input size {y.size} is not a multiple of dimension {d}")
        return mmse_predict(self.prior, y.reshape(-1, d)).reshape(y.shape)


@dataclass(frozen=True)
class Perturbed:
    """``gain * inner(y) + bias``; models a miscalibrated predictor."""

    inner: object
    gain: float = 1.0
    bias: float | np.ndarray = 0.0

    def __call__(self, y, context=None):
        return self.gain * self.inner(y, context) + np.asarray(self.bias, dtype=float)


def predict(kind, y, context=None) -> np.ndarray:
    """Apply predictor ``kind`` to ``y``; ``context`` is the paired s if known."""
    out = kind(y, context)
    if np.shape(out) != np.shape(y):
        raise ValueError("predictor output must match the input shape")
    return out


def bind(kind, context=None):
    """Fix the context so ``kind`` can be handed to the sampler as ``P(y)``."""
    return lambda y: predict(kind, y, context)
