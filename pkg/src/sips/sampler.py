"""Euler-Maruyama integration of the SIPS inference dynamics.

Two integrators share one discretization (coefficients evaluated at the left
end of every step):

* :func:`sips_sample` runs the inference loop with a constant predictor drift
  ``v = P(y) - y`` and a denoiser standing in for E[Z | X_t].
* :func:`forward_sde_sample` integrates the same SDE with the exact
  Gaussian-mixture fields, which is what the marginal-equivalence checks use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from sips.errors import DivergenceError
from sips.oracle import GaussianPairMixture, drift_fields
from sips.schedule import NoiseSchedule

Predictor = Callable[[np.ndarray], np.ndarray]
Denoiser = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2 or pts[0] != 0.0 or pts[-1] != 1.0:
            raise ValueError("time grid must start at 0 and end at 1")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def steps(self) -> int:
        return len(self.points) - 1

    def index_of(self, t: float) -> int:
        """Index of grid point ``t``; raises if ``t`` is not on the grid."""
        pts = np.asarray(self.points)
        i = int(np.argmin(np.abs(pts - t)))
        if abs(pts[i] - t) > 1e-12:
            raise ValueError(f"t={t} is not a point of the time grid")
        return i


def uniform_grid(steps: int) -> TimeGrid:
    if steps < 1:
        raise ValueError(f"need at least one step, got {steps}")
    pts = [i / steps for i in range(steps + 1)]
    return TimeGrid(tuple(pts))


@dataclass(frozen=True)
class SamplerConfig:
    kappa: float = 0.0
    steps: int = 15
    grid: TimeGrid | None = None
    post_process: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        if self.grid is None:
            object.__setattr__(self, "grid", uniform_grid(self.steps))
        elif self.grid.steps != self.steps:
            raise ValueError("steps must equal the number of grid intervals")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite sampler state", step)


def sips_sample(
    y,
    predictor: Predictor,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sample a clean estimate from observation ``y``.

    ``y`` may have any shape; predictor and denoiser must preserve it. Noise
    is drawn elementwise, so a batch of observations runs as independent
    trajectories sharing one generator.
    """
    y = np.asarray(y, dtype=float)
    _check_finite(y, 0)
    if rng is None:
        rng = cfg.rng()
    pred = np.asarray(predictor(y), dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"predictor changed shape {y.shape} -> {pred.shape}")
    # The drift P(y) - y is constant, so its Euler sum up to t_i is exactly
    # t_i (P(y) - y). Writing x_i = (1 - t_i) y + t_i P(y) + r_i, with r_i the
    # accumulated denoiser and noise increments, keeps the predictor part free
    # of rounding drift: with r = 0 the output at t = 1 is P(y) bit for bit.
    x = y.copy()
    r = np.zeros_like(y)
    pts = cfg.grid.points
    kappa = cfg.kappa
    for i in range(cfg.grid.steps):
        t, dt = pts[i], pts[i + 1] - pts[i]
        z_hat = np.asarray(denoiser(t, x), dtype=float)
        if z_hat.shape != x.shape:
            raise ValueError(f"denoiser changed shape {x.shape} -> {z_hat.shape}")
        r = r + (sched.gamma_dot(t) - kappa) * z_hat * dt
        if kappa > 0.0:
            z = rng.standard_normal(x.shape)
            r = r + np.sqrt(2.0 * dt * kappa * sched.gamma(t)) * z
        t_next = pts[i + 1]
        x = (1.0 - t_next) * y + t_next * pred + r
        _check_finite(x, i)
    if cfg.post_process:
        x = np.asarray(predictor(x), dtype=float)
    return x


def forward_sde_sample(
    prior: GaussianPairMixture,
    y0,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
    t_stop: float = 1.0,
    record: Sequence[float] = (),
):
    """Integrate the forward SDE with the exact mixture fields from ``X_0 = y0``.

    ``y0`` is ``(d,)`` or ``(n, d)``. Returns ``X_{t_stop}``; when ``record``
    lists grid times up to ``t_stop``, returns ``(X_{t_stop}, {t: X_t})``
    instead so that one run can feed several marginal comparisons.
    """
    grid = cfg.grid
    stop = grid.index_of(t_stop)
    if stop == 0:
        raise ValueError("t_stop must be > 0")
    wanted = {grid.index_of(t): t for t in record}
    if any(i > stop for i in wanted):
        raise ValueError("recorded times must not exceed t_stop")
    if rng is None:
        rng = cfg.rng()
    x = np.array(y0, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    _check_finite(x, 0)
    snapshots = {}
    pts = grid.points
    kappa = cfg.kappa
    for i in range(stop):
        t, dt = pts[i], pts[i + 1] - pts[i]
        v, e = drift_fields(prior, sched, t, x)
        x = x + (v + (sched.gamma_dot(t) - kappa) * e) * dt
        if kappa > 0.0:
            x = x + np.sqrt(2.0 * dt * kappa * sched.gamma(t)) * rng.standard_normal(x.shape)
        _check_finite(x, i)
        if i + 1 in wanted:
            snapshots[wanted[i + 1]] = x[0].copy() if single else x.copy()
    out = x[0] if single else x
    return (out, snapshots) if record else out
