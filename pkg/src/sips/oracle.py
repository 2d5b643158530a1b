"""Closed-form Gaussian-mixture prior over paired (clean, corrupted) signals.

Each component is a product over dimensions of 2x2 Gaussians on (S_d, Y_d).
Under the interpolant X_t = t S + (1 - t) Y + gamma(t) Z every component stays
Gaussian, so the conditional velocity, the noise denoiser and the score are
posterior-weighted sums of per-component linear regressions.

Field functions take ``x`` with shape ``(d,)`` or ``(n, d)`` and return an
array of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sips.schedule import NoiseSchedule, check_time

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianPairComponent:
    weight: float
    mean_s: np.ndarray
    mean_y: np.ndarray
    var_ss: np.ndarray
    var_yy: np.ndarray
    cov_sy: np.ndarray

    def __post_init__(self):
        for name in ("mean_s", "mean_y", "var_ss", "var_yy", "cov_sy"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        dims = {len(getattr(self, n)) for n in ("mean_s", "mean_y", "var_ss", "var_yy", "cov_sy")}
        if len(dims) != 1:
            raise ValueError("component fields disagree on dimension")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"weight must lie in (0, 1], got {self.weight}")
        if np.any(self.var_ss <= 0) or np.any(self.var_yy <= 0):
            raise ValueError("variances must be strictly positive")
        # Small slack so that exactly singular pairs (Y = S) are accepted.
        if np.any(self.cov_sy**2 > self.var_ss * self.var_yy * (1.0 + 1e-12)):
            raise ValueError("2x2 covariance is not positive semi-definite")

    @property
    def dim(self) -> int:
        return len(self.mean_s)


@dataclass(frozen=True, eq=False)
class GaussianPairMixture:
    components: tuple[GaussianPairComponent, ...]
    dim: int = field(init=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        object.__setattr__(self, "components", comps)
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError("all components must share the same dimension")
        object.__setattr__(self, "dim", dims.pop())
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {total}, expected 1")

    # Stacked (K, d) views used by the vectorized field evaluations.
    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def _stack(self, name: str) -> np.ndarray:
        return np.stack([getattr(c, name) for c in self.components])

    @classmethod
    def from_dict(cls, spec: dict) -> "GaussianPairMixture":
        comps = []
        for c in spec["components"]:
            comps.append(
                GaussianPairComponent(
                    weight=float(c["weight"]),
                    mean_s=c["mean_s"],
                    mean_y=c["mean_y"],
                    var_ss=c["var_ss"],
                    var_yy=c["var_yy"],
                    cov_sy=c["cov_sy"],
                )
            )
        return cls(tuple(comps))

    def to_dict(self) -> dict:
        return {
            "components": [
                {
                    "weight": c.weight,
                    "mean_s": c.mean_s.tolist(),
                    "mean_y": c.mean_y.tolist(),
                    "var_ss": c.var_ss.tolist(),
                    "var_yy": c.var_yy.tolist(),
                    "cov_sy": c.cov_sy.tolist(),
                }
                for c in self.components
            ]
        }


def marginal_params(mix: GaussianPairMixture, sched: NoiseSchedule, t: float):
    """Per-component mean and variance of X_t, each of shape ``(K, d)``."""
    t = float(check_time(t))
    g = sched.gamma(t)
    ms, my = mix._stack("mean_s"), mix._stack("mean_y")
    vss, vyy, csy = mix._stack("var_ss"), mix._stack("var_yy"), mix._stack("cov_sy")
    mean = t * ms + (1.0 - t) * my
    var = t * t * vss + 2.0 * t * (1.0 - t) * csy + (1.0 - t) ** 2 * vyy + g * g
    return mean, var


# Internal layout is component-major: (K, n) log weights and (K, n, d)
# residuals, so that reductions over components run across contiguous rows.


def _logsumexp_components(a):
    m = a.max(axis=0)
    return m + np.log(np.exp(a - m).sum(axis=0))


def _component_terms(log_w, mean, var, x):
    """Joint log weights ``(K, n)`` and residuals ``(x - m_k) / s_k`` ``(K, n, d)``."""
    diff = x[None, :, :] - mean[:, None, :]
    resid = diff / var[:, None, :]
    const = log_w - 0.5 * np.sum(np.log(var) + LOG_2PI, axis=-1)
    joint = const[:, None] - 0.5 * np.sum(diff * resid, axis=-1)
    return joint, resid


def _responsibilities(joint):
    if joint.shape[0] == 1:
        return np.ones_like(joint)
    r = np.exp(joint - joint.max(axis=0))
    return r / r.sum(axis=0)


def _mix_sum(r, per_comp):
    """Sum over components of ``r[k] * per_comp[k]``; returns ``(n, d)``."""
    if r.shape[0] == 1:
        return per_comp[0] * 1.0
    return np.sum(r[:, :, None] * per_comp, axis=0)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return xb, single


def _posterior_fields(mix, sched, t, x):
    """Responsibilities and standardized residuals shared by every field."""
    xb, single = _as_batch(x, mix.dim)
    mean, var = marginal_params(mix, sched, t)
    joint, resid = _component_terms(np.log(mix.weights), mean, var, xb)
    return _responsibilities(joint), resid, single


def _finish(out, single):
    return out[0] if single else out


def velocity(mix: GaussianPairMixture, sched: NoiseSchedule, t: float, x):
    """E[S - Y | X_t = x]."""
    t = float(check_time(t))
    r, resid, single = _posterior_fields(mix, sched, t, x)
    ms, my = mix._stack("mean_s"), mix._stack("mean_y")
    vss, vyy, csy = mix._stack("var_ss"), mix._stack("var_yy"), mix._stack("cov_sy")
    cross = t * vss + (1.0 - 2.0 * t) * csy - (1.0 - t) * vyy
    per_comp = (ms - my)[:, None, :] + cross[:, None, :] * resid
    return _finish(_mix_sum(r, per_comp), single)


def eta(mix: GaussianPairMixture, sched: NoiseSchedule, t: float, x):
    """E[Z | X_t = x]; identically zero where gamma(t) vanishes."""
    t = float(check_time(t))
    g = sched.gamma(t)
    if g == 0.0:
        xb, single = _as_batch(x, mix.dim)
        return _finish(np.zeros_like(xb), single)
    r, resid, single = _posterior_fields(mix, sched, t, x)
    return _finish(g * _mix_sum(r, resid), single)


def score(mix: GaussianPairMixture, sched: NoiseSchedule, t: float, x):
    """Gradient of log rho_t at x."""
    r, resid, single = _posterior_fields(mix, sched, t, x)
    return _finish(-_mix_sum(r, resid), single)


def drift_fields(mix: GaussianPairMixture, sched: NoiseSchedule, t: float, x):
    """``(velocity, eta)`` evaluated together; used by the forward integrator."""
    t = float(check_time(t))
    g = sched.gamma(t)
    r, resid, _ = _posterior_fields(mix, sched, t, x)
    ms, my = mix._stack("mean_s"), mix._stack("mean_y")
    vss, vyy, csy = mix._stack("var_ss"), mix._stack("var_yy"), mix._stack("cov_sy")
    cross = t * vss + (1.0 - 2.0 * t) * csy - (1.0 - t) * vyy
    v = _mix_sum(r, (ms - my)[:, None, :] + cross[:, None, :] * resid)
    e = g * _mix_sum(r, resid) if g != 0.0 else np.zeros_like(v)
    return v, e


def log_density(mix: GaussianPairMixture, sched: NoiseSchedule, t: float, x):
    """Log density of the X_t mixture; scalar for one point, ``(n,)`` for a batch."""
    xb, single = _as_batch(x, mix.dim)
    mean, var = marginal_params(mix, sched, t)
    joint, _ = _component_terms(np.log(mix.weights), mean, var, xb)
    out = _logsumexp_components(joint)
    return float(out[0]) if single else out


def clean_eta(mix: GaussianPairMixture, sigma: float, x):
    """E[Z | S + sigma Z = x] under the clean marginal; zero when sigma is 0.

    This is the regression target of the denoising objective, where the
    network only ever sees clean samples plus Gaussian noise.
    """
    xb, single = _as_batch(x, mix.dim)
    if sigma == 0.0:
        return _finish(np.zeros_like(xb), single)
    mean = mix._stack("mean_s")
    var = mix._stack("var_ss") + sigma * sigma
    joint, resid = _component_terms(np.log(mix.weights), mean, var, xb)
    return _finish(sigma * _mix_sum(_responsibilities(joint), resid), single)


def clean_residual_variance(mix: GaussianPairMixture, sigma: float) -> float:
    """Summed Var(Z | S + sigma Z) for a single-component prior.

    Only single-component priors have a closed form; mixtures raise.
    """
    if len(mix.components) != 1:
        raise ValueError("closed-form residual variance needs a single component")
    vss = mix.components[0].var_ss
    return float(np.sum(vss / (vss + sigma * sigma)))


def mmse_predict(mix: GaussianPairMixture, y):
    """Posterior mean E[S | Y = y]."""
    yb, single = _as_batch(y, mix.dim)
    ms, my = mix._stack("mean_s"), mix._stack("mean_y")
    vyy, csy = mix._stack("var_yy"), mix._stack("cov_sy")
    joint, _ = _component_terms(np.log(mix.weights), my, vyy, yb)
    per_comp = ms[:, None, :] + (csy / vyy)[:, None, :] * (yb[None, :, :] - my[:, None, :])
    return _finish(_mix_sum(_responsibilities(joint), per_comp), single)


def _choose_components(mix, rng, n):
    if len(mix.components) == 1:
        return np.zeros(n, dtype=int)
    return rng.choice(len(mix.components), size=n, p=mix.weights)


def sample_pair(mix: GaussianPairMixture, rng: np.random.Generator, n: int | None = None):
    """Draw paired ``(s, y)``; shapes ``(d,)`` when ``n`` is None else ``(n, d)``."""
    m = 1 if n is None else n
    k = _choose_components(mix, rng, m)
    ms, my = mix._stack("mean_s")[k], mix._stack("mean_y")[k]
    vss, vyy, csy = mix._stack("var_ss")[k], mix._stack("var_yy")[k], mix._stack("cov_sy")[k]
    z = rng.standard_normal((2, m, mix.dim))
    l11 = np.sqrt(vss)
    l21 = csy / l11
    l22 = np.sqrt(np.maximum(vyy - l21 * l21, 0.0))
    s = ms + l11 * z[0]
    y = my + l21 * z[0] + l22 * z[1]
    return (s[0], y[0]) if n is None else (s, y)


def sample_clean(mix: GaussianPairMixture, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` clean samples touching only the S marginal parameters."""
    k = _choose_components(mix, rng, n)
    ms, vss = mix._stack("mean_s")[k], mix._stack("var_ss")[k]
    return ms + np.sqrt(vss) * rng.standard_normal((n, mix.dim))


def sample_interpolant(
    mix: GaussianPairMixture, sched: NoiseSchedule, t: float, rng: np.random.Generator, n: int
) -> np.ndarray:
    """Direct draws of X_t = t S + (1 - t) Y + gamma(t) Z."""
    t = float(check_time(t))
    s, y = sample_pair(mix, rng, n)
    z = rng.standard_normal(s.shape)
    return t * s + (1.0 - t) * y + sched.gamma(t) * z
