"""Denoisers D(t, x) -> E[Z | X_t = x] and a small trainable MLP.

The MLP regresses the injected noise of the mirror interpolant
``S + (a + gamma(t)) Z`` from clean samples only. Gradients are derived by
hand; :func:`loss_and_grad` is checked against finite differences in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sips.errors import DivergenceError
from sips.oracle import GaussianPairMixture, clean_eta, sample_clean
from sips.schedule import NoiseSchedule, check_time

MODEL_FORMAT = "sips-mlp"
MODEL_VERSION = 1


@dataclass
class MlpDenoiser:
    """Fully connected tanh network on features ``(x, t, a + gamma(t))``.

    ``weights[i]`` has shape ``(fan_out, fan_in)``.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.layer_sizes
        if len(sizes) < 2 or sizes[0] != sizes[-1] + 2:
            raise ValueError("layer sizes must run from d + 2 inputs to d outputs")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes")

    @property
    def dim(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def init(cls, dim: int, hidden=(64, 64), seed: int = 0) -> "MlpDenoiser":
        """Glorot-uniform weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        sizes = [dim + 2, *hidden, dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases)

    @classmethod
    def zeros(cls, dim: int, hidden=(64, 64)) -> "MlpDenoiser":
        sizes = [dim + 2, *hidden, dim]
        weights = [np.zeros((o, i)) for i, o in zip(sizes, sizes[1:])]
        biases = [np.zeros(o) for o in sizes[1:]]
        return cls(sizes, weights, biases)

    def copy(self) -> "MlpDenoiser":
        return MlpDenoiser(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def _features(net: MlpDenoiser, sched: NoiseSchedule, t, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.dim:
        raise ValueError(f"expected inputs of shape (n, {net.dim}), got {x.shape}")
    t = np.broadcast_to(check_time(t), (x.shape[0],))
    return np.column_stack([x, t, sched.training_sigma(t)])


def _forward_cached(net, h):
    acts = [h]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def forward(net: MlpDenoiser, sched: NoiseSchedule, t, x) -> np.ndarray:
    """Evaluate the network; ``x`` is ``(d,)`` or ``(n, d)``, ``t`` scalar or ``(n,)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    out = _forward_cached(net, _features(net, sched, t, xb))[-1]
    return out[0] if single else out


def loss_and_grad(net: MlpDenoiser, sched: NoiseSchedule, s, z, t):
    """Batch mean of ``||D(t, s + (a + gamma(t)) z) - z||^2`` and its gradient.

    Returns ``(loss, grads)`` with ``grads`` ordered like :meth:`MlpDenoiser.params`.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    n = s.shape[0]
    sigma = sched.training_sigma(t)
    x = s + sigma[:, None] * z
    with np.errstate(over="ignore", invalid="ignore"):
        acts = _forward_cached(net, _features(net, sched, t, x))
        err = acts[-1] - z
        loss = float(np.sum(err * err) / n)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite denoising loss", 0)

    grads = []
    delta = 2.0 * err / n
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[i])
        if i > 0:
            # acts[i] is tanh output of the previous layer
            delta = (delta @ net.weights[i]) * (1.0 - acts[i] ** 2)
    grads.reverse()
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    iterations: int = 20_000
    seed: int = 0
    first_moment_decay: float = 0.9
    second_moment_decay: float = 0.999
    epsilon_stabilizer: float = 1e-8
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be positive")
        for name in ("first_moment_decay", "second_moment_decay"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.epsilon_stabilizer <= 0:
            raise ValueError("epsilon_stabilizer must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def draw_training_batch(prior: GaussianPairMixture, rng: np.random.Generator, n: int):
    """Clean samples, standard noise and uniform times for one batch."""
    s = sample_clean(prior, rng, n)
    z = rng.standard_normal(s.shape)
    t = rng.uniform(0.0, 1.0, size=n)
    return s, z, t


def train(
    net: MlpDenoiser,
    sched: NoiseSchedule,
    prior: GaussianPairMixture,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
):
    """Adam on the denoising objective; returns ``(trained_net, losses)``.

    Only the clean marginal of ``prior`` is read. ``net`` is not modified.
    """
    if prior.dim != net.dim:
        raise ValueError("prior and network dimensions differ")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    net = net.copy()
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = (
        cfg.first_moment_decay,
        cfg.second_moment_decay,
        cfg.epsilon_stabilizer,
        cfg.learning_rate,
    )
    losses = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        s, z, t = draw_training_batch(prior, rng, cfg.batch_size)
        try:
            loss, grads = loss_and_grad(net, sched, s, z, t)
        except DivergenceError:
            raise DivergenceError("training loss became non-finite", it) from None
        losses[it] = loss
        c1 = 1.0 - b1 ** (it + 1)
        c2 = 1.0 - b2 ** (it + 1)
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= b1
            mi += (1.0 - b1) * g
            vi *= b2
            vi += (1.0 - b2) * g * g
            p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return net, losses


def save_model(path, net: MlpDenoiser, sched: NoiseSchedule, seed: int) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "schedule": {"a": sched.a, "c": sched.c},
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path) -> tuple[MlpDenoiser, NoiseSchedule, int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} document")
    sizes = [int(s) for s in doc["layer_sizes"]]
    weights = [
        np.asarray(w, dtype=float).reshape(o, i)
        for w, i, o in zip(doc["weights"], sizes, sizes[1:])
    ]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    sched = NoiseSchedule(c=doc["schedule"]["c"], a=doc["schedule"]["a"])
    return MlpDenoiser(sizes, weights, biases), sched, int(doc["seed"])


# Denoiser realizations used by the sampler: callables (t, x) -> z_hat, where
# x carries the trailing dimension d (a flat array of scalars when d == 1).


class ZeroDenoiser:
    def __call__(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class OracleEtaDenoiser:
    """Exact regression target of the training objective for a mixture prior."""

    prior: GaussianPairMixture
    sched: NoiseSchedule

    def __call__(self, t, x):
        sigma = float(self.sched.training_sigma(t))
        return _apply_pointwise(lambda xb: clean_eta(self.prior, sigma, xb), x, self.prior.dim)


@dataclass(frozen=True)
class TrainedDenoiser:
    net: MlpDenoiser
    sched: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __call__(self, t, x):
        return _apply_pointwise(lambda xb: forward(self.net, self.sched, t, xb), x, self.net.dim)


def _apply_pointwise(fn, x, dim):
    """Run ``fn`` on ``x`` reshaped to rows of length ``dim``; restore the shape."""
    x = np.asarray(x, dtype=float)
    if x.size % dim:
        raise ValueError(f"input size {x.size} is not a multiple of dimension {dim}")
    return fn(x.reshape(-1, dim)).reshape(x.shape)
