"""Decoupled diffusion over per-frame box motion.

The forward process splits data-to-noise into two analytic parts: a
constant-velocity attenuation that drives the clean motion to zero over
t in [0, 1], and a Wiener term that grows zero into unit normal noise.
Their sum gives the noisy sample

    M_t = M_0 + t*c + sqrt(t)*z,   c = -M_0,   z ~ N(0, I).

Because the attenuation is analytic, the reverse conditional admits any
step size, down to a single step at dt = t = 1 whose variance coefficient
dt*(t-dt)/t vanishes. The one-branch reduction substitutes the algebraic
identity z = (M_t - (t-1)c)/sqrt(t) so only the attenuation needs to be
predicted by the network.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import InvalidInputError, Motion, NumericError

T_MIN = 0.001


def _as_motion_array(m) -> np.ndarray:
    if isinstance(m, Motion):
        return m.as_array()
    arr = np.asarray(m, dtype=np.float64)
    if arr.shape[-1] != 4:
        raise InvalidInputError(f"motion array must have trailing dimension 4, got {arr.shape}")
    return arr


def _check_time(t, lo: float = T_MIN, what: str = "t") -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)) or np.any(t < lo) or np.any(t > 1.0):
        raise InvalidInputError(f"{what} must lie in [{lo}, 1], got {t!r}")
    return t


def _col(t: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Align a scalar-or-(B,) time with a (..., 4) value array."""
    t = np.asarray(t, dtype=np.float64)
    return t[..., None] if like.ndim > 1 else t


@dataclass(frozen=True)
class NoisyMotion:
    """A motion sample on the diffusion time axis; t=0 is clean data."""

    values: np.ndarray
    t: float | np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("NoisyMotion values must be finite")
        if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
            raise InvalidInputError(f"NoisyMotion time must lie in [0, 1], got {self.t!r}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ForwardDecomposition:
    """The two forward sub-processes; data_term + noise_term == M_t."""

    data_term: np.ndarray
    noise_term: np.ndarray


@dataclass(frozen=True)
class TrainingSample:
    condition: np.ndarray  # (n, 8)
    target: np.ndarray  # (4,) clean motion M_0


class TrainingSet:
    """Stacked training samples: conditions (N, n, 8) and targets (N, 4)."""

    def __init__(self, conditions: np.ndarray, targets: np.ndarray):
        conditions = np.asarray(conditions, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if conditions.ndim != 3 or conditions.shape[-1] != 8:
            raise InvalidInputError(f"conditions must be (N, n, 8), got {conditions.shape}")
        if targets.shape != (conditions.shape[0], 4):
            raise InvalidInputError(f"targets must be (N, 4), got {targets.shape}")
        self.conditions = conditions
        self.targets = targets

    @classmethod
    def from_samples(cls, samples: Sequence[TrainingSample]) -> "TrainingSet":
        if not samples:
            raise InvalidInputError("empty training set")
        return cls(np.stack([s.condition for s in samples]), np.stack([s.target for s in samples]))

    def __len__(self) -> int:
        return self.conditions.shape[0]

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(self.conditions[i], self.targets[i])


# ---------------------------------------------------------------------------
# forward / reverse process


def attenuation_constant(m0) -> np.ndarray:
    """The constant attenuation velocity c = -M_0 (solves M_0 + int_0^1 c dt = 0)."""
    return -_as_motion_array(m0)


def forward_diffuse(m0, t, z) -> tuple[NoisyMotion, ForwardDecomposition]:
    """Noise clean motion to time t: M_t = (1-t)*M_0 + sqrt(t)*z."""
    m0 = _as_motion_array(m0)
    z = np.asarray(z, dtype=np.float64)
    t = _check_time(t)
    tc = _col(t, m0)
    data_term = (1.0 - tc) * m0
    noise_term = np.sqrt(tc) * z
    return NoisyMotion(data_term + noise_term, t), ForwardDecomposition(data_term, noise_term)


def derive_noise(noisy: NoisyMotion, c) -> np.ndarray:
    """Invert the forward process for z given the attenuation constant:
    z = (M_t - (t-1)*c) / sqrt(t)."""
    t = _check_time(noisy.t)
    c = np.asarray(c, dtype=np.float64)
    tc = _col(t, noisy.values)
    return (noisy.values - (tc - 1.0) * c) / np.sqrt(tc)


def reverse_step(noisy: NoisyMotion, dt, c, z=None, noise=None) -> NoisyMotion:
    """One reverse conditional step from t to t - dt.

    With z given, the mean is M_t - dt*c - (dt/sqrt(t))*z (two-branch
    form); without z, the one-branch reduction ((t-dt)/t)*M_t - (dt/t)*c.
    The variance coefficient dt*(t-dt)/t multiplies ``noise``; it is
    exactly zero when dt == t, making the final step deterministic.
    """
    t = np.asarray(noisy.t, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt <= 0) or np.any(dt > t):
        raise InvalidInputError(f"need 0 < dt <= t, got dt={dt!r}, t={t!r}")
    c = np.asarray(c, dtype=np.float64)
    m = noisy.values
    tc, dtc = _col(t, m), _col(dt, m)
    if z is None:
        mu = ((tc - dtc) / tc) * m - (dtc / tc) * c
    else:
        z = np.asarray(z, dtype=np.float64)
        mu = m - dtc * c - (dtc / np.sqrt(tc)) * z
    sigma2 = dtc * (tc - dtc) / tc
    out = mu if noise is None else mu + np.sqrt(sigma2) * np.asarray(noise, dtype=np.float64)
    return NoisyMotion(out, t - dt)


# ---------------------------------------------------------------------------
# sampling


def _normal_draws(rng, b: int) -> np.ndarray:
    """(b, 4) standard normal; rng may be one Generator or one per row."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((b, 4))
    draws = [r.standard_normal(4) for r in rng]
    if len(draws) != b:
        raise InvalidInputError(f"need {b} rng streams, got {len(draws)}")
    return np.stack(draws)


def sample_k_steps(k: int, windows, model, rng, deterministic: bool = False):
    """Generate motion by iterating the reverse step K times from t = 1.

    ``windows`` is one (n, 8) condition window or a (B, n, 8) batch;
    ``rng`` is a numpy Generator or one Generator per batch row. Returns a
    Motion for a single window, else a (B, 4) array. ``deterministic``
    suppresses the noise term at every step (the final step is noise-free
    regardless).
    """
    if k < 1:
        raise InvalidInputError(f"sampling steps must be >= 1, got {k}")
    w = np.asarray(windows, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None]
    b = w.shape[0]
    m = _normal_draws(rng, b)
    for i in range(k, 0, -1):
        t = i / k
        dt = 1.0 / k
        query_t = max(t, T_MIN)
        c_hat, z_hat = model.predict_values(m, np.full(b, query_t), w)
        state = NoisyMotion(m, np.full(b, t))
        sigma2 = dt * (t - dt) / t
        noise = None
        if not deterministic and sigma2 > 0.0:
            noise = _normal_draws(rng, b)
        m = reverse_step(state, dt, c_hat, z=z_hat, noise=noise).values
    return Motion(*m[0]) if single else m


def sample_one_step(windows, model, rng):
    """Single-step generation: draw M_1 ~ N(0, I), predict the attenuation
    at t = 1, return the clean motion (variance coefficient is 0)."""
    return sample_k_steps(1, windows, model, rng)


# ---------------------------------------------------------------------------
# training


def training_loss(c_hat, c, z_hat=None, z=None, z_loss: str = "smooth_l1"):
    """Smooth-L1 between predicted and true attenuation, averaged over
    components (and batch). The two-branch variant adds the noise-head
    term; ``z_loss`` picks smooth-L1 (default) or plain squared error for
    that head.

    Returns a Tensor when any input is a Tensor, else a float.
    """
    graph = isinstance(c_hat, Tensor) or isinstance(z_hat, Tensor)
    ch = c_hat if isinstance(c_hat, Tensor) else Tensor(np.asarray(c_hat, dtype=np.float64))
    loss = ad.mean(ad.smooth_l1(ch - Tensor(np.asarray(c, dtype=np.float64))))
    if z_hat is not None:
        if z is None:
            raise InvalidInputError("z_hat given without z")
        zh = z_hat if isinstance(z_hat, Tensor) else Tensor(np.asarray(z_hat, dtype=np.float64))
        diff = zh - Tensor(np.asarray(z, dtype=np.float64))
        if z_loss == "smooth_l1":
            loss = loss + ad.mean(ad.smooth_l1(diff))
        elif z_loss == "squared":
            loss = loss + ad.mean(ad.mul(diff, diff))
        else:
            raise InvalidInputError(f"unknown z_loss form {z_loss!r}")
    return loss if graph else float(loss.value)


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-scale recipe (800 epochs, batch 2048)
    assumes GPU budgets."""

    steps: int = 5000
    batch_size: int = 256
    learning_rate: float = 1e-4
    t_min: float = T_MIN
    seed: int = 0
    z_loss: str = "smooth_l1"
    stop_below: float | None = None  # end early once the loss dips under this

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidInputError("steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0.0 < self.t_min < 1.0):
            raise InvalidInputError("t_min must lie in (0, 1)")


def train(dataset: TrainingSet, model, config: TrainConfig) -> list[float]:
    """Optimize the model on (condition, clean-motion) pairs.

    Per step: draw a minibatch, a time t ~ U[t_min, 1] and noise z per
    sample, diffuse forward, predict, take the smooth-L1 loss, and apply
    one Adam step. Mutates ``model.params``; returns the loss history.
    Deterministic for a fixed config seed.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty training set")
    rng = np.random.default_rng(config.seed)
    state = ad.adam_init(model.params)
    names = list(model.params.keys())
    losses: list[float] = []
    for step in range(config.steps):
        try:
            idx = rng.integers(0, len(dataset), size=config.batch_size)
            m0 = dataset.targets[idx]
            cond = dataset.conditions[idx]
            t = rng.uniform(config.t_min, 1.0, size=config.batch_size)
            z = rng.standard_normal((config.batch_size, 4))
            noisy, _ = forward_diffuse(m0, t, z)
            c = attenuation_constant(m0)
            c_hat, z_hat = model.predict_graph(noisy.values, t, cond)
            loss = training_loss(c_hat, c, z_hat, z if z_hat is not None else None, config.z_loss)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericError("loss is not finite")
            grads = ad.backward(loss, [model.params[n] for n in names])
            ad.adam_step(model.params, dict(zip(names, grads)), state, config.learning_rate)
        except NumericError as e:
            raise NumericError(f"training aborted at step {step}: {e}") from e
        losses.append(value)
        if config.stop_below is not None and value < config.stop_below:
            break
    return losses
