"""Noise schedule, closed-form forward diffusion, ε-loss and the DDPM reverse step.

Timesteps are 0-based: ``t`` indexes arrays of length ``T`` and
``alpha_bar[t] = prod(alpha[:t + 1])``.
"""
from dataclasses import dataclass

import numpy as np

from gentron.errors import ConfigError, ShapeError
from gentron.numerics.tensor import Tensor, as_tensor, mean

DEFAULT_STEPS = 1000
DESK_STEPS = 50
_REFERENCE_BETAS = (1e-4, 0.02)
_MAX_DEFAULT_BETA = 0.5


@dataclass(frozen=True)
class ScheduleState:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self):
        return len(self.beta)

    def to_dict(self):
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def make_linear_schedule(T=DEFAULT_STEPS, beta_start=None, beta_end=None):
    """Linear β schedule, endpoints inclusive, with σ_t = sqrt(β_t).

    When the endpoints are omitted they default to the 1e-4..0.02 reference
    range rescaled by ``1000 / T``, so short desk schedules still end near
    pure noise (identical to the reference range at T = 1000). The default
    end is capped at 0.5 so very short schedules stay valid.
    """
    T = int(T)
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    scale = DEFAULT_STEPS / T
    if beta_start is None:
        beta_start = min(_REFERENCE_BETAS[0] * scale, _MAX_DEFAULT_BETA)
    if beta_end is None:
        beta_end = min(_REFERENCE_BETAS[1] * scale, _MAX_DEFAULT_BETA)
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    return ScheduleState(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha), sigma=np.sqrt(beta))


def schedule_from_dict(d):
    return make_linear_schedule(d["T"], d["beta_start"], d["beta_end"])


def _check_t(t, s):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= s.T):
        raise ConfigError(f"timestep out of range [0, {s.T}): {t}")
    return t


def _per_sample(coef, x):
    """Broadcast a per-sample coefficient vector over the trailing axes of ``x``."""
    coef = np.asarray(coef)
    return coef.reshape(coef.shape + (1,) * (x.ndim - coef.ndim))


def q_sample(x0, t, eps, s):
    """sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·eps.

    ``t`` may be an int or a per-sample integer array matching ``x0``'s
    leading axis.
    """
    x0 = np.asarray(x0.data if isinstance(x0, Tensor) else x0)
    eps = np.asarray(eps.data if isinstance(eps, Tensor) else eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"q_sample: x0 {x0.shape} and eps {eps.shape} differ")
    t = _check_t(t, s)
    ab = s.alpha_bar[t]
    signal = _per_sample(np.sqrt(ab), x0)
    noise = _per_sample(np.sqrt(1.0 - ab), x0)
    return (signal * x0 + noise * eps).astype(x0.dtype, copy=False)


def ddpm_step(x_t, eps_hat, t, z, s):
    """x_{t-1} = (x_t - β_t/sqrt(1-ᾱ_t)·eps_hat)/sqrt(α_t) + σ_t·z."""
    x_t = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t)
    eps_hat = np.asarray(eps_hat.data if isinstance(eps_hat, Tensor) else eps_hat)
    z = np.zeros_like(x_t) if z is None else np.asarray(z.data if isinstance(z, Tensor) else z)
    if not (x_t.shape == eps_hat.shape == z.shape):
        raise ShapeError(f"ddpm_step shapes differ: {x_t.shape}, {eps_hat.shape}, {z.shape}")
    t = int(_check_t(t, s))
    if t == 0 and np.any(z != 0):
        raise ConfigError("ddpm_step at t=0 requires z = 0")
    coef = (1.0 - s.alpha[t]) / np.sqrt(1.0 - s.alpha_bar[t])
    out = (x_t - coef * eps_hat) / np.sqrt(s.alpha[t]) + s.sigma[t] * z
    return out.astype(x_t.dtype, copy=False)


def eps_loss(eps_hat, eps):
    """Mean squared error over every element, as a scalar Tensor."""
    eps_hat = as_tensor(eps_hat)
    eps = as_tensor(eps, eps_hat)
    if eps_hat.shape != eps.shape:
        raise ShapeError(f"eps_loss: {eps_hat.shape} vs {eps.shape}")
    diff = eps_hat - eps
    return mean(diff * diff)


def ddpm_sample_loop(eps_fn, shape, s, rng, dtype=np.float32, trajectory=None):
    """Ancestral sampling from x_T ~ N(0, I) down to x_0.

    ``eps_fn(x_t, t)`` returns the (possibly guided) noise prediction. Draw
    order from ``rng`` is fixed: x_T first, then one z per step for t > 0.
    When ``trajectory`` is a list, every x_t (including x_T) is appended to it.
    """
    x = rng.normal(shape).astype(dtype)
    if trajectory is not None:
        trajectory.append(x)
    for t in range(s.T - 1, -1, -1):
        eps_hat = eps_fn(x, t)
        z = rng.normal(shape).astype(dtype) if t > 0 else None
        x = ddpm_step(x, eps_hat, t, z, s)
        if trajectory is not None:
            trajectory.append(x)
    return x
