"""Guided noise predictions and the sampling loop.

Both compositions are evaluated in a weighted-sum order chosen so that the
telescoping cases are exact in floating point: a unit scale reproduces the
fully conditioned prediction bit for bit and zero scales reproduce the
unconditioned one.
"""
from dataclasses import dataclass

import numpy as np

from gentron.errors import ConfigError, ModeError, ShapeError
from gentron.numerics.tensor import Tensor, no_grad
from gentron.schedule import ddpm_sample_loop
from gentron.video import full_mask, motion_free_mask

DEFAULT_LAMBDA_T = 7.5
DEFAULT_LAMBDA_M = 1.2
DEFAULT_FRAMES = 8


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_T: float = DEFAULT_LAMBDA_T
    lambda_M: float = DEFAULT_LAMBDA_M
    motion_enabled: bool = False
    steps: int = 0  # 0 means the schedule's T

    def __post_init__(self):
        if self.lambda_T < 0 or self.lambda_M < 0:
            raise ConfigError("guidance scales must be non-negative")


def _arr(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def cfg_epsilon(eps_cond, eps_uncond, lambda_T):
    """ε_∅ + λ(ε_c − ε_∅), evaluated as (1 − λ)·ε_∅ + λ·ε_c."""
    c, u = _arr(eps_cond), _arr(eps_uncond)
    if c.shape != u.shape:
        raise ShapeError(f"cfg_epsilon shapes differ: {c.shape} vs {u.shape}")
    return (1.0 - lambda_T) * u + lambda_T * c


def mfg_epsilon(eps_null_null, eps_text_motion, eps_null_motion, lambda_T, lambda_M):
    """Motion-free guidance.

    ε(∅,∅) + λ_T·(ε(c_T,c_M) − ε(∅,c_M)) + λ_M·(ε(∅,c_M) − ε(∅,∅)),
    evaluated as ((1 − λ_M)·ε(∅,∅) + (λ_M − λ_T)·ε(∅,c_M)) + λ_T·ε(c_T,c_M).
    """
    e00, etm, e0m = _arr(eps_null_null), _arr(eps_text_motion), _arr(eps_null_motion)
    if not (e00.shape == etm.shape == e0m.shape):
        raise ShapeError("mfg_epsilon inputs must share a shape")
    return ((1.0 - lambda_M) * e00 + (lambda_M - lambda_T) * e0m) + lambda_T * etm


def guided_eps_fn(model, cond, g, frames=None, null=None):
    """Return ``eps(x_t, t)`` applying CFG (T2I) or motion-free guidance (T2V).

    Motion is switched off only through the temporal mask; the model's
    parameters are the same in all three forwards.
    """
    if null is None:
        null = model.null_condition()
    if g.motion_enabled:
        if not model.inflated:
            raise ModeError("motion guidance needs an inflated T2V model")
        mf, full = motion_free_mask(frames), full_mask(frames)

        def eps(x, t):
            e00 = model(x, t, null, mf).data
            etm = model(x, t, cond, full).data
            e0m = model(x, t, null, full).data
            return mfg_epsilon(e00, etm, e0m, g.lambda_T, g.lambda_M)
    else:
        if model.inflated:
            raise ModeError("T2V model requires motion_enabled guidance")

        def eps(x, t):
            ec = model(x, t, cond).data
            eu = model(x, t, null).data
            return cfg_epsilon(ec, eu, g.lambda_T)
    return eps


def conditional_eps_fn(model, cond, frames=None):
    """Unguided conditional prediction (full temporal mask for T2V)."""
    mask = full_mask(frames) if model.inflated else None
    return lambda x, t: model(x, t, cond, mask).data


def _shape(model, batch, frames):
    latent = model.cfg.latent_shape
    if model.inflated:
        return (batch, frames) + latent
    return (batch,) + latent


def sample(model, schedule, cond, g, rng, batch=1, frames=DEFAULT_FRAMES, trajectory=None):
    """Draw ``batch`` images (T2I) or clips of ``frames`` frames (T2V).

    ``cond`` is one condition (broadcast over the batch) or a list with one
    entry per sample.
    """
    if g.steps and g.steps != schedule.T:
        raise ConfigError(f"DDPM sampling runs all {schedule.T} steps; got steps={g.steps}")
    if g.motion_enabled != model.inflated:
        raise ModeError(
            "motion guidance needs a T2V model and T2V models need motion guidance "
            f"(motion_enabled={g.motion_enabled}, inflated={model.inflated})"
        )
    null = model.null_condition()
    if isinstance(cond, list):
        if len(cond) != batch:
            raise ConfigError(f"{len(cond)} conditions for batch {batch}")
        null = [null] * batch
    eps = guided_eps_fn(model, cond, g, frames, null)
    with no_grad():
        return ddpm_sample_loop(eps, _shape(model, batch, frames), schedule, rng,
                                dtype=model.dtype, trajectory=trajectory)


def sample_conditional(model, schedule, cond, rng, batch=1, frames=DEFAULT_FRAMES, trajectory=None):
    """Unguided conditional ancestral sampling; same random draws as :func:`sample`."""
    with no_grad():
        return ddpm_sample_loop(conditional_eps_fn(model, cond, frames),
                                _shape(model, batch, frames), schedule, rng,
                                dtype=model.dtype, trajectory=trajectory)
