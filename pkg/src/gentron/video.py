"""Text-to-video extension: frame-axis rearranges, temporal self-attention,
the motion-free mask, pseudo-videos, and inflation of a T2I model.

Token layout inside an inflated model is ``(b·t, n, d)`` (clip-major, then
frame). Temporal attention works on ``(b·n, t, d)``: every patch position of
every clip becomes a length-t sequence over frames.
"""
import copy
from dataclasses import dataclass

import numpy as np

from gentron.errors import ModeError, ShapeError
from gentron.nn import Module, ParamFactory, SelfAttention
from gentron.numerics.rng import Rng
from gentron.numerics.tensor import as_tensor, layer_norm


def to_temporal(x, b, t):
    """(b·t, n, d) -> (b·n, t, d)."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] != b * t:
        raise ShapeError(f"expected leading extent b·t = {b * t}, got shape {x.shape}")
    _, n, d = x.shape
    return x.reshape(b, t, n, d).transpose(0, 2, 1, 3).reshape(b * n, t, d)


def from_temporal(x, b, t):
    """(b·n, t, d) -> (b·t, n, d); inverse of :func:`to_temporal`."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] != t or x.shape[0] % b:
        raise ShapeError(f"expected (b·n, {t}, d) with b = {b}, got shape {x.shape}")
    n = x.shape[0] // b
    d = x.shape[2]
    return x.reshape(b, n, t, d).transpose(0, 2, 1, 3).reshape(b * t, n, d)


def motion_free_mask(t):
    """Identity (t, t) mask: each frame attends only to itself."""
    if t < 1:
        raise ValueError(f"need t >= 1 frames, got {t}")
    return np.eye(t, dtype=np.float32)


def full_mask(t):
    return np.ones((t, t), dtype=np.float32)


class TempSelfAttn(Module):
    """Pre-LN temporal self-attention with a residual connection.

    The output projection (weight and bias) is zero at construction, so the
    layer is the identity until it is trained.
    """

    def __init__(self, f, width, heads):
        super().__init__()
        self.norm_gamma = f.make((width,), "ones")
        self.norm_beta = f.make((width,), "zeros")
        self.attn = SelfAttention(f, width, heads, out_init="zeros")

    def __call__(self, x, frames, mask=None):
        """x is (b·t, n, d) in model layout; attention runs across the t frames."""
        b = x.shape[0] // frames
        xt = to_temporal(x, b, frames)
        xt = temp_self_attn(xt, self, mask)
        return from_temporal(xt, b, frames)


def temp_self_attn(x, p, mask):
    """x + TempSelfAttn(LN(x)) on an already rearranged (b·n, t, d) tensor."""
    if mask is not None:
        m = np.asarray(mask)
        if m.ndim == 2 and not np.all(np.any(m != 0, axis=-1)):
            raise ValueError("temporal mask has an all-zero row")
    h = layer_norm(x, p.norm_gamma, p.norm_beta, eps=1e-6)
    return x + p.attn(h, mask)


def tempattn_size(width):
    """Scalar parameter count of one TempSelfAttn layer."""
    return 2 * width + (width * 3 * width + 3 * width) + (width * width + width)


def attach_temporal_layers(model, factory):
    for block in model.blocks:
        block.temporal = TempSelfAttn(factory, model.cfg.width, model.cfg.n_heads)


def inflate_t2i(t2i, seed=0):
    """Build a T2V model from a T2I model or checkpoint.

    Shared layers are copied verbatim; a zero-output TempSelfAttn is inserted
    after cross-attention (after self-attention in the adaLN variant) and
    before the MLP of every block.
    """
    from gentron.checkpoint import Checkpoint, model_from_checkpoint

    if isinstance(t2i, Checkpoint):
        if t2i.inflated:
            raise ModeError("checkpoint is already a T2V model")
        t2i = model_from_checkpoint(t2i, expect_inflated=False)
    if t2i.inflated:
        raise ModeError("model is already inflated")
    t2v = copy.deepcopy(t2i)
    attach_temporal_layers(t2v, ParamFactory(Rng(seed).fork("temporal"), dtype=t2i.dtype))
    return t2v


@dataclass
class VideoBatch:
    frames: np.ndarray  # (b·t, H, W, C), clip-major
    b: int
    t: int
    is_motion_free: bool = False

    def __post_init__(self):
        if self.frames.shape[0] != self.b * self.t:
            raise ShapeError(f"leading extent {self.frames.shape[0]} != b·t = {self.b * self.t}")

    def clips(self):
        """(b, t, H, W, C) view."""
        return self.frames.reshape(self.b, self.t, *self.frames.shape[1:])


def pseudo_video(image, t):
    """Repeat an image (or a batch of images) into clips of ``t`` identical frames."""
    if t < 1:
        raise ValueError(f"need t >= 1 frames, got {t}")
    image = np.asarray(image)
    batch = image[None] if image.ndim == 3 else image
    frames = np.repeat(batch, t, axis=0)
    return VideoBatch(frames=frames, b=batch.shape[0], t=t, is_motion_free=True)
