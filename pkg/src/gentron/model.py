"""The GenTron diffusion transformer.

Latents are channel-last (H, W, C). A forward pass patchifies the noisy
latent into (H/p)(W/p) tokens, adds a fixed 2-D sinusoidal position
embedding, runs ``depth`` transformer blocks conditioned on
``time embedding + projected pooled text``, and decodes every token back to a
p×p×C patch of the ε prediction.

Two block variants:

``adaln_zero``
    self-attention and MLP modulated by the conditioning vector; text enters
    only through the pooled embedding.
``cross_attention``
    the same adaLN-Zero modulation for the time path, plus an unmodulated
    cross-attention residual onto the text tokens between self-attention and
    MLP.

All gates, the cross-attention output projection and the decoder start at
zero, so a freshly built model predicts ε̂ = 0 and every block is the
identity.
"""
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from gentron.conditioning import (
    EncoderSpec,
    TextCondition,
    ToyTextEncoder,
    collate,
    select_context,
)
from gentron.errors import ConditionError, ConfigError, ModeError, ShapeError
from gentron.nn import (
    CrossAttention,
    Linear,
    Mlp,
    Module,
    ModuleList,
    ParamFactory,
    SelfAttention,
    modulate,
    plain_layer_norm,
)
from gentron.numerics.rng import Rng
from gentron.numerics.tensor import Tensor, as_tensor, silu, take

ADALN_ZERO = "adaln_zero"
CROSS_ATTENTION = "cross_attention"
VARIANTS = (ADALN_ZERO, CROSS_ATTENTION)


@dataclass(frozen=True)
class GenTronConfig:
    depth: int = 2
    width: int = 64
    mlp_width: int = 256
    patch: int = 2
    latent_shape: tuple = (8, 8, 4)
    heads: int = 0  # 0 means width // 64, at least 1
    variant: str = CROSS_ATTENTION
    text_dims: tuple = (32,)
    vocab_size: int = 1024
    max_prompt_len: int = 16
    freq_dim: int = 256

    def __post_init__(self):
        object.__setattr__(self, "latent_shape", tuple(int(s) for s in self.latent_shape))
        object.__setattr__(self, "text_dims", tuple(int(d) for d in self.text_dims))
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.depth, self.width, self.mlp_width, self.patch, self.freq_dim) < 1:
            raise ConfigError("depth, width, mlp_width, patch and freq_dim must be positive")
        if len(self.latent_shape) != 3:
            raise ConfigError(f"latent_shape must be (H, W, C), got {self.latent_shape}")
        h, w, _ = self.latent_shape
        if h % self.patch or w % self.patch:
            raise ConfigError(f"latent {h}x{w} is not divisible by patch {self.patch}")
        if self.width % self.n_heads:
            raise ConfigError(f"width {self.width} is not divisible by {self.n_heads} heads")
        if self.width % 4:
            raise ConfigError("width must be divisible by 4 for the 2-D sinusoidal position embedding")
        if self.freq_dim % 2:
            raise ConfigError("freq_dim must be even")
        EncoderSpec.from_dims(self.text_dims)

    @property
    def n_heads(self):
        return self.heads if self.heads > 0 else max(1, self.width // 64)

    @property
    def n_tokens(self):
        h, w, _ = self.latent_shape
        return (h // self.patch) * (w // self.patch)

    @property
    def patch_dim(self):
        return self.patch * self.patch * self.latent_shape[2]

    @property
    def encoder_spec(self):
        return EncoderSpec.from_dims(self.text_dims)

    def to_dict(self):
        d = asdict(self)
        d["latent_shape"] = list(self.latent_shape)
        d["text_dims"] = list(self.text_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def scaled(self, **changes):
        return replace(self, **changes)


# CLIP-L (768) interleaved with a T5-XXL-sized (4096) encoder, 32x32x4 latents.
_PRESET_COMMON = dict(
    patch=2, latent_shape=(32, 32, 4), variant=CROSS_ATTENTION, text_dims=(768, 4096)
)
PRESETS = {
    "XL/2": GenTronConfig(depth=28, width=1152, mlp_width=4608, **_PRESET_COMMON),
    "G/2": GenTronConfig(depth=48, width=1664, mlp_width=6656, **_PRESET_COMMON),
}


def preset(name, **overrides):
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return cfg.scaled(**overrides) if overrides else cfg


# -- fixed embeddings ---------------------------------------------------

def timestep_features(t, dim):
    """[sin(t·f_i) ..., cos(t·f_i) ...] with f_i = 10000^(-i/half)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t < 0):
        raise ValueError("timesteps must be non-negative")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _sincos_1d(dim, positions):
    omega = 1.0 / 10000.0 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = np.outer(positions.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def position_embedding_2d(width, grid_h, grid_w):
    """Fixed (grid_h·grid_w, width) table; first half encodes rows, second half columns."""
    rows, cols = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    return np.concatenate([_sincos_1d(width // 2, rows), _sincos_1d(width // 2, cols)], axis=1)


# -- patch layout -------------------------------------------------------

def patchify(latent, patch):
    """(N, H, W, C) -> (N, n, patch·patch·C), patches in row-major order."""
    latent = as_tensor(latent)
    n, h, w, c = latent.shape
    if h % patch or w % patch:
        raise ShapeError(f"latent {h}x{w} is not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = latent.reshape(n, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, gh * gw, patch * patch * c)


def unpatchify(tokens, patch, latent_shape):
    h, w, c = latent_shape
    n = tokens.shape[0]
    gh, gw = h // patch, w // patch
    x = tokens.reshape(n, gh, gw, patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, h, w, c)


# -- layers -------------------------------------------------------------

class TimestepEmbedder(Module):
    def __init__(self, f, width, freq_dim):
        super().__init__()
        self.freq_dim = freq_dim
        self.fc1 = Linear(f, freq_dim, width, init=("normal", 0.02))
        self.fc2 = Linear(f, width, width, init=("normal", 0.02))

    def __call__(self, t, dtype=np.float32):
        features = Tensor(timestep_features(t, self.freq_dim).astype(dtype))
        return self.fc2(silu(self.fc1(features)))


class Block(Module):
    """One transformer block. ``temporal`` is attached by video inflation."""

    def __init__(self, f, cfg, d_text):
        super().__init__()
        w = cfg.width
        self.width = w
        self.variant = cfg.variant
        self.modulation = Linear(f, w, 6 * w, init="zeros")
        self.attn = SelfAttention(f, w, cfg.n_heads)
        if cfg.variant == CROSS_ATTENTION:
            self.cross = CrossAttention(f, w, d_text, cfg.n_heads)
        else:
            self.cross = None
        self.mlp = Mlp(f, w, cfg.mlp_width)
        self.temporal = None

    def chunks(self, cond):
        """(scale1, shift1, gate1, scale2, shift2, gate2), each (N, 1, width)."""
        mod = self.modulation(silu(cond))
        n, w = mod.shape[0], self.width
        return [mod[:, i * w:(i + 1) * w].reshape(n, 1, w) for i in range(6)]

    def __call__(self, x, cond, ctx=None, key_mask=None, frames=1, temporal_mask=None):
        scale1, shift1, gate1, scale2, shift2, gate2 = self.chunks(cond)
        x = x + gate1 * self.attn(modulate(plain_layer_norm(x), shift1, scale1))
        if self.cross is not None:
            if ctx is None:
                raise ConditionError("cross-attention block needs text tokens")
            x = x + self.cross(plain_layer_norm(x), ctx, key_mask)
        if self.temporal is not None:
            x = self.temporal(x, frames, temporal_mask)
        return x + gate2 * self.mlp(modulate(plain_layer_norm(x), shift2, scale2))


class FinalLayer(Module):
    def __init__(self, f, width, patch_dim):
        super().__init__()
        self.width = width
        self.modulation = Linear(f, width, 2 * width, init="zeros")
        self.linear = Linear(f, width, patch_dim, init="zeros")

    def __call__(self, x, cond):
        mod = self.modulation(silu(cond))
        n, w = mod.shape[0], self.width
        shift = mod[:, :w].reshape(n, 1, w)
        scale = mod[:, w:].reshape(n, 1, w)
        return self.linear(modulate(plain_layer_norm(x), shift, scale))


def block_adaln(x, cond, block):
    """Apply an adaLN-Zero block (no text tokens)."""
    return block(x, cond)


def block_cross_attention(x, ctx, t_cond, block):
    """Apply a cross-attention block; ``ctx`` is a TextCondition or a collated batch."""
    if isinstance(ctx, TextCondition):
        tokens = ctx.tokens.reshape(1, *ctx.tokens.shape)
        if x.shape[0] != 1:
            tokens = take(tokens, np.zeros(x.shape[0], dtype=np.int64))
        return block(x, t_cond, tokens, None)
    return block(x, t_cond, ctx.tokens, ctx.key_mask)


class GenTron(Module):
    """Text-conditioned ε-predictor; becomes a T2V model after :func:`gentron.video.inflate_t2i`."""

    def __init__(self, cfg, rng=None, meta=False, seed=0):
        super().__init__()
        self.cfg = cfg
        f = ParamFactory(rng if rng is not None else Rng(seed), meta=meta)
        spec = cfg.encoder_spec
        self.x_embed = Linear(f, cfg.patch_dim, cfg.width)
        self.t_embed = TimestepEmbedder(f, cfg.width, cfg.freq_dim)
        self.encoders = ModuleList(
            ToyTextEncoder(f, d, cfg.vocab_size, cfg.max_prompt_len, name=f"toy{i}")
            for i, d in enumerate(cfg.text_dims)
        )
        self.pooled_proj = ModuleList(Linear(f, d, cfg.width) for d in cfg.text_dims)
        self.blocks = ModuleList(
            Block(f, cfg, cfg.text_dims[spec.encoder_for_block(i)]) for i in range(cfg.depth)
        )
        self.final = FinalLayer(f, cfg.width, cfg.patch_dim)
        h, w, _ = cfg.latent_shape
        self._pos = position_embedding_2d(cfg.width, h // cfg.patch, w // cfg.patch)

    @property
    def inflated(self):
        return self.blocks[0].temporal is not None

    # -- conditioning ---------------------------------------------------
    def encode(self, prompt):
        """Per-encoder conditions for one prompt (a tuple, one entry per encoder)."""
        return tuple(enc.encode(prompt) for enc in self.encoders)

    def null_condition(self):
        return tuple(enc.null_condition() for enc in self.encoders)

    def _bundles(self, cond, batch):
        n_enc = len(self.encoders)
        if isinstance(cond, TextCondition) or (
            isinstance(cond, tuple) and cond and isinstance(cond[0], TextCondition)
        ):
            cond = [cond] * batch
        if len(cond) != batch:
            raise ConditionError(f"{len(cond)} conditions for a batch of {batch}")
        bundles = []
        for c in cond:
            c = (c,) if isinstance(c, TextCondition) else tuple(c)
            if len(c) != n_enc:
                raise ConditionError(f"model has {n_enc} text encoders, condition bundle has {len(c)}")
            bundles.append(c)
        return bundles

    # -- forward ----------------------------------------------------------
    def __call__(self, x, t, cond, temporal_mask=None):
        return self.forward(x, t, cond, temporal_mask)

    def forward(self, x, t, cond, temporal_mask=None):
        """Predict ε for ``x``.

        T2I models take (H, W, C) or (B, H, W, C); inflated models take
        (B, T, H, W, C) plus an optional (T, T) temporal mask (all ones by
        default). ``t`` is an int or one timestep per sample. ``cond`` is a
        TextCondition, a per-encoder tuple, or a list with one entry per sample.
        """
        cfg = self.cfg
        dtype = self.dtype
        x = as_tensor(x)
        if x.dtype != dtype:
            x = Tensor(x.data.astype(dtype))
        out_shape = x.shape
        single = x.shape == cfg.latent_shape
        if single:
            if self.inflated:
                raise ModeError("an inflated model needs (B, T, H, W, C) clips")
            x = x.reshape(1, *cfg.latent_shape)
        if self.inflated:
            if x.ndim != 5 or x.shape[2:] != cfg.latent_shape:
                raise ShapeError(f"T2V input must be (B, T, {cfg.latent_shape}), got {x.shape}")
            batch, frames = x.shape[:2]
        else:
            if x.ndim != 4 or x.shape[1:] != cfg.latent_shape:
                raise ShapeError(f"T2I input must be (B, {cfg.latent_shape}), got {x.shape}")
            batch, frames = x.shape[0], 1
            if temporal_mask is not None:
                raise ModeError("temporal masks need an inflated (T2V) model")
        if self.inflated and temporal_mask is None:
            temporal_mask = np.ones((frames, frames), dtype=bool)

        t = np.asarray(t, dtype=np.int64)
        t = np.broadcast_to(t, (batch,)) if t.ndim == 0 else t
        if t.shape != (batch,):
            raise ShapeError(f"need one timestep per sample, got {t.shape} for batch {batch}")

        bundles = self._bundles(cond, batch)
        contexts = [collate([b[e] for b in bundles]) for e in range(len(self.encoders))]
        cvec = self.t_embed(t, dtype)
        for proj, ctx in zip(self.pooled_proj, contexts):
            cvec = cvec + proj(ctx.pooled)

        frames_x = x.reshape(batch * frames, *cfg.latent_shape)
        h = self.x_embed(patchify(frames_x, cfg.patch)) + self._pos.astype(dtype)
        if frames > 1:
            clip_of = np.repeat(np.arange(batch), frames)
            cvec = take(cvec, clip_of)
            tokens = [take(ctx.tokens, clip_of) for ctx in contexts]
            masks = [ctx.key_mask[clip_of] for ctx in contexts]
        else:
            tokens = [ctx.tokens for ctx in contexts]
            masks = [ctx.key_mask for ctx in contexts]

        spec = cfg.encoder_spec
        for i, block in enumerate(self.blocks):
            h = block(
                h, cvec,
                select_context(spec, tokens, i), select_context(spec, masks, i),
                frames=frames, temporal_mask=temporal_mask,
            )
        out = unpatchify(self.final(h, cvec), cfg.patch, cfg.latent_shape)
        return out.reshape(out_shape)


def gentron_forward(x_t, t, cond, model, temporal_mask=None):
    return model.forward(x_t, t, cond, temporal_mask)


def parameter_table(cfg, inflated=False):
    """Ordered ``name -> shape`` for the model described by ``cfg`` (no allocation)."""
    model = GenTron(cfg, meta=True)
    if inflated:
        from gentron.video import attach_temporal_layers

        attach_temporal_layers(model, ParamFactory(meta=True))
    return {name: p.shape for name, p in model.named_parameters()}


def count_parameters(cfg, inflated=False):
    return int(sum(int(np.prod(s)) for s in parameter_table(cfg, inflated).values()))
