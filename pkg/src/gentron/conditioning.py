"""Text conditions: a toy hashed-vocabulary encoder, the learned null condition,
condition dropout, and per-block routing for two interleaved encoders.

Tokenisation is ``str.split()`` on the UTF-8 prompt. Each token maps to a
table row through an 8-byte BLAKE2b digest, so the mapping is identical on
every platform and Python build.
"""
import hashlib
from dataclasses import dataclass

import numpy as np

from gentron.errors import ConditionError, ConfigError
from gentron.nn import Module
from gentron.numerics.tensor import Tensor, getitem, mean, take

SINGLE = "single"
DUAL_INTERLEAVED = "dual_interleaved"


@dataclass(eq=False)
class TextCondition:
    tokens: Tensor  # (L, d_text)
    pooled: Tensor  # (d_text,)
    is_null: bool = False
    source: str = ""

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ConditionError(f"condition needs an (L >= 1, d) token matrix, got {self.tokens.shape}")
        if self.pooled.shape != self.tokens.shape[1:]:
            raise ConditionError("pooled vector and token width disagree")

    @property
    def length(self):
        return self.tokens.shape[0]


@dataclass(frozen=True)
class EncoderSpec:
    mode: str
    text_dims: tuple

    def __post_init__(self):
        if self.mode not in (SINGLE, DUAL_INTERLEAVED):
            raise ConfigError(f"unknown encoder mode {self.mode!r}")
        if self.mode == SINGLE and len(self.text_dims) != 1:
            raise ConfigError("single-encoder mode takes exactly one text dimension")
        if self.mode == DUAL_INTERLEAVED and len(self.text_dims) != 2:
            raise ConfigError("dual_interleaved mode takes exactly two encoders")

    @classmethod
    def from_dims(cls, text_dims):
        text_dims = tuple(int(d) for d in text_dims)
        return cls(SINGLE if len(text_dims) == 1 else DUAL_INTERLEAVED, text_dims)

    @property
    def n_encoders(self):
        return len(self.text_dims)

    def encoder_for_block(self, block_index):
        return 0 if self.mode == SINGLE else block_index % 2


def tokenize(prompt):
    return prompt.split()


def token_bucket(token, vocab_size):
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


class ToyTextEncoder(Module):
    """Hashed embedding table plus learned positions; trained with the model.

    Prompts longer than ``max_len`` tokens are truncated.
    """

    def __init__(self, f, d_text, vocab_size=1024, max_len=16, name="toy"):
        super().__init__()
        self.name = name
        self.vocab_size = vocab_size
        self.d_text = d_text
        self.max_len = max_len
        self.table = f.make((vocab_size, d_text), ("normal", 1.0))
        self.position = f.make((max_len, d_text), ("normal", 0.1))
        self.null_tokens = f.make((1, d_text), ("normal", 1.0))
        self.null_pooled = f.make((d_text,), ("normal", 1.0))
        self._null = None

    def token_ids(self, prompt):
        return [token_bucket(tok, self.vocab_size) for tok in tokenize(prompt)[: self.max_len]]

    def null_condition(self):
        # One cached object wrapping the parameter tensors themselves, so training
        # dropout and guided sampling share the same ∅ and see optimizer updates.
        if self._null is None:
            self._null = TextCondition(self.null_tokens, self.null_pooled, True, self.name)
        return self._null

    def encode(self, prompt):
        ids = self.token_ids(prompt)
        if not ids:
            return self.null_condition()
        tokens = take(self.table, ids) + getitem(self.position, slice(0, len(ids)))
        return TextCondition(tokens, mean(tokens, axis=0), False, self.name)


def encode_toy(prompt, encoder):
    return encoder.encode(prompt)


def null_condition(encoder):
    return encoder.null_condition()


def drop_condition(c, p_text, rng, null):
    """Return ``null`` with probability ``p_text``, else ``c`` (one uniform draw)."""
    if not 0.0 <= p_text <= 1.0:
        raise ConfigError(f"p_text must lie in [0, 1], got {p_text}")
    return null if rng.random() < p_text else c


def select_context(spec, conditions, block_index, depth=None):
    """Pick the per-block context: even blocks use encoder A, odd blocks encoder B."""
    if depth is not None and not 0 <= block_index < depth:
        raise ConfigError(f"block index {block_index} outside [0, {depth})")
    conditions = tuple(conditions)
    if len(conditions) < spec.n_encoders or any(c is None for c in conditions[: spec.n_encoders]):
        raise ConditionError(f"{spec.mode} mode needs {spec.n_encoders} conditions, got {len(conditions)}")
    return conditions[spec.encoder_for_block(block_index)]


@dataclass
class ContextBatch:
    """Per-encoder conditions collated over a batch: padded tokens and a key mask."""

    tokens: Tensor  # (B, L_max, d)
    key_mask: np.ndarray  # (B, L_max) bool
    pooled: Tensor  # (B, d)


def collate(conditions):
    """Pad token matrices to the longest prompt and stack pooled vectors."""
    from gentron.numerics.tensor import concat, stack

    if not conditions:
        raise ConditionError("empty condition batch")
    longest = max(c.length for c in conditions)
    width = conditions[0].tokens.shape[1]
    dtype = conditions[0].tokens.dtype
    rows, masks = [], np.zeros((len(conditions), longest), dtype=bool)
    for i, c in enumerate(conditions):
        masks[i, : c.length] = True
        if c.length < longest:
            pad = Tensor(np.zeros((longest - c.length, width), dtype=dtype))
            rows.append(concat([c.tokens, pad], axis=0))
        else:
            rows.append(c.tokens)
    return ContextBatch(stack(rows), masks, stack([c.pooled for c in conditions]))
