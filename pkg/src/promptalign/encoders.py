"""Miniature frozen text/image transformer encoders with visual prompt injection.

Both encoders share one transformer block implementation.  All backbone
parameters are generated deterministically from a seed and never receive
gradients; the only trainable tensors in the whole system live outside this
module (soft prompt context vectors) or in :class:`VisualPromptStack`.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
_NUM_SPECIALS = 3

_WORD_RE = re.compile(r"[^a-z0-9\s]")


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: int = 4
    image_size: int = 32
    image_channels: int = 1
    patch_size: int = 8
    vocab_size: int = 256
    max_text_len: int = 77
    projection_dim: int = 64

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_local(self) -> int:
        return self.grid_size ** 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


class Vocabulary:
    """Word-level vocabulary built from a text corpus."""

    def __init__(self, words: Sequence[str]):
        self.words = sorted(set(words))
        self._ids = {w: _NUM_SPECIALS + i for i, w in enumerate(self.words)}

    @classmethod
    def from_corpus(cls, texts: Sequence[str]) -> "Vocabulary":
        words = []
        for t in texts:
            words.extend(split_words(t))
        return cls(words)

    @property
    def size(self) -> int:
        return _NUM_SPECIALS + len(self.words)

    def word_id(self, word: str) -> int:
        return self._ids.get(word, UNK_ID)


def split_words(text: str) -> list[str]:
    return _WORD_RE.sub(" ", text.lower()).split()


def tokenize(text: str, vocab: Vocabulary, max_len: int = 77) -> list[int]:
    """Map text to [BOS, word ids..., EOS], truncated to max_len with EOS kept."""
    ids = [BOS_ID] + [vocab.word_id(w) for w in split_words(text)] + [EOS_ID]
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [EOS_ID]
    return ids


class FrozenWeights:
    """Seed-generated pseudo-pretrained backbone parameters (never trained)."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor], seed: int):
        self.config = config
        self.params = params
        self.seed = seed

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()


def _gauss(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.standard_normal(shape).astype(np.float32) * std)


def _layer_params(rng: np.random.Generator, prefix: str, cfg: EncoderConfig,
                  out: dict[str, Tensor]):
    d = cfg.embed_dim
    hidden = d * cfg.mlp_ratio
    std = d ** -0.5
    out[f"{prefix}.ln1_g"] = Tensor(np.ones(d, dtype=np.float32))
    out[f"{prefix}.ln1_b"] = Tensor(np.zeros(d, dtype=np.float32))
    for w in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}.{w}"] = _gauss(rng, (d, d), std)
        out[f"{prefix}.{w}_b"] = Tensor(np.zeros(d, dtype=np.float32))
    out[f"{prefix}.ln2_g"] = Tensor(np.ones(d, dtype=np.float32))
    out[f"{prefix}.ln2_b"] = Tensor(np.zeros(d, dtype=np.float32))
    out[f"{prefix}.mlp_w1"] = _gauss(rng, (d, hidden), std)
    out[f"{prefix}.mlp_b1"] = Tensor(np.zeros(hidden, dtype=np.float32))
    out[f"{prefix}.mlp_w2"] = _gauss(rng, (hidden, d), hidden ** -0.5)
    out[f"{prefix}.mlp_b2"] = Tensor(np.zeros(d, dtype=np.float32))


def init_frozen_weights(config: EncoderConfig, seed: int) -> FrozenWeights:
    """Generate the full frozen parameter set deterministically from a seed."""
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    patch_in = config.patch_size ** 2 * config.image_channels
    p: dict[str, Tensor] = {}
    p["text.token_embedding"] = _gauss(rng, (config.vocab_size, d), 0.02)
    p["text.pos"] = _gauss(rng, (config.max_text_len, d), 0.01)
    for l in range(config.num_layers):
        _layer_params(rng, f"text.layer{l}", config, p)
    p["text.ln_f_g"] = Tensor(np.ones(d, dtype=np.float32))
    p["text.ln_f_b"] = Tensor(np.zeros(d, dtype=np.float32))
    p["text.proj"] = _gauss(rng, (d, config.projection_dim), d ** -0.5)
    p["image.patch_embed"] = _gauss(rng, (patch_in, d), patch_in ** -0.5)
    p["image.patch_bias"] = Tensor(np.zeros(d, dtype=np.float32))
    p["image.class_token"] = _gauss(rng, (d,), 0.02)
    p["image.pos"] = _gauss(rng, (1 + config.num_local, d), 0.01)
    for l in range(config.num_layers):
        _layer_params(rng, f"image.layer{l}", config, p)
    p["image.ln_f_g"] = Tensor(np.ones(d, dtype=np.float32))
    p["image.ln_f_b"] = Tensor(np.zeros(d, dtype=np.float32))
    p["image.proj"] = _gauss(rng, (d, config.projection_dim), d ** -0.5)
    return FrozenWeights(config, p, seed)


class VisualPromptStack:
    """Learnable per-layer prompt tokens appended to the visual sequence."""

    def __init__(self, config: EncoderConfig, num_prompts: int = 8,
                 seed: int = 0, std: float = 0.02):
        if num_prompts < 1:
            raise ValueError("num_prompts must be >= 1")
        rng = np.random.default_rng(seed)
        self.num_prompts = num_prompts
        self.tokens = Tensor(
            rng.standard_normal(
                (config.num_layers, num_prompts, config.embed_dim)
            ).astype(np.float32) * std,
            requires_grad=True)


@dataclass
class ImageFeatures:
    """Projected, L2-normalized global (class token) and local (patch) features."""
    global_: Tensor      # [B, P]
    locals_: Tensor      # [B, N_l, P]


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def _attention(x: Tensor, fw: FrozenWeights, prefix: str) -> Tensor:
    cfg = fw.config
    B, S, d = x.shape
    H, dh = cfg.num_heads, cfg.head_dim

    def heads(t):
        return T.transpose(T.reshape(t, (B, S, H, dh)), (0, 2, 1, 3))

    q = heads(_linear(x, fw[f"{prefix}.wq"], fw[f"{prefix}.wq_b"]))
    k = heads(_linear(x, fw[f"{prefix}.wk"], fw[f"{prefix}.wk_b"]))
    v = heads(_linear(x, fw[f"{prefix}.wv"], fw[f"{prefix}.wv_b"]))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), dh ** -0.5)
    attn = T.softmax(scores)
    mix = T.matmul(attn, v)                                    # [B, H, S, dh]
    mix = T.reshape(T.transpose(mix, (0, 2, 1, 3)), (B, S, d))
    return _linear(mix, fw[f"{prefix}.wo"], fw[f"{prefix}.wo_b"])


def _block(x: Tensor, fw: FrozenWeights, prefix: str) -> Tensor:
    h = T.layer_norm(x, fw[f"{prefix}.ln1_g"], fw[f"{prefix}.ln1_b"])
    x = T.add(x, _attention(h, fw, prefix))
    h = T.layer_norm(x, fw[f"{prefix}.ln2_g"], fw[f"{prefix}.ln2_b"])
    h = _linear(T.gelu(_linear(h, fw[f"{prefix}.mlp_w1"], fw[f"{prefix}.mlp_b1"])),
                fw[f"{prefix}.mlp_w2"], fw[f"{prefix}.mlp_b2"])
    return T.add(x, h)


def text_encode(fw: FrozenWeights, embeddings: Tensor,
                eos_index: Optional[int] = None) -> Tensor:
    """Encode a [T, embed_dim] token-embedding sequence to a unit feature vector.

    Accepts raw embeddings so learnable soft-prompt vectors and embedded hard
    token ids share a single path.  The feature is pooled at the EOS position
    (the last token unless given explicitly).
    """
    cfg = fw.config
    if embeddings.ndim != 2 or embeddings.shape[1] != cfg.embed_dim:
        raise ValueError(f"text_encode: expected [T, {cfg.embed_dim}], got {embeddings.shape}")
    seq_len = embeddings.shape[0]
    if not 2 <= seq_len <= cfg.max_text_len:
        raise ValueError(f"text_encode: sequence length {seq_len} outside [2, {cfg.max_text_len}]")
    if eos_index is None:
        eos_index = seq_len - 1
    x = T.add(embeddings, T.slice_(fw["text.pos"], slice(0, seq_len)))
    x = T.reshape(x, (1, seq_len, cfg.embed_dim))
    for l in range(cfg.num_layers):
        x = _block(x, fw, f"text.layer{l}")
    x = T.layer_norm(x, fw["text.ln_f_g"], fw["text.ln_f_b"])
    pooled = T.slice_(x, (0, eos_index))
    return T.l2_normalize(T.matmul(pooled, fw["text.proj"]))


def embed_tokens(fw: FrozenWeights, ids: Sequence[int]) -> Tensor:
    """Look up frozen token embeddings for a list of token ids (constant)."""
    table = fw["text.token_embedding"].data
    return Tensor(table[np.asarray(ids, dtype=np.int64)])


def image_encode(fw: FrozenWeights, images: Tensor,
                 prompts: Optional[VisualPromptStack] = None) -> ImageFeatures:
    """Encode a batch of images, optionally with per-layer visual prompt tokens.

    Prompt tokens are appended to the token sequence before each frozen layer
    and their output positions are discarded afterwards, so the carried
    sequence length never changes.  Without prompts this is the plain frozen
    forward pass used for prototype computation.
    """
    cfg = fw.config
    single = images.ndim == 3
    if single:
        images = T.reshape(images, (1,) + images.shape)
    B, H, W, C = images.shape
    if (H, W, C) != (cfg.image_size, cfg.image_size, cfg.image_channels):
        raise ValueError(
            f"image_encode: expected [{cfg.image_size}, {cfg.image_size}, "
            f"{cfg.image_channels}] images, got {(H, W, C)}")
    g, ps, d = cfg.grid_size, cfg.patch_size, cfg.embed_dim
    nl = cfg.num_local

    x = T.reshape(images, (B, g, ps, g, ps, C))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    x = T.reshape(x, (B, nl, ps * ps * C))
    x = _linear(x, fw["image.patch_embed"], fw["image.patch_bias"])
    cls = Tensor(np.broadcast_to(fw["image.class_token"].data, (B, 1, d)).copy())
    x = T.concat([cls, x], axis=1)
    x = T.add(x, fw["image.pos"])
    seq_len = 1 + nl
    for l in range(cfg.num_layers):
        if prompts is not None:
            pl = T.reshape(T.slice_(prompts.tokens, l), (1, prompts.num_prompts, d))
            # broadcast the shared prompt tokens over the batch (grad sums back)
            pl = T.add(pl, Tensor(np.zeros((B, 1, 1), dtype=np.float32)))
            x = T.concat([x, pl], axis=1)
        x = _block(x, fw, f"image.layer{l}")
        if prompts is not None:
            x = T.slice_(x, (slice(None), slice(0, seq_len)))
    x = T.layer_norm(x, fw["image.ln_f_g"], fw["image.ln_f_b"])
    global_ = T.l2_normalize(T.matmul(T.slice_(x, (slice(None), 0)), fw["image.proj"]))
    locals_ = T.l2_normalize(T.matmul(T.slice_(x, (slice(None), slice(1, 1 + nl))),
                                      fw["image.proj"]))
    return ImageFeatures(global_=global_, locals_=locals_)
