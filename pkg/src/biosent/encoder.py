"""Sentence encoder: token embeddings, low-rank linear-attention blocks, mean pooling."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BadFftSize, EmptySentence, SentenceTooLong, ShapeError
from .params import Params, linear, linear_params, uniform_fan_in
from .spectral import FEATURE_MODES, n_bins
from .tokenizer import BiosignalSentence

ATTENTION_MODES = ("linear", "dense")


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 256
    n_heads: int = 8
    n_layers: int = 4
    rank: int = 64
    max_tokens: int = 2048
    dropout: float = 0.1
    fft_size: int = 200
    fcn_hidden: int = 256
    n_channels: int = 16
    feature_mode: str = "log"
    attention: str = "linear"

    def __post_init__(self):
        if self.embed_dim < 1 or self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} must be a positive multiple of n_heads {self.n_heads}")
        if not 1 <= self.rank <= self.max_tokens:
            raise ValueError(f"rank must be in [1, max_tokens], got {self.rank}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.n_layers < 0 or self.fcn_hidden < 1 or self.n_channels < 1:
            raise ValueError("n_layers >= 0, fcn_hidden >= 1 and n_channels >= 1 required")
        if self.fft_size < 2:
            raise BadFftSize(f"fft_size must be >= 2, got {self.fft_size}")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def n_features(self) -> int:
        return n_bins(self.fft_size)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# parameters


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> Params:
    l, h = cfg.embed_dim, cfg.fcn_hidden
    p = Params()
    p.update(linear_params(rng, cfg.n_features, h, dtype).with_prefix("segment.fc1"))
    p.update(linear_params(rng, h, l, dtype).with_prefix("segment.fc2"))
    p["channel_table"] = new_channel_rows(rng, cfg.n_channels, l, dtype)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        p[f"{pre}.ln1.gamma"] = Tensor(np.ones(l, dtype), requires_grad=True)
        p[f"{pre}.ln1.beta"] = Tensor(np.zeros(l, dtype), requires_grad=True)
        for name in ("wq", "wk", "wv"):
            p[f"{pre}.attn.{name}"] = uniform_fan_in(rng, (l, l), l, dtype)
        # E, F use the rank as fan-in so projected keys keep O(1) scale for any N
        p[f"{pre}.attn.E"] = uniform_fan_in(rng, (cfg.rank, cfg.max_tokens), cfg.rank, dtype)
        p[f"{pre}.attn.F"] = uniform_fan_in(rng, (cfg.rank, cfg.max_tokens), cfg.rank, dtype)
        p.update(linear_params(rng, l, l, dtype).with_prefix(f"{pre}.attn.out"))
        p[f"{pre}.ln2.gamma"] = Tensor(np.ones(l, dtype), requires_grad=True)
        p[f"{pre}.ln2.beta"] = Tensor(np.zeros(l, dtype), requires_grad=True)
        p.update(linear_params(rng, l, 4 * l, dtype).with_prefix(f"{pre}.ffn.fc1"))
        p.update(linear_params(rng, 4 * l, l, dtype).with_prefix(f"{pre}.ffn.fc2"))
    return p


def new_channel_rows(rng: np.random.Generator, n: int, dim: int, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, 0.02, size=(n, dim)).astype(dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# embeddings


def positional_embedding(position, dim: int) -> np.ndarray:
    """Sinusoidal encoding of the within-channel index k (k >= 1), evaluated at k − 1."""
    pos = np.asarray(position, dtype=np.float64)
    if np.any(pos < 1):
        raise ValueError("positions start at 1")
    i = np.arange(0, dim, 2, dtype=np.float64)
    freq = np.power(10000.0, -i / dim)
    angle = (pos[..., None] - 1.0) * freq
    out = np.zeros(pos.shape + (dim,))
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle[..., : dim // 2])
    return out


@dataclass
class SentenceBatch:
    """Equal-length sentences stacked along a leading batch axis."""

    features: np.ndarray  # (B, N, n_features)
    channel_index: np.ndarray  # (B, N)
    position: np.ndarray  # (B, N)

    @property
    def n_tokens(self) -> int:
        return int(self.features.shape[1])

    def __len__(self):
        return int(self.features.shape[0])


def stack_sentences(sentences, cfg: EncoderConfig) -> SentenceBatch:
    sentences = list(sentences)
    n = len(sentences[0])
    for s in sentences:
        _check_sentence(s, cfg)
        if len(s) != n:
            raise ShapeError("stack_sentences needs equal-length sentences")
    return SentenceBatch(
        np.stack([s.features(cfg.feature_mode) for s in sentences]),
        np.stack([s.channel_index for s in sentences]),
        np.stack([s.position for s in sentences]),
    )


def _check_sentence(s: BiosignalSentence, cfg: EncoderConfig):
    if len(s) == 0:
        raise EmptySentence("cannot encode an empty sentence")
    if len(s) > cfg.max_tokens:
        raise SentenceTooLong(f"sentence has {len(s)} tokens, max_tokens is {cfg.max_tokens}")
    if s.token_len != cfg.fft_size:
        raise BadFftSize(f"tokens have {s.token_len} samples, fft_size is {cfg.fft_size}")
    if s.channel_index.max() >= cfg.n_channels:
        raise ShapeError(f"channel index {int(s.channel_index.max())} >= vocabulary size {cfg.n_channels}")


def embed_batch(batch: SentenceBatch, params: Params, cfg: EncoderConfig) -> Tensor:
    """X[b, j] = FCN(features) + channel_table[channel] + sinusoid(position)."""
    dtype = params["channel_table"].dtype
    feats = Tensor(batch.features.astype(dtype, copy=False))
    seg = linear(ad.relu(linear(feats, params.subset("segment.fc1"))), params.subset("segment.fc2"))
    chan = ad.embedding_lookup(params["channel_table"], batch.channel_index)
    pos = Tensor(positional_embedding(batch.position, cfg.embed_dim).astype(dtype))
    return seg + chan + pos


def embed_sentence(sentence: BiosignalSentence, params: Params, cfg: EncoderConfig) -> Tensor:
    """Token matrix X (N × l) for one sentence."""
    return embed_batch(stack_sentences([sentence], cfg), params, cfg)[0]


# ---------------------------------------------------------------------------
# attention and blocks


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, l = x.shape
    return x.reshape(b, n, n_heads, l // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, k = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * k)


def linear_attention(X: Tensor, lp: Params, cfg: EncoderConfig, return_weights: bool = False):
    """Multi-head attention with keys/values projected to ``rank`` pseudo-tokens.

    Per head: softmax(Q K̃ᵀ / √k) Ṽ with K̃ = E′ X W^K and Ṽ = F′ X W^V,
    where E′, F′ are the first N columns of the learned E, F. Accepts
    ``(N, l)`` or ``(B, N, l)``; with ``cfg.attention == "dense"`` the
    projections are skipped (full N × N softmax attention).
    """
    squeeze = X.ndim == 2
    if squeeze:
        X = X.reshape(1, *X.shape)
    if X.ndim != 3 or X.shape[-1] != cfg.embed_dim:
        raise ShapeError(f"attention input must be (B, N, {cfg.embed_dim}), got {X.shape}")
    n = X.shape[1]
    if n > cfg.max_tokens:
        raise SentenceTooLong(f"{n} tokens > max_tokens {cfg.max_tokens}")
    q = _split_heads(X @ lp["wq"], cfg.n_heads)
    if cfg.attention == "dense":
        k_src, v_src = X, X
    else:
        k_src = lp["E"][:, :n] @ X  # (B, d, l)
        v_src = lp["F"][:, :n] @ X
    k = _split_heads(k_src @ lp["wk"], cfg.n_heads)
    v = _split_heads(v_src @ lp["wv"], cfg.n_heads)
    scores = ad.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(cfg.head_dim))
    weights = ad.softmax(scores, axis=-1)
    out = linear(_merge_heads(weights @ v), lp.subset("out"))
    if squeeze:
        out = out[0]
        weights = weights[0]
    return (out, weights) if return_weights else out


def feed_forward(X: Tensor, lp: Params) -> Tensor:
    return linear(ad.elu(linear(X, lp.subset("fc1"))), lp.subset("fc2"))


def transformer_block(X: Tensor, lp: Params, cfg: EncoderConfig, training: bool = False, rng=None) -> Tensor:
    """Pre-norm residual block: attention, then a 4× ELU feed-forward."""
    h = ad.layer_norm(X, lp["ln1.gamma"], lp["ln1.beta"])
    X = X + linear_attention(ad.dropout(h, cfg.dropout, training, rng), lp.subset("attn"), cfg)
    h = ad.layer_norm(X, lp["ln2.gamma"], lp["ln2.beta"])
    return X + feed_forward(ad.dropout(h, cfg.dropout, training, rng), lp.subset("ffn"))


def encode_stacked(batch: SentenceBatch, params: Params, cfg: EncoderConfig, training: bool = False, rng=None) -> Tensor:
    """(B, l) embeddings for a batch of equal-length sentences."""
    x = embed_batch(batch, params, cfg)
    for i in range(cfg.n_layers):
        x = transformer_block(x, params.subset(f"layers.{i}"), cfg, training, rng)
    return ad.mean(x, axis=1)


def encode(sentence: BiosignalSentence, params: Params, cfg: EncoderConfig, training: bool = False, rng=None) -> Tensor:
    """Embedding (length l) of a single sentence."""
    return encode_stacked(stack_sentences([sentence], cfg), params, cfg, training, rng)[0]


def length_buckets(sentences) -> dict[int, list[int]]:
    buckets: dict[int, list[int]] = {}
    for i, s in enumerate(sentences):
        buckets.setdefault(len(s), []).append(i)
    return buckets


def encode_batch(sentences, params: Params, cfg: EncoderConfig, training: bool = False, rng=None) -> Tensor:
    """(B, l) embeddings for sentences of any lengths.

    Sentences are grouped by token count and each group runs as one stacked
    forward pass, so no padding token ever enters attention or pooling.
    """
    sentences = list(sentences)
    if not sentences:
        raise EmptySentence("no sentences to encode")
    buckets = length_buckets(sentences)
    if len(buckets) == 1:
        return encode_stacked(stack_sentences(sentences, cfg), params, cfg, training, rng)
    parts, order = [], []
    for n in sorted(buckets):
        idx = buckets[n]
        parts.append(encode_stacked(stack_sentences([sentences[i] for i in idx], cfg), params, cfg, training, rng))
        order.extend(idx)
    inverse = np.argsort(np.asarray(order))
    return ad.concat(parts, axis=0)[inverse]
