"""Classification heads, supervised losses, and the contrastive pre-training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig, encode_batch
from .errors import ShapeError
from .params import Params, linear, linear_params
from .tokenizer import BiosignalSentence

DEFAULT_TEMPERATURE = 0.2
DEFAULT_FOCAL_GAMMA = 2.0
LOSS_KINDS = ("cross_entropy", "bce", "focal")


# ---------------------------------------------------------------------------
# heads


def init_head(rng: np.random.Generator, embed_dim: int, n_classes: int, dtype=np.float32) -> Params:
    """ELU → linear(l → n_classes). ``n_classes == 1`` means a single sigmoid logit."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    return linear_params(rng, embed_dim, n_classes, dtype)


def classify(embedding: Tensor, head: Params) -> Tensor:
    if embedding.shape[-1] != head["weight"].shape[0]:
        raise ShapeError(f"embedding dim {embedding.shape[-1]} != head input {head['weight'].shape[0]}")
    return linear(ad.elu(embedding), head)


def init_predictor(rng: np.random.Generator, embed_dim: int, dtype=np.float32) -> Params:
    p = Params()
    p.update(linear_params(rng, embed_dim, embed_dim, dtype).with_prefix("fc1"))
    p.update(linear_params(rng, embed_dim, embed_dim, dtype).with_prefix("fc2"))
    return p


def predict_embedding(z: Tensor, predictor: Params) -> Tensor:
    return linear(ad.relu(linear(z, predictor.subset("fc1"))), predictor.subset("fc2"))


# ---------------------------------------------------------------------------
# supervised losses


def _binary_margin(logits: Tensor, labels: np.ndarray) -> Tensor:
    if logits.ndim == 2:
        if logits.shape[1] != 1:
            raise ShapeError("binary losses need one logit per sample")
        logits = logits.reshape(-1)
    if logits.shape[0] != labels.shape[0]:
        raise ShapeError("logits and labels disagree on batch size")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("binary labels must be 0 or 1")
    return logits * (2.0 * labels - 1.0).astype(logits.dtype)


def _picked_log_probs(logits: Tensor, labels: np.ndarray) -> Tensor:
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"need (B, C) logits for {labels.shape[0]} labels, got {logits.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"labels must be in [0, {logits.shape[1]})")
    return ad.log_softmax(logits, axis=-1)[np.arange(labels.shape[0]), labels]


def loss_supervised(logits: Tensor, labels, kind: str = "cross_entropy", gamma: float = DEFAULT_FOCAL_GAMMA) -> Tensor:
    """Batch-mean supervised loss.

    ``bce`` and binary ``focal`` take one logit per sample; ``cross_entropy``
    and multi-class ``focal`` take ``(B, C)`` logits. Focal loss is
    ``-(1 - p_t)^gamma log p_t``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ShapeError("empty batch")
    binary = logits.ndim == 1 or logits.shape[-1] == 1
    if kind == "cross_entropy":
        return ad.scale(ad.mean(_picked_log_probs(logits, labels)), -1.0)
    if kind == "bce":
        return ad.mean(ad.softplus(ad.scale(_binary_margin(logits, labels), -1.0)))
    if kind == "focal":
        if binary:
            s = _binary_margin(logits, labels)
            nll = ad.softplus(ad.scale(s, -1.0))
            if gamma == 0:
                return ad.mean(nll)
            # log(1 - p_t) = -softplus(s)
            weight = ad.exp(ad.scale(ad.softplus(s), -gamma))
            return ad.mean(weight * nll)
        logp = _picked_log_probs(logits, labels)
        if gamma == 0:
            return ad.scale(ad.mean(logp), -1.0)
        weight = ad.power(1.0 - ad.exp(logp), gamma)
        return ad.scale(ad.mean(weight * logp), -1.0)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


# ---------------------------------------------------------------------------
# perturbation


@dataclass(frozen=True)
class PerturbConfig:
    channel_drop_max_frac: float = 0.25
    token_drop_max_frac: float = 0.25
    # draw the drop fractions once per batch so equal-shape sentences stay stackable
    shared_batch_fractions: bool = True

    def __post_init__(self):
        for name in ("channel_drop_max_frac", "token_drop_max_frac"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1), got {v}")


def _drop_count(n: int, frac: float) -> int:
    return min(int(np.floor(frac * n)), n - 1)


def perturb(sentence: BiosignalSentence, cfg: PerturbConfig, rng: np.random.Generator,
            channel_frac: float | None = None, token_frac: float | None = None) -> BiosignalSentence:
    """Drop a random subset of channels, then a random subset of the remaining tokens.

    Fractions are drawn uniformly from ``[0, max_frac]`` unless given. At
    least one channel and one token always survive.
    """
    if len(sentence) == 0:
        raise ValueError("cannot perturb an empty sentence")
    if channel_frac is None:
        channel_frac = rng.uniform(0.0, cfg.channel_drop_max_frac)
    if token_frac is None:
        token_frac = rng.uniform(0.0, cfg.token_drop_max_frac)
    channels = np.unique(sentence.channel_index)
    n_drop = _drop_count(len(channels), channel_frac)
    keep = np.ones(len(sentence), dtype=bool)
    if n_drop:
        dropped = rng.choice(channels, size=n_drop, replace=False)
        keep &= ~np.isin(sentence.channel_index, dropped)
    remaining = np.flatnonzero(keep)
    n_tok_drop = _drop_count(len(remaining), token_frac)
    if n_tok_drop:
        keep[rng.choice(remaining, size=n_tok_drop, replace=False)] = False
    return sentence.select(keep)


def perturb_batch(sentences, cfg: PerturbConfig, rng: np.random.Generator) -> list[BiosignalSentence]:
    if cfg.shared_batch_fractions:
        cf = rng.uniform(0.0, cfg.channel_drop_max_frac)
        tf = rng.uniform(0.0, cfg.token_drop_max_frac)
        return [perturb(s, cfg, rng, cf, tf) for s in sentences]
    return [perturb(s, cfg, rng) for s in sentences]


# ---------------------------------------------------------------------------
# contrastive objective


def contrastive_loss(z: Tensor, z_pred: Tensor, temperature: float = DEFAULT_TEMPERATURE) -> Tensor:
    """Cross-entropy of softmax(⟨ẑ_i, ẑ'_j⟩ / T) against the identity, rows L2-normalized."""
    if z.ndim != 2 or z.shape != z_pred.shape:
        raise ShapeError(f"need matching (B, l) embeddings, got {z.shape} and {z_pred.shape}")
    b = z.shape[0]
    if b < 2:
        raise ShapeError("contrastive loss needs a batch of at least 2")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    zn = ad.l2_normalize(z, axis=-1)
    pn = ad.l2_normalize(z_pred, axis=-1)
    logits = ad.scale(zn @ pn.T, 1.0 / temperature)
    return loss_supervised(logits, np.arange(b), "cross_entropy")


def pretrain_step(sentences, params: Params, predictor: Params, cfg: EncoderConfig, perturb_cfg: PerturbConfig,
                  rng: np.random.Generator, temperature: float = DEFAULT_TEMPERATURE, training: bool = True,
                  stop_gradient: bool = False, perturbed=None) -> Tensor:
    """Contrastive loss between clean embeddings and predictions from perturbed views.

    Both views go through the same encoder parameters. ``perturbed`` may be
    passed to freeze the views (e.g. for gradient checks).
    """
    sentences = list(sentences)
    if len(sentences) < 2:
        raise ShapeError("pre-training needs a batch of at least 2")
    if perturbed is None:
        perturbed = perturb_batch(sentences, perturb_cfg, rng)
    z = encode_batch(sentences, params, cfg, training, rng)
    if stop_gradient:
        z = ad.stop_gradient(z)
    z_pred = predict_embedding(encode_batch(perturbed, params, cfg, training, rng), predictor)
    return contrastive_loss(z, z_pred, temperature)
