"""Optimization: Adam, checkpoints, and the supervised / pre-training / fine-tuning loops."""

from __future__ import annotations

import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, encode_batch, init_encoder_params, new_channel_rows
from .errors import CorruptCheckpoint, EmptySplit, IncompatibleCheckpoint, NaNGradient
from .metrics import EvalReport, evaluate
from .objectives import (
    DEFAULT_TEMPERATURE,
    PerturbConfig,
    classify,
    init_head,
    init_predictor,
    loss_supervised,
    pretrain_step,
)
from .params import Params
from .signal import ChannelVocabulary, RawRecording
from .synthgen import MaskSpec, apply_mask
from .tokenizer import BiosignalSentence, TokenizerConfig, build_sentence

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MONITOR_METRICS = ("auroc", "cohen_kappa", "balanced_accuracy")
_DTYPES = {"float32": np.float32, "float64": np.float64}
# encoder fields a checkpoint must share with the model it is loaded into
_COMPAT_FIELDS = ("embed_dim", "n_heads", "n_layers", "rank", "max_tokens", "fft_size", "fcn_hidden", "feature_mode")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    decoupled_weight_decay: bool = False
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    monitor_metric: str | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "float32"
    loss: str | None = None
    focal_gamma: float = 2.0
    temperature: float = DEFAULT_TEMPERATURE
    stop_gradient: bool = False
    eval_test_each_epoch: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size >= 1 and max_epochs >= 0 required")
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {tuple(_DTYPES)}")
        if self.monitor_metric is not None and self.monitor_metric not in MONITOR_METRICS:
            raise ValueError(f"monitor_metric must be one of {MONITOR_METRICS}")

    @property
    def dtype(self):
        return _DTYPES[self.precision]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One Adam update of the ``name -> array`` mapping ``params``, in place.

    Coupled L2 (``g + wd·θ`` before the moments) unless
    ``cfg.decoupled_weight_decay`` is set.
    """
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NaNGradient(f"non-finite gradient for {name!r} at step {t}")
        if cfg.weight_decay and not cfg.decoupled_weight_decay:
            g = g + cfg.weight_decay * theta
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay and cfg.decoupled_weight_decay:
            theta -= cfg.lr * cfg.weight_decay * theta
        theta -= (cfg.lr * update).astype(theta.dtype, copy=False)
    return params, state


class Adam:
    def __init__(self, params: Params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.state = AdamState()

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(arrays, grads, self.state, self.cfg)


# ---------------------------------------------------------------------------
# model bundle and checkpoints


@dataclass
class Model:
    tokenizer: TokenizerConfig
    encoder: EncoderConfig
    vocab: ChannelVocabulary
    params: Params
    head: Params | None = None
    predictor: Params | None = None
    n_classes: int = 0

    def all_params(self) -> Params:
        out = Params(self.params.with_prefix("encoder"))
        if self.head is not None:
            out.update(self.head.with_prefix("head"))
        if self.predictor is not None:
            out.update(self.predictor.with_prefix("predictor"))
        return out

    def sentence(self, recording: RawRecording) -> BiosignalSentence:
        return build_sentence(recording, self.tokenizer, self.vocab)

    def embed(self, sentences, batch_size: int = 256) -> np.ndarray:
        sentences = list(sentences)
        out = []
        with ad.no_grad():
            for i in range(0, len(sentences), batch_size):
                out.append(encode_batch(sentences[i:i + batch_size], self.params, self.encoder).data)
        return np.concatenate(out, axis=0)

    def predict_proba(self, sentences, batch_size: int = 256) -> np.ndarray:
        if self.head is None:
            raise ValueError("model has no prediction head")
        sentences = list(sentences)
        out = []
        with ad.no_grad():
            for i in range(0, len(sentences), batch_size):
                z = encode_batch(sentences[i:i + batch_size], self.params, self.encoder)
                logits = classify(z, self.head).data.astype(np.float64)
                if self.n_classes == 1:
                    out.append(1.0 / (1.0 + np.exp(-logits[:, 0])))
                else:
                    e = np.exp(logits - logits.max(axis=1, keepdims=True))
                    out.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(out, axis=0)


def make_model(tok: TokenizerConfig, enc: EncoderConfig, vocab: ChannelVocabulary, n_classes: int,
               rng: np.random.Generator, dtype=np.float32, predictor: bool = False) -> Model:
    """Fresh model; fft size and channel-table rows follow the tokenizer and vocabulary."""
    enc = replace(enc, fft_size=tok.token_samples, n_channels=max(len(vocab), 1))
    params = init_encoder_params(enc, rng, dtype)
    head = init_head(rng, enc.embed_dim, n_classes, dtype) if n_classes else None
    pred = init_predictor(rng, enc.embed_dim, dtype) if predictor else None
    return Model(tok, enc, ChannelVocabulary(vocab.ids), params, head, pred, n_classes)


@dataclass
class Checkpoint:
    manifest: dict
    arrays: "OrderedDict[str, np.ndarray]"

    @property
    def history(self) -> list:
        return self.manifest.get("history", [])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def to_checkpoint(model: Model, train_cfg: TrainConfig | None = None, step: int = 0, history=None, extra=None) -> Checkpoint:
    arrays = OrderedDict((k, np.ascontiguousarray(v.data, dtype="<f4")) for k, v in model.all_params().items())
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "tokenizer": asdict(model.tokenizer),
            "encoder": model.encoder.to_dict(),
            "train": asdict(train_cfg) if train_cfg is not None else None,
        },
        "vocab": list(model.vocab.ids),
        "n_classes": int(model.n_classes),
        "step": int(step),
        "history": list(history or []),
        "parameters": [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()],
    }
    if extra:
        manifest.update(extra)
    return Checkpoint(_jsonable(manifest), arrays)


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> Model:
    cfg = ckpt.manifest["config"]
    tok = TokenizerConfig(**cfg["tokenizer"])
    enc = EncoderConfig(**cfg["encoder"])
    groups = {"encoder": Params(), "head": Params(), "predictor": Params()}
    for name, arr in ckpt.arrays.items():
        group, _, rest = name.partition(".")
        if group not in groups:
            raise CorruptCheckpoint(f"unexpected parameter {name!r}")
        groups[group][rest] = ad.Tensor(np.array(arr, dtype=dtype), requires_grad=True)
    return Model(
        tok, enc, ChannelVocabulary(ckpt.manifest["vocab"]), groups["encoder"],
        groups["head"] or None, groups["predictor"] or None, int(ckpt.manifest.get("n_classes", 0)),
    )


def _ckpt_paths(path):
    p = str(path)
    for suffix in (".ckpt.json", ".ckpt.f32"):
        if p.endswith(suffix):
            p = p[: -len(suffix)]
    return Path(p + ".ckpt.json"), Path(p + ".ckpt.f32")


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write ``<name>.ckpt.json`` and ``<name>.ckpt.f32``; returns the manifest path."""
    manifest_path, blob_path = _ckpt_paths(path)
    manifest = dict(ckpt.manifest)
    manifest["parameters"] = [{"name": k, "shape": list(a.shape)} for k, a in ckpt.arrays.items()]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in ckpt.arrays.values())
    _atomic_write(blob_path, blob)
    _atomic_write(manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return manifest_path


def load_checkpoint(path) -> Checkpoint:
    manifest_path, blob_path = _ckpt_paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        specs = manifest["parameters"]
        shapes = [(s["name"], tuple(int(d) for d in s["shape"])) for s in specs]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{manifest_path}: unreadable manifest ({exc})") from exc
    if not blob_path.exists():
        raise CorruptCheckpoint(f"{blob_path} is missing")
    raw = blob_path.read_bytes()
    expected = sum(int(np.prod(s)) for _, s in shapes) * 4
    if len(raw) != expected:
        raise CorruptCheckpoint(f"{blob_path}: {len(raw)} bytes, manifest shapes need {expected}")
    flat = np.frombuffer(raw, dtype="<f4")
    arrays = OrderedDict()
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        arrays[name] = flat[offset:offset + n].reshape(shape).copy()
        offset += n
    return Checkpoint(manifest, arrays)


# ---------------------------------------------------------------------------
# data handling


@dataclass
class Dataset:
    train: list
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def all(self):
        return list(self.train) + list(self.val) + list(self.test)


def _labels(recordings) -> np.ndarray:
    labels = [r.label for r in recordings]
    if any(l is None for l in labels):
        raise ValueError("supervised training needs labelled recordings")
    return np.asarray(labels, dtype=np.int64)


def _batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 1):
    perm = rng.permutation(n)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in out if len(b) >= min_size]


def default_monitor(n_classes: int) -> str:
    return "auroc" if n_classes <= 2 else "cohen_kappa"


def default_loss(n_classes: int) -> str:
    return "bce" if n_classes == 1 else "cross_entropy"


def evaluate_sentences(model: Model, sentences, labels) -> EvalReport:
    probs = model.predict_proba(sentences)
    return evaluate(labels, probs, model.n_classes)


def evaluate_model(model: Model, recordings, mask: MaskSpec | None = None, seed: int = 0) -> EvalReport:
    """Metrics on labelled recordings, optionally after applying a missing-data mask."""
    recordings = list(recordings)
    if mask is not None and (mask.segments or mask.channels):
        rng = np.random.default_rng(seed)
        recordings = [apply_mask(r, mask, rng) for r in recordings]
    sentences = [model.sentence(r) for r in recordings]
    return evaluate_sentences(model, sentences, _labels(recordings))


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    model: Model
    best: Checkpoint
    last: Checkpoint
    history: list
    best_epoch: int
    test_report: EvalReport | None = None


def _streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train_supervised(dataset: Dataset, tok: TokenizerConfig, enc: EncoderConfig, cfg: TrainConfig,
                     n_classes: int | None = None, vocab: ChannelVocabulary | None = None,
                     init_model: Model | None = None) -> TrainResult:
    """Epoch loop with validation monitoring and best-checkpoint selection."""
    if not dataset.train:
        raise EmptySplit("training split is empty")
    if not dataset.val:
        raise EmptySplit("validation split is empty")
    init_rng, shuffle_rng, dropout_rng = _streams(cfg.seed, 3)
    y_train = _labels(dataset.train)
    if n_classes is None:
        n_classes = int(max(y_train.max() + 1, 2))
    if init_model is not None:
        model = init_model
    else:
        if vocab is None:
            vocab = ChannelVocabulary.from_recordings(dataset.all())
        model = make_model(tok, enc, vocab, n_classes, init_rng, cfg.dtype)
    loss_kind = cfg.loss or default_loss(model.n_classes)
    monitor = cfg.monitor_metric or default_monitor(model.n_classes)

    train_s = [model.sentence(r) for r in dataset.train]
    val_s = [model.sentence(r) for r in dataset.val]
    y_val = _labels(dataset.val)
    test_s = [model.sentence(r) for r in dataset.test] if dataset.test else []
    y_test = _labels(dataset.test) if dataset.test else None

    params = model.all_params()
    opt = Adam(params, cfg)
    history = []
    best_score = -np.inf
    best_arrays = params.arrays()
    best_epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for idx in _batches(len(train_s), cfg.batch_size, shuffle_rng):
            opt.zero_grad()
            z = encode_batch([train_s[i] for i in idx], model.params, model.encoder, True, dropout_rng)
            loss = loss_supervised(classify(z, model.head), y_train[idx], loss_kind, cfg.focal_gamma)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_report = evaluate_sentences(model, val_s, y_val)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val": val_report.metrics}
        if test_s and cfg.eval_test_each_epoch:
            entry["test"] = evaluate_sentences(model, test_s, y_test).metrics
        score = val_report.metrics.get(monitor, -np.inf)
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_arrays = params.arrays()
        entry["best_epoch"] = best_epoch
        history.append(_jsonable(entry))
        log.info("epoch %d loss %.4f val %s %.4f", epoch, entry["train_loss"], monitor, score)

    step = opt.state.step
    last = to_checkpoint(model, cfg, step, history, {"best_epoch": best_epoch, "monitor_metric": monitor, "selected": "last"})
    params.load_arrays(best_arrays)
    best = to_checkpoint(model, cfg, step, history, {"best_epoch": best_epoch, "monitor_metric": monitor, "selected": "best"})
    test_report = evaluate_sentences(model, test_s, y_test) if test_s else None
    return TrainResult(model, best, last, history, best_epoch, test_report)


@dataclass
class PretrainResult:
    model: Model
    checkpoint: Checkpoint
    history: list
    saved: dict = field(default_factory=dict)


def _interleave(per_dataset_batches):
    """Round-robin over datasets until every batch list is exhausted."""
    out = []
    longest = max((len(b) for b in per_dataset_batches), default=0)
    for i in range(longest):
        for d, batches in enumerate(per_dataset_batches):
            if i < len(batches):
                out.append((d, batches[i]))
    return out


def pretrain_unsupervised(datasets, tok: TokenizerConfig, enc: EncoderConfig, cfg: TrainConfig,
                          perturb_cfg: PerturbConfig | None = None, vocab: ChannelVocabulary | None = None,
                          save_epochs=()) -> PretrainResult:
    """Contrastive pre-training over one or more unlabelled corpora of any formats."""
    datasets = [list(d) for d in datasets]
    if not datasets or any(len(d) == 0 for d in datasets):
        raise EmptySplit("pre-training needs at least one non-empty dataset")
    if cfg.batch_size < 2:
        raise ValueError("pre-training needs batch_size >= 2")
    if any(len(d) < 2 for d in datasets):
        raise ValueError("every pre-training dataset needs at least 2 recordings")
    perturb_cfg = perturb_cfg or PerturbConfig()
    init_rng, shuffle_rng, step_rng = _streams(cfg.seed, 3)
    if vocab is None:
        vocab = ChannelVocabulary.from_recordings(r for d in datasets for r in d)
    model = make_model(tok, enc, vocab, 0, init_rng, cfg.dtype, predictor=True)
    sentences = [[model.sentence(r) for r in d] for d in datasets]
    params = model.all_params()
    opt = Adam(params, cfg)

    def run_epoch(train: bool):
        order = _interleave([_batches(len(s), cfg.batch_size, shuffle_rng, min_size=2) for s in sentences])
        losses = []
        for d, idx in order:
            batch = [sentences[d][i] for i in idx]
            if train:
                opt.zero_grad()
                loss = pretrain_step(batch, model.params, model.predictor, model.encoder, perturb_cfg, step_rng,
                                     cfg.temperature, True, cfg.stop_gradient)
                loss.backward()
                opt.step()
            else:
                with ad.no_grad():
                    loss = pretrain_step(batch, model.params, model.predictor, model.encoder, perturb_cfg,
                                         step_rng, cfg.temperature, False)
            losses.append(loss.item())
        return float(np.mean(losses))

    history = [{"epoch": 0, "loss": run_epoch(False)}]
    saved = {}
    for epoch in range(1, cfg.max_epochs + 1):
        history.append({"epoch": epoch, "loss": run_epoch(True)})
        log.info("pretrain epoch %d loss %.4f", epoch, history[-1]["loss"])
        if epoch in save_epochs:
            saved[epoch] = to_checkpoint(model, cfg, opt.state.step, history, {"selected": f"epoch{epoch}"})
    ckpt = to_checkpoint(model, cfg, opt.state.step, history, {"selected": "last"})
    return PretrainResult(model, ckpt, history, saved)


def check_compatible(ckpt_enc: EncoderConfig, enc: EncoderConfig):
    bad = [f for f in _COMPAT_FIELDS if getattr(ckpt_enc, f) != getattr(enc, f)]
    if bad:
        raise IncompatibleCheckpoint(
            "checkpoint encoder differs in " + ", ".join(f"{f} ({getattr(ckpt_enc, f)} vs {getattr(enc, f)})" for f in bad),
            details=bad,
        )


def prepare_fine_tune(ckpt: Checkpoint, n_classes: int, new_channels=(), rng: np.random.Generator | None = None,
                      encoder: EncoderConfig | None = None, dtype=np.float32) -> Model:
    """Load the encoder, drop head/predictor, append rows for unseen channels, attach a fresh head."""
    model = model_from_checkpoint(ckpt, dtype)
    if encoder is not None:
        check_compatible(model.encoder, encoder)
    rng = rng if rng is not None else np.random.default_rng(0)
    added = [c for c in dict.fromkeys(new_channels) if c not in model.vocab]
    if added:
        table = model.params["channel_table"]
        rows = new_channel_rows(rng, len(added), model.encoder.embed_dim, table.dtype)
        model.params["channel_table"] = ad.Tensor(np.concatenate([table.data, rows.data]), requires_grad=True)
        model.vocab = model.vocab.extended(added)
        model.encoder = replace(model.encoder, n_channels=len(model.vocab))
    model.predictor = None
    model.n_classes = n_classes
    model.head = init_head(rng, model.encoder.embed_dim, n_classes, dtype)
    return model


def fine_tune(ckpt: Checkpoint, dataset: Dataset, n_classes: int, cfg: TrainConfig,
              encoder: EncoderConfig | None = None) -> TrainResult:
    """Head-swap fine-tuning of a pre-trained encoder on a new labelled dataset."""
    head_rng = _streams(cfg.seed, 4)[3]
    channels = ChannelVocabulary.from_recordings(dataset.all()).ids
    model = prepare_fine_tune(ckpt, n_classes, channels, head_rng, encoder, cfg.dtype)
    return train_supervised(dataset, model.tokenizer, model.encoder, cfg, n_classes, init_model=model)
