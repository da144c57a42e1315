"""Command-line entry point.

Everything that changes results comes from the config file; flags only name
paths and verbosity. Errors exit non-zero with a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, default_config_dict, load_config
from .errors import BiosignalError, ConfigError, EmptySplit
from .metrics import EvalReport
from .signal import load_recording
from .synthgen import generate_dataset, read_corpus, write_corpus
from .tokenizer import tokens_per_channel
from .trainer import (
    Dataset,
    evaluate_model,
    fine_tune,
    load_checkpoint,
    model_from_checkpoint,
    pretrain_unsupervised,
    save_checkpoint,
    train_supervised,
)

log = logging.getLogger("biosent")

ABLATION_AXES = {"rate": "rate_hz", "token_len": "token_len_s", "overlap": "overlap_s"}


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _report_dict(report: EvalReport | None, metrics=()):
    if report is None:
        return None
    out = report.to_dict()
    if metrics:
        out["metrics"] = {k: v for k, v in out["metrics"].items() if k in metrics}
    return out


def load_split_corpus(corpus_dir) -> Dataset:
    d = Path(corpus_dir)
    if not (d / "train").is_dir() or not (d / "val").is_dir():
        raise EmptySplit(f"{d}: expected 'train/' and 'val/' sub-directories (and optionally 'test/')")
    test = read_corpus(d / "test") if (d / "test").is_dir() else []
    return Dataset(read_corpus(d / "train"), read_corpus(d / "val"), test)


def load_eval_corpus(corpus_dir):
    d = Path(corpus_dir)
    return read_corpus(d / "test") if (d / "test").is_dir() else read_corpus(d)


def load_unlabelled_corpus(corpus_dir):
    d = Path(corpus_dir)
    return read_corpus(d / "train") if (d / "train").is_dir() else read_corpus(d)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, out_dir):
    s = cfg.synth
    base = s.task
    splits = {"train": (s.n_train, 0), "val": (s.n_val, 1), "test": (s.n_test, 2)}
    for name, (n, offset) in splits.items():
        if n <= 0:
            continue
        task = dataclasses.replace(base, seed=base.seed * 1000 + offset)
        write_corpus(generate_dataset(task, n, prefix=f"{name}_"), Path(out_dir) / name)
    return Path(out_dir)


def _metrics_doc(result, cfg: RunConfig, command: str):
    return {
        "command": command,
        "best_epoch": result.best_epoch,
        "monitor_metric": result.best.manifest.get("monitor_metric"),
        "test": _report_dict(result.test_report, cfg.task.metrics),
        "history": result.history,
    }


def cmd_train(cfg: RunConfig, corpus, out_ckpt, metrics_out=None):
    data = load_split_corpus(corpus)
    result = train_supervised(data, cfg.tokenizer, cfg.encoder, cfg.train, cfg.task.n_classes)
    save_checkpoint(result.best, out_ckpt)
    doc = _metrics_doc(result, cfg, "train")
    _write_text(metrics_out or f"{out_ckpt}.metrics.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return result


def cmd_pretrain(cfg: RunConfig, corpora, out_ckpt):
    datasets = [load_unlabelled_corpus(c) for c in corpora]
    result = pretrain_unsupervised(
        datasets, cfg.tokenizer, cfg.encoder, cfg.train, cfg.pretrain.perturb,
        save_epochs=cfg.pretrain.save_epochs,
    )
    save_checkpoint(result.checkpoint, out_ckpt)
    for epoch, ckpt in result.saved.items():
        save_checkpoint(ckpt, f"{out_ckpt}.epoch{epoch}")
    return result


def cmd_finetune(cfg: RunConfig, ckpt_path, corpus, out_ckpt, metrics_out=None):
    data = load_split_corpus(corpus)
    ckpt = load_checkpoint(ckpt_path)
    n_classes = cfg.task.n_classes
    if n_classes is None:
        labels = [r.label for r in data.train]
        n_classes = int(max(max(labels) + 1, 2))
    result = fine_tune(ckpt, data, n_classes, cfg.train, encoder=_encoder_for_compat(cfg, ckpt))
    save_checkpoint(result.best, out_ckpt)
    doc = _metrics_doc(result, cfg, "finetune")
    _write_text(metrics_out or f"{out_ckpt}.metrics.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return result


def _encoder_for_compat(cfg: RunConfig, ckpt):
    """Config encoder with derived fields copied from the checkpoint, for shape checks."""
    stored = ckpt.manifest["config"]["encoder"]
    return dataclasses.replace(cfg.encoder, fft_size=stored["fft_size"], n_channels=stored["n_channels"])


def cmd_eval(ckpt_path, corpus, cfg: RunConfig | None = None, fmt: str = "json") -> str:
    cfg = cfg or RunConfig()
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    report = evaluate_model(model, load_eval_corpus(corpus), cfg.mask.spec, cfg.mask.seed)
    if cfg.task.metrics:
        report = EvalReport({k: v for k, v in report.metrics.items() if k in cfg.task.metrics},
                            report.n_samples, report.n_classes)
    return report.to_json() + "\n" if fmt == "json" else report.to_csv()


def cmd_encode(ckpt_path, recordings) -> str:
    model = model_from_checkpoint(load_checkpoint(ckpt_path))
    recs = [load_recording(p, vocab=model.vocab) for p in recordings]
    emb = model.embed([model.sentence(r) for r in recs])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"e{i}" for i in range(emb.shape[1])])
    for rec, row in zip(recs, emb):
        w.writerow([rec.id] + [repr(float(v)) for v in row])
    return buf.getvalue()


def cmd_ablate(cfg: RunConfig, corpus, axis: str, values) -> str:
    """Retrain once per value of one tokenizer axis; one CSV row per value."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {sorted(ABLATION_AXES)}", details=[f"axis: {axis}"])
    data = load_split_corpus(corpus)
    probe = data.test[0] if data.test else data.val[0]
    duration = probe.channels[0].duration
    rows = []
    metric_names = None
    for value in values:
        tok = dataclasses.replace(cfg.tokenizer, **{ABLATION_AXES[axis]: float(value)})
        result = train_supervised(data, tok, cfg.encoder, cfg.train, cfg.task.n_classes)
        report = result.test_report or EvalReport(result.history[-1]["val"], len(data.val), result.model.n_classes)
        metrics = {k: v for k, v in report.metrics.items() if not cfg.task.metrics or k in cfg.task.metrics}
        if metric_names is None:
            metric_names = sorted(metrics)
        rows.append([axis, repr(float(value)), tokens_per_channel(duration, tok.token_len_s, tok.overlap_s),
                     repr(float(np.mean([len(result.model.sentence(r)) for r in data.val])))]
                    + [repr(float(metrics.get(k, float("nan")))) for k in metric_names])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "tokens_per_channel", "mean_sentence_length"] + (metric_names or []))
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="biosent", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def config_arg(sp, required=False):
        sp.add_argument("--config", required=required, default=None,
                        help="run config (.json or .toml); built-in defaults when omitted")

    sp = sub.add_parser("config", help="print the default config with every key", formatter_class=fmt)

    sp = sub.add_parser("synth", help="write a synthetic train/val/test corpus", formatter_class=fmt)
    config_arg(sp)
    sp.add_argument("--out", required=True, help="output corpus directory")

    sp = sub.add_parser("pretrain", help="contrastive pre-training on unlabelled corpora", formatter_class=fmt)
    config_arg(sp)
    sp.add_argument("--out", required=True, help="output checkpoint base path (<out>.ckpt.json/.f32)")
    sp.add_argument("corpora", nargs="+", help="corpus directories (their train/ split is used when present)")

    sp = sub.add_parser("train", help="supervised training", formatter_class=fmt)
    config_arg(sp)
    sp.add_argument("--corpus", required=True, help="corpus directory with train/ val/ [test/]")
    sp.add_argument("--out", required=True, help="output checkpoint base path")
    sp.add_argument("--metrics-out", default=None, help="metrics JSON path (default <out>.metrics.json)")

    sp = sub.add_parser("finetune", help="head-swap fine-tuning from a checkpoint", formatter_class=fmt)
    config_arg(sp)
    sp.add_argument("--ckpt", required=True, help="pre-trained checkpoint")
    sp.add_argument("--corpus", required=True, help="corpus directory with train/ val/ [test/]")
    sp.add_argument("--out", required=True, help="output checkpoint base path")
    sp.add_argument("--metrics-out", default=None, help="metrics JSON path (default <out>.metrics.json)")

    sp = sub.add_parser("eval", help="evaluate a checkpoint, optionally under a [mask] spec",
                        formatter_class=fmt)
    config_arg(sp)
    sp.add_argument("--ckpt", required=True, help="checkpoint to evaluate")
    sp.add_argument("--corpus", required=True, help="corpus directory (test/ split used when present)")
    sp.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    sp.add_argument("--out", default=None, help="write the report here instead of stdout")

    sp = sub.add_parser("encode", help="sentence embeddings as CSV, one row per recording",
                        formatter_class=fmt)
    sp.add_argument("--ckpt", required=True, help="checkpoint to encode with")
    sp.add_argument("--out", default=None, help="CSV path (default stdout)")
    sp.add_argument("recordings", nargs="+", help="recording files (.bsr.json or .csv)")

    sp = sub.add_parser("ablate", help="metric-vs-value sweep over one tokenizer axis", formatter_class=fmt)
    config_arg(sp)
    sp.add_argument("--corpus", required=True, help="corpus directory with train/ val/ [test/]")
    sp.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES), help="tokenizer axis to sweep")
    sp.add_argument("--values", required=True, nargs="+", type=float, help="values for the axis")
    sp.add_argument("--out", default=None, help="CSV path (default stdout)")
    return p


def _emit(text: str, out):
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


def run(args) -> int:
    c = args.command
    if c == "config":
        sys.stdout.write(json.dumps(default_config_dict(), indent=2) + "\n")
    elif c == "synth":
        cmd_synth(_config(args.config), args.out)
    elif c == "pretrain":
        cmd_pretrain(_config(args.config), args.corpora, args.out)
    elif c == "train":
        cmd_train(_config(args.config), args.corpus, args.out, args.metrics_out)
    elif c == "finetune":
        cmd_finetune(_config(args.config), args.ckpt, args.corpus, args.out, args.metrics_out)
    elif c == "eval":
        _emit(cmd_eval(args.ckpt, args.corpus, _config(args.config), args.format), args.out)
    elif c == "encode":
        _emit(cmd_encode(args.ckpt, args.recordings), args.out)
    elif c == "ablate":
        _emit(cmd_ablate(_config(args.config), args.corpus, args.axis, args.values), args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return run(args)
    except BiosignalError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 2 if isinstance(exc, ConfigError) else 1
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
