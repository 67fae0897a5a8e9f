"""Command-line entry point: ``gen-data``, ``train``, ``eval`` and ``predict``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 training
aborted, 5 checkpoint/schema mismatch, 6 unknown class token.

Settings come from a ``key = value`` file (``#`` starts a comment); command
flags override file values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import FeatureExtractorConfig
from .checkpoint import load_checkpoint
from .episodes import ANNOTATIONS, DatasetIndex
from .errors import ParseError, SchemaError, TrainingAborted, UnknownClassError
from .model import predict_query
from .seghead import HeadConfig
from .synthdata import ATTRIBUTES, SynthConfig, generate, load_embeddings, read_pgm, read_ppm, write_pgm
from .trainer import TrainConfig, evaluate, run

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ABORT, EXIT_CHECKPOINT, EXIT_CLASS = 0, 2, 3, 4, 5, 6

logger = logging.getLogger("ridgeproto")


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}")
        return text

    return parse


DEFAULTS = {
    "seed": (int, 0),
    "image_size": (int, 32),
    "images_per_class": (int, 60),
    "folds": (int, 4),
    "noise_sigma": (float, 0.03),
    "episodes_total": (int, 30000),
    "lr0": (float, 1e-3),
    "momentum": (float, 0.9),
    "weight_decay": (float, 5e-4),
    "lr_decay_factor": (float, 0.1),
    "lr_decay_every": (int, 10000),
    "c_way": (int, 1),
    "k_shot": (int, 1),
    "n_query": (int, 1),
    "annotation_mode": (_choice(*ANNOTATIONS), "dense"),
    "eval_every": (int, 0),
    "n_eval": (int, 1000),
    "prototype_mode": (_choice("ridge", "mean"), "ridge"),
    "dtype": (_choice("float32", "float64"), "float32"),
    "block_channels": (_ints, (16, 32, 32)),
    "kernel": (int, 3),
    "alpha": (float, 10.0),
    "beta": (float, 1.0),
    "dataset_dir": (str, "data"),
    "embedding_file": (str, ""),
    "checkpoint": (str, ""),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def synth(self) -> SynthConfig:
        v = self.values
        return SynthConfig(image_size=v["image_size"], images_per_class=v["images_per_class"], folds=v["folds"], noise_sigma=v["noise_sigma"], seed=v["seed"])

    def train(self, fold: int) -> TrainConfig:
        v = self.values
        return TrainConfig(
            episodes_total=v["episodes_total"],
            lr0=v["lr0"],
            momentum=v["momentum"],
            weight_decay=v["weight_decay"],
            lr_decay_factor=v["lr_decay_factor"],
            lr_decay_every=v["lr_decay_every"],
            c_way=v["c_way"],
            k_shot=v["k_shot"],
            n_query=v["n_query"],
            annotation_mode=v["annotation_mode"],
            seed=v["seed"],
            eval_every=v["eval_every"],
            n_eval=v["n_eval"],
            held_out=fold,
            checkpoint=v["checkpoint"] or None,
            prototype_mode=v["prototype_mode"],
            dtype=v["dtype"],
            extractor=FeatureExtractorConfig(block_channels=v["block_channels"], kernel=v["kernel"]),
            head=self.head(),
        )

    def head(self) -> HeadConfig:
        return HeadConfig(alpha=self.values["alpha"], beta=self.values["beta"])

    def embedding_path(self) -> Path:
        if self.values["embedding_file"]:
            return Path(self.values["embedding_file"])
        return Path(self.values["dataset_dir"]) / ATTRIBUTES


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key = value")
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value
    values = {}
    for key, (parse, default) in DEFAULTS.items():
        if overrides and overrides.get(key) is not None:
            values[key] = overrides[key]
        elif key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        else:
            values[key] = default
    return RunConfig(values)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, overrides)


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, {"dataset_dir": args.out})
    try:
        synth = cfg.synth()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    generate(synth, cfg["dataset_dir"])
    print(Path(cfg["dataset_dir"]) / "manifest.txt")
    return EXIT_OK


def _load_dataset(cfg: RunConfig):
    index = DatasetIndex.load(cfg["dataset_dir"])
    attrs = load_embeddings(cfg.embedding_path())
    return index, attrs


def _check_fold(index: DatasetIndex, fold: int) -> None:
    if fold not in index.folds:
        raise ConfigError(f"fold {fold} is not one of {index.folds}")


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"checkpoint": args.checkpoint})
    index, attrs = _load_dataset(cfg)
    _check_fold(index, args.fold)
    try:
        tcfg = cfg.train(args.fold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if tcfg.checkpoint is None:
        tcfg = replace(tcfg, checkpoint=str(Path(cfg["dataset_dir"]) / f"checkpoint_fold{args.fold}.stf"))
    train_classes = index.classes("train", args.fold)
    print(f"training on folds {sorted({index.class_folds[c] for c in train_classes})}, held out {args.fold}")
    _, report = run(tcfg, index, attrs)
    print(report.text())
    print(report.result_line(episodes=tcfg.n_eval, ways=tcfg.c_way, shots=tcfg.k_shot, annotation=tcfg.annotation_mode))
    print(f"checkpoint {tcfg.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    index, attrs = _load_dataset(cfg)
    _check_fold(index, args.fold)
    ckpt = _read_checkpoint(args.checkpoint, np.float64 if cfg["dtype"] == "float64" else np.float32)
    episodes = args.episodes if args.episodes is not None else cfg["n_eval"]
    ways = args.ways if args.ways is not None else cfg["c_way"]
    shots = args.shots if args.shots is not None else cfg["k_shot"]
    annotation = args.annotation or cfg["annotation_mode"]
    report = evaluate(ckpt.params, index, attrs, args.fold, episodes, ways, shots, annotation, cfg["seed"], cfg.head(), ckpt.mode)
    print(report.text())
    print(report.result_line(episodes=episodes, ways=ways, shots=shots, annotation=annotation))
    return EXIT_OK


def _read_checkpoint(path, dtype=np.float32):
    try:
        return load_checkpoint(path, dtype=dtype)
    except FileNotFoundError:
        raise
    except (SchemaError, ParseError, OSError) as exc:
        raise _CheckpointError(str(exc)) from None


class _CheckpointError(Exception):
    pass


def cmd_predict(args) -> int:
    ckpt = _read_checkpoint(args.checkpoint)
    attrs = load_embeddings(args.embeddings) if args.embeddings else ckpt.attrs
    if attrs is None:
        raise ConfigError("checkpoint carries no attribute table; pass --embeddings")
    head = HeadConfig(alpha=args.alpha, beta=args.beta)
    support, classes = [], []
    for spec in args.support:
        parts = spec.rsplit(":", 2)
        if len(parts) != 3:
            raise ConfigError(f"support entry {spec!r} is not image:mask:class")
        img_path, mask_path, token = parts
        if token not in attrs:
            raise UnknownClassError(token)
        image = read_ppm(img_path).astype(np.float32) / 255.0
        mask = read_pgm(mask_path)
        if mask.shape != image.shape[:2]:
            raise ConfigError(f"mask {mask_path} does not match image {img_path}")
        support.append((image, mask > 0))
        classes.append(token)
    query = read_ppm(args.query).astype(np.float32) / 255.0
    pred = predict_query(ckpt.params, support, classes, query, attrs, head, ckpt.mode)
    write_pgm(args.out, pred.labels)
    print(f"foreground_pixels = {int(np.sum(pred.labels > 0))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ridgeproto", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic shapes corpus")
    g.add_argument("--config")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="meta-train with one fold held out")
    t.add_argument("--config")
    t.add_argument("--fold", type=int, required=True)
    t.add_argument("--checkpoint")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out episodes")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--fold", type=int, required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--annotation", choices=ANNOTATIONS)
    e.add_argument("--shots", type=int)
    e.add_argument("--ways", type=int)
    e.set_defaults(fn=cmd_eval)

    q = sub.add_parser("predict", help="segment one query image")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--support", nargs="+", required=True, metavar="IMG:MASK:CLASS")
    q.add_argument("--query", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--embeddings")
    q.add_argument("--alpha", type=float, default=10.0)
    q.add_argument("--beta", type=float, default=1.0)
    q.set_defaults(fn=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnknownClassError as exc:
        print(f"unknown class token: {exc}", file=sys.stderr)
        return EXIT_CLASS
    except _CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (OSError, ParseError, SchemaError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
