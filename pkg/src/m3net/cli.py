"""Command-line entry point: ``m3net <subcommand> ...``.

Configuration precedence is flag > config file > built-in default.  When
``--config`` is omitted, ``eval`` and ``match`` fall back to the
``config.txt`` that ``train`` writes next to its checkpoints.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import formats
from .config import TrainConfig, load_config, parse_assignments
from .encoding import encode_episode
from .episode import SPLITS, Episode, build_synthetic_splits, generate_synthetic_bank
from .errors import ConfigError, DataError, InsufficientClasses, M3NetError, ShapeMismatch
from .fusion import fuse
from .matching import match_views
from .model import ModelParams, expected_shapes
from .training import (
    GRAD_CHECK_CONFIG,
    _BANK,
    _RENDER,
    evaluate,
    grad_check,
    load_params,
    stream,
    train,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _config_flags(parser, out_help=None):
    parser.add_argument("--config", type=Path, help="key = value run configuration file")
    parser.add_argument("--seed", type=_u64, help="run seed (overrides the config file)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    if out_help:
        parser.add_argument("--out", type=Path, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="m3net", description="Few-shot fine-grained action matching on episodic data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic bank into per-split feature archives")
    _config_flags(p, "output directory (default: <out_dir>/data)")

    p = sub.add_parser("train", help="episodic training")
    _config_flags(p, "run directory (overrides out_dir)")

    p = sub.add_parser("eval", help="accuracy with a 95%% interval on fresh test episodes")
    p.add_argument("checkpoint", type=Path)
    _config_flags(p, "write per-query records as JSON lines to this file")
    p.add_argument("--episodes", type=int, default=1000, help="number of episodes (default 1000)")
    p.add_argument("--split", choices=SPLITS, default="novel-test")

    p = sub.add_parser("match", help="branch distances for one query against named support clips")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("archive", type=Path)
    p.add_argument("query", type=int, help="clip id of the query")
    p.add_argument("supports", type=int, nargs="+", help="clip ids of the supports")
    _config_flags(p)

    p = sub.add_parser("grad-check", help="finite-difference check of every gradient (float64)")
    _config_flags(p)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("inspect", help="summarise a feature archive or checkpoint")
    p.add_argument("path", type=Path)
    return parser


def resolve_config(args, base: TrainConfig | None = None, fallback: Path | None = None) -> TrainConfig:
    config = base or TrainConfig()
    path = args.config or (fallback if fallback is not None and fallback.exists() else None)
    if path is not None:
        config = load_config(path, config)
    overrides = parse_assignments(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None and args.command == "train":
        overrides["out_dir"] = str(args.out)
    return config.with_overrides(**overrides)


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    config = resolve_config(args)
    for name, count in (("train", config.train_classes), ("test", config.test_classes)):
        if count < config.n_way:
            raise InsufficientClasses(
                f"{name} split has {count} classes, fewer than n_way={config.n_way}")
    bank = generate_synthetic_bank(sum(config.split_sizes), config.n_subactions, config.m,
                                   config.c, config.noise_sigma, config.warp_strength,
                                   stream(config.seed, _BANK))
    splits = build_synthetic_splits(bank, config.split_sizes, config.clips_per_class,
                                    config.t, config.h, config.w, stream(config.seed, _RENDER))
    out = args.out or Path(config.out_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        ds = splits[split]
        formats.save_feature_archive(ds, out / f"{split}.m3fa")
        print(f"{split}: {len(ds.classes)} classes, {len(ds.clips)} clips, "
              f"clip shape {ds.clip_shape if ds.clips else None}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    result = train(config)
    last = result.trace[-1] if result.trace else None
    if last is not None:
        print(f"final episode {last.episode_index}: total loss {last.total:.6f}")
    print(f"checkpoint {result.checkpoint}")
    print(f"best {result.best_checkpoint}")
    print(f"trace {result.trace_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = resolve_config(args, fallback=args.checkpoint.parent / "config.txt")
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    report = evaluate(config, args.checkpoint, args.episodes, split=args.split,
                      keep_records=args.out is not None)
    print(f"mean_accuracy {report.mean_accuracy:.6f}")
    print(f"ci95_halfwidth {report.ci95_halfwidth:.6f}")
    print(f"n_episodes {report.n_episodes}")
    print("per_branch_accuracy " + " ".join(f"{a:.6f}" for a in report.per_branch_accuracy))
    if args.out is not None:
        with open(args.out, "w") as fh:
            for record in report.records:
                fh.write(json.dumps({"seed": config.seed, **record}) + "\n")
    return EXIT_OK


def match_episode(archive: Path, query_id: int, support_ids) -> Episode:
    """A one-query pseudo-episode; supports are grouped by class in ascending class order."""
    dataset = formats.load_feature_archive(archive)
    query = dataset.by_clip_id(query_id)
    supports = [dataset.by_clip_id(i) for i in support_ids]
    class_ids = sorted({c.class_id for c in supports})
    groups = [[c for c in supports if c.class_id == cls] for cls in class_ids]
    k = len(groups[0])
    if any(len(g) != k for g in groups):
        raise ShapeMismatch("every support class needs the same number of clips")
    label = class_ids.index(query.class_id) if query.class_id in class_ids else 0
    return Episode([c for g in groups for c in g], [query], class_ids, np.array([label]), k)


def cmd_match(args) -> int:
    config = resolve_config(args, fallback=args.checkpoint.parent / "config.txt")
    params = load_params(config, args.checkpoint)
    episode = match_episode(args.archive, args.query, args.supports)
    views = encode_episode(params, episode, 0, config.switches)
    scores = match_views(params.cm, views, episode)
    pred = fuse(scores, config.temperature)

    def row(tag, values):
        print(tag + " " + " ".join(f"{float(v):.6f}" for v in values))

    print("classes " + " ".join(str(c) for c in episode.class_ids))
    for tag, values in zip(("D1", "D2", "D3"), scores.as_tuple()):
        row(tag, values)
    for tag in ("y1", "y2", "y3", "y"):
        row(tag, getattr(pred, tag))
    print(f"predicted {episode.class_ids[pred.predicted_class]}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    config = resolve_config(args, base=GRAD_CHECK_CONFIG)
    report = grad_check(config, tolerance=args.tolerance)
    for group, err in report.group_errors.items():
        print(f"{group} {err:.3e}")
    print(f"max {report.max_error:.3e} tolerance {report.tolerance:.0e} "
          f"{'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_inspect(args) -> int:
    with open(args.path, "rb") as fh:
        magic = fh.read(4)
    if magic == formats.CHECKPOINT_MAGIC:
        named = formats.load_checkpoint(args.path)
        for name, value in named.items():
            print(f"{name} {tuple(value.shape)}")
        print(f"parameters {sum(v.size for v in named.values())}")
        return EXIT_OK
    dataset = formats.load_feature_archive(args.path)  # raises BadMagic for anything else
    print(f"split {dataset.split}")
    print(f"clips {len(dataset.clips)}")
    print(f"shape {dataset.clip_shape if dataset.clips else None}")
    for cls, count in sorted(Counter(c.class_id for c in dataset.clips).items()):
        print(f"class {cls} {count}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "match": cmd_match, "grad-check": cmd_grad_check, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"m3net: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"m3net: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"m3net: {exc}", file=sys.stderr)
        return EXIT_DATA
    except M3NetError as exc:
        print(f"m3net: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
