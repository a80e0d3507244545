"""The ``gait-ssa`` command line."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import attr
import numpy as np

from ._abc import BrokenWorkerError
from ._augment import STRONG_PRESETS, AugmentationPlan
from ._checkpoint import load_encoder
from ._config import (
    PROJECTION_SPLITS,
    RESOLVED_FILE,
    RunConfig,
    dump_run_config,
    load_run_config,
    output_root,
    read_config_file,
)
from ._dataset import GaitDataset, load_dataset, save_dataset, split_dataset
from ._encoder import VARIANTS
from ._errors import (
    CheckpointFormatError,
    ConfigError,
    DatasetFormatError,
    MissingLabelsError,
    NonFiniteLossError,
)
from ._evaluation import (
    F1_MODES,
    extract_features,
    finetune_eval,
    lda_projection,
    linear_eval,
    semi_supervised_eval,
)
from ._synth import CLASS_RATIO_PRESETS, SynthConfig, generate_synthetic
from ._trainer import pretrain_run

logger = logging.getLogger(__name__)

PROG = "gait-ssa"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_INPUT = 4
EXIT_MALFORMED = 5
EXIT_NON_FINITE = 6

METRICS_FILE = "metrics.txt"
POINTS_FILE = "embedding_points.tsv"
PREVIEW_DIR = "augment_preview"
CHECKPOINT_DIR = "checkpoint"


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{PROG}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    # suppressed defaults so a subcommand does not reset options given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="global seed for every random draw")
    common.add_argument("--workers", type=int, help="augmentation worker processes (0: inline)")
    common.add_argument("--out", type=Path, help="run directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings only")
    return common


def _eval_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, help="labeled dataset directory")
    parser.add_argument("--checkpoint", type=Path, help="default: <run directory>/checkpoint")
    parser.add_argument("--epochs", type=int, help="override the protocol's epoch count")
    parser.add_argument("--f1-mode", choices=F1_MODES)


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _ArgumentParser(
        prog=PROG,
        description="Self-supervised gait emotion representations.",
        parents=[common],
    )
    commands = parser.add_subparsers(
        dest="command", metavar="COMMAND", parser_class=_ArgumentParser
    )
    commands.required = True

    synth = commands.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    synth.add_argument("--n", type=int, help="number of sequences (default 400)")
    synth.add_argument("--preset", choices=sorted(CLASS_RATIO_PRESETS))
    synth.add_argument("--actors", type=int, help="distinct actors (default 12)")

    preview = commands.add_parser(
        "augment-preview", parents=[common], help="write the three views of one sample"
    )
    preview.add_argument("--data", type=Path)
    preview.add_argument("--index", type=int, help="sample to preview (default 0)")
    preview.add_argument("--strong-preset", choices=sorted(STRONG_PRESETS))

    pretrain = commands.add_parser(
        "pretrain", parents=[common], help="self-supervised pretraining"
    )
    pretrain.add_argument("--data", type=Path)
    pretrain.add_argument("--epochs", type=int)
    pretrain.add_argument("--batch-size", type=int)
    pretrain.add_argument("--bank-size", type=int)
    pretrain.add_argument("--alpha", type=float)
    pretrain.add_argument("--beta", type=float)
    pretrain.add_argument("--strong-preset", choices=sorted(STRONG_PRESETS))
    pretrain.add_argument("--variant", choices=VARIANTS)

    evaluate = commands.add_parser("eval", parents=[common], help="downstream evaluation")
    protocols = evaluate.add_subparsers(
        dest="protocol", metavar="PROTOCOL", parser_class=_ArgumentParser
    )
    protocols.required = True
    _eval_options(protocols.add_parser("linear", parents=[common]))
    finetune = protocols.add_parser("finetune", parents=[common])
    _eval_options(finetune)
    finetune.add_argument("--short", action="store_true", help="20-epoch schedule")
    semi = protocols.add_parser("semi", parents=[common])
    _eval_options(semi)
    semi.add_argument("--fraction", type=float, help="labeled fraction: 0.05, 0.1, 0.2 or 0.5")
    semi.add_argument("--allow-any-fraction", action="store_true")

    project = commands.add_parser(
        "project", parents=[common], help="2-D discriminant projection of embeddings"
    )
    project.add_argument("--data", type=Path)
    project.add_argument("--checkpoint", type=Path)
    project.add_argument("--split", choices=PROJECTION_SPLITS, help="default: test")
    return parser


def _configure_logging(args) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _overrides(args) -> dict:
    overrides = {}
    flags = (("seed", "seed"), ("workers", "workers"), ("data", "dataset"), ("out", "output_dir"))
    for flag, key in flags:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "strong_preset", None) is not None:
        preset = STRONG_PRESETS[args.strong_preset]
        overrides["strong"] = attr.asdict(preset, retain_collection_types=False)
    if getattr(args, "variant", None) is not None:
        overrides["encoder"] = {"variant": args.variant}
    train = {
        key: getattr(args, key)
        for key in ("epochs", "batch_size", "bank_size", "alpha", "beta")
        if args.command == "pretrain" and getattr(args, key, None) is not None
    }
    if train:
        overrides["train"] = train
    command = {
        key: getattr(args, key)
        for key in ("n", "preset", "actors", "index", "checkpoint", "split")
        if getattr(args, key, None) is not None
    }
    command["name"] = args.command
    overrides["command"] = command
    return overrides


def _run_dir(cfg: RunConfig, command: str) -> Path:
    if cfg.output_dir is not None:
        return Path(cfg.output_dir)
    return output_root() / f"{command}-seed{cfg.seed}"


def _plan(cfg: RunConfig, topology) -> AugmentationPlan:
    return AugmentationPlan(cfg.general, cfg.strong, topology)


def _splits(ds: GaitDataset, seed: int):
    if ds.split_tags is not None and {"train", "test"} <= set(ds.split_tags):
        return ds.tagged("train"), ds.tagged("test")
    return split_dataset(ds, 0.8, seed)


def _checkpoint_path(cfg: RunConfig, run_dir: Path) -> Path:
    if cfg.command.checkpoint is not None:
        return Path(cfg.command.checkpoint)
    return run_dir / CHECKPOINT_DIR


def _written_by(path: Path) -> Optional[str]:
    try:
        command = read_config_file(path).get("command")
    except ConfigError:
        return None
    return command.get("name") if isinstance(command, dict) else None


def write_echo(cfg: RunConfig, run_dir: Path, label: str) -> Path:
    """Write the resolved ``cfg`` of a run into ``run_dir``.

    The echo is ``config.resolved`` unless that file holds the echo of another
    subcommand, e.g. evaluating inside the pretraining run directory; then it
    is ``config.<label>.resolved``. Paths in the echo are the resolved ones, so
    ``--config <echo>`` repeats the run."""
    cfg = attr.evolve(cfg, output_dir=str(run_dir))
    path = run_dir / RESOLVED_FILE
    if path.is_file() and _written_by(path) not in (None, cfg.command.name):
        path = run_dir / f"config.{label}.resolved"
    return dump_run_config(cfg, path)


def cmd_synth(args, cfg: RunConfig) -> None:
    command = cfg.command
    try:
        synth_cfg = SynthConfig.from_preset(
            command.preset, n_samples=command.n, seed=cfg.seed, n_actors=command.actors
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = _run_dir(cfg, "synth")
    ds = generate_synthetic(synth_cfg)
    save_dataset(ds, out)
    write_echo(attr.evolve(cfg, dataset=str(out)), out, "synth")
    logger.info("wrote %d sequences (%s) to %s", len(ds), command.preset, out)


def cmd_augment_preview(args, cfg: RunConfig) -> None:
    ds = load_dataset(cfg.require_dataset())
    index = cfg.command.index
    if index >= len(ds):
        raise ConfigError(f"index {index} is out of range for {len(ds)} samples")
    run_dir = _run_dir(cfg, "augment-preview")
    sample = ds.data[index : index + 1]
    views = _plan(cfg, ds.topology).augment_batch(sample, [cfg.seed])[:, 0]
    preview = GaitDataset(
        np.concatenate([sample, views]),
        np.repeat(ds.labels[index], 4),
        ds.topology,
    )
    save_dataset(preview, run_dir / PREVIEW_DIR)
    write_echo(cfg, run_dir, "augment-preview")
    logger.info(
        "wrote original, general, general and strong views of sample %d to %s",
        index,
        run_dir / PREVIEW_DIR,
    )


def cmd_pretrain(args, cfg: RunConfig) -> None:
    ds = load_dataset(cfg.require_dataset())
    train, _ = _splits(ds, cfg.seed)
    run_dir = _run_dir(cfg, "pretrain")
    write_echo(cfg, run_dir, "pretrain")
    result = pretrain_run(train, cfg.train, cfg.encoder, _plan(cfg, ds.topology), run_dir)
    logger.info(
        "pretrained on %d sequences for %d epochs; checkpoint at %s",
        len(train),
        cfg.train.epochs,
        result.checkpoint,
    )


def _labeled_dataset(cfg: RunConfig) -> GaitDataset:
    ds = load_dataset(cfg.require_dataset())
    if not ds.is_labeled:
        raise MissingLabelsError(f"{cfg.dataset} is not fully labeled")
    return ds


def _with_checkpoint(cfg: RunConfig, label: str):
    run_dir = _run_dir(cfg, label)
    checkpoint = _checkpoint_path(cfg, run_dir)
    cfg = attr.evolve(cfg, command=attr.evolve(cfg.command, checkpoint=str(checkpoint)))
    return cfg, run_dir, load_encoder(checkpoint)


def cmd_eval(args, cfg: RunConfig) -> None:
    name = args.protocol
    if name == "finetune" and args.short:
        name = "finetune-short"
    overrides = {
        key: getattr(args, key)
        for key in ("epochs", "f1_mode", "fraction")
        if getattr(args, key, None) is not None
    }
    if getattr(args, "allow_any_fraction", False):
        overrides["allow_any_fraction"] = True
    protocol = cfg.protocol_for(name, **overrides)
    cfg = attr.evolve(cfg, protocol=protocol)

    ds = _labeled_dataset(cfg)
    train, test = _splits(ds, cfg.seed)
    cfg, run_dir, encoder = _with_checkpoint(cfg, f"eval-{name}")
    write_echo(cfg, run_dir, f"eval-{name}")
    if name == "linear":
        report = linear_eval(encoder, train, test, protocol)
    elif name == "semi":
        report = semi_supervised_eval(encoder, train, test, cfg=protocol)
    else:
        report = finetune_eval(encoder, train, test, protocol)
    path = run_dir / METRICS_FILE
    path.write_text(report.to_text(), encoding="utf-8")
    logger.info("%s: accuracy %.4f; metrics written to %s", name, report.accuracy, path)


def cmd_project(args, cfg: RunConfig) -> None:
    ds = _labeled_dataset(cfg)
    split = cfg.command.split
    if split != "all":
        ds = _splits(ds, cfg.seed)[0 if split == "train" else 1]
    cfg, run_dir, encoder = _with_checkpoint(cfg, "project")
    write_echo(cfg, run_dir, "project")
    features = extract_features(encoder, ds).double().numpy()
    projection = lda_projection(features, ds.labels)
    path = run_dir / POINTS_FILE
    path.write_text(projection.to_tsv(), encoding="utf-8")
    logger.info("wrote %d projected points to %s", len(ds), path)


COMMANDS = {
    "synth": cmd_synth,
    "augment-preview": cmd_augment_preview,
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "project": cmd_project,
}


def _fail(code: int, message) -> int:
    print(f"{PROG}: error: {message}", file=sys.stderr)
    return code


def run(argv: Optional[List[str]] = None) -> int:
    """Execute one command line and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_USAGE
    _configure_logging(args)
    try:
        cfg = load_run_config(getattr(args, "config", None), _overrides(args))
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_INPUT, exc)
    except (DatasetFormatError, CheckpointFormatError, MissingLabelsError) as exc:
        return _fail(EXIT_MALFORMED, exc)
    except NonFiniteLossError as exc:
        return _fail(EXIT_NON_FINITE, exc)
    except BrokenWorkerError as exc:
        logger.debug("augmentation worker failed", exc_info=True)
        return _fail(EXIT_FAILURE, exc)
    except Exception as exc:
        logger.debug("unexpected failure", exc_info=True)
        return _fail(EXIT_FAILURE, f"{type(exc).__name__}: {exc}")
    return EXIT_OK


def main() -> None:
    sys.exit(run())
