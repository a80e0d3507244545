"""Run configuration: defaults, YAML files and environment overrides.

Precedence, lowest first: defaults, environment variables, the config file,
command-line flags."""

import os
from pathlib import Path
from typing import Any, Mapping, Optional

import attr
import yaml

from ._augment import GeneralAugmentSpec, StrongAugmentSpec
from ._encoder import EncoderConfig, GraphBranchConfig, ImageBranchConfig
from ._errors import ConfigError
from ._evaluation import ProtocolConfig
from ._synth import CLASS_RATIO_PRESETS
from ._trainer import TrainConfig

OUTPUT_ROOT_ENV = "GAIT_SSA_OUTPUT_ROOT"
WORKERS_ENV = "GAIT_SSA_WORKERS"
DEFAULT_OUTPUT_ROOT = "runs"
RESOLVED_FILE = "config.resolved"

# protocol fields that belong to the published schedule of each protocol
_SCHEDULE_FIELDS = ("epochs", "lr", "lr_milestones", "lr_gamma")


def _check_non_negative_int(instance, attribute, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ValueError(f"{attribute.name} must be a non-negative integer, got {value!r}")


def _optional_str(value):
    return None if value is None else str(value)


def _check_positive_int(instance, attribute, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{attribute.name} must be a positive integer, got {value!r}")


COMMAND_NAMES = ("synth", "augment-preview", "pretrain", "eval", "project")
PROJECTION_SPLITS = ("all", "train", "test")


@attr.s(frozen=True)
class CommandConfig:
    """Arguments that only some subcommands read.

    They live in the config so that the echo of a run holds everything the
    run depended on; ``name`` records which subcommand wrote it."""

    name: Optional[str] = attr.ib(
        default=None, validator=attr.validators.optional(attr.validators.in_(COMMAND_NAMES))
    )
    # synth
    n: int = attr.ib(default=400, validator=_check_positive_int)
    preset: str = attr.ib(default="egait", validator=attr.validators.in_(CLASS_RATIO_PRESETS))
    actors: int = attr.ib(default=12, validator=_check_positive_int)
    # augment-preview
    index: int = attr.ib(default=0, validator=_check_non_negative_int)
    # eval and project; None means <run directory>/checkpoint
    checkpoint: Optional[str] = attr.ib(default=None, converter=_optional_str)
    split: str = attr.ib(default="test", validator=attr.validators.in_(PROJECTION_SPLITS))


@attr.s(frozen=True)
class RunConfig:
    """Everything one command-line run depends on.

    ``seed`` and ``workers`` are global and are copied into ``train`` and
    ``protocol`` by :meth:`resolved`. ``command`` holds the arguments of
    single subcommands, e.g. the size of a synthetic dataset."""

    dataset: Optional[str] = attr.ib(default=None, converter=_optional_str)
    output_dir: Optional[str] = attr.ib(default=None, converter=_optional_str)
    seed: int = attr.ib(default=0, validator=_check_non_negative_int)
    workers: int = attr.ib(default=0, validator=_check_non_negative_int)
    general: GeneralAugmentSpec = attr.ib(factory=GeneralAugmentSpec)
    strong: StrongAugmentSpec = attr.ib(factory=StrongAugmentSpec)
    encoder: EncoderConfig = attr.ib(factory=EncoderConfig)
    train: TrainConfig = attr.ib(factory=TrainConfig)
    protocol: ProtocolConfig = attr.ib(factory=ProtocolConfig)
    command: CommandConfig = attr.ib(factory=CommandConfig)

    def resolved(self) -> "RunConfig":
        return attr.evolve(
            self,
            train=attr.evolve(self.train, seed=self.seed, workers=self.workers),
            protocol=attr.evolve(self.protocol, seed=self.seed),
        )

    def as_dict(self) -> dict:
        return attr.asdict(self, retain_collection_types=False)

    def require_dataset(self) -> Path:
        """The dataset directory; it must exist."""
        if self.dataset is None:
            raise ConfigError("no dataset given; pass --data or set dataset in the config file")
        path = Path(self.dataset)
        if not path.is_dir():
            raise FileNotFoundError(f"dataset directory {path} does not exist")
        return path

    def protocol_for(self, name: str, **overrides) -> ProtocolConfig:
        """The protocol config for ``name``.

        A config whose protocol is already ``name`` keeps its schedule;
        otherwise the published schedule of ``name`` replaces it and the
        other settings carry over."""
        current = self.protocol
        if current.protocol != name:
            carried = {
                k: v
                for k, v in attr.asdict(current).items()
                if k not in _SCHEDULE_FIELDS and k != "protocol"
            }
            current = ProtocolConfig.for_protocol(name, **carried)
        try:
            return attr.evolve(current, **overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


_SECTIONS = {
    "general": GeneralAugmentSpec,
    "strong": StrongAugmentSpec,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "protocol": ProtocolConfig,
    "command": CommandConfig,
}


def _check_keys(cls, data: Mapping[str, Any], where: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a mapping, got {type(data).__name__}")
    known = {a.name for a in attr.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")


def _check_encoder_keys(data: Mapping[str, Any]) -> None:
    _check_keys(EncoderConfig, data, "encoder")
    for branch, cls in (("graph", GraphBranchConfig), ("image", ImageBranchConfig)):
        if branch in data:
            _check_keys(cls, data[branch], f"encoder.{branch}")


def run_config_from_dict(data: Optional[Mapping[str, Any]]) -> RunConfig:
    """Build a RunConfig from plain data; missing keys keep their defaults."""
    data = dict(data or {})
    _check_keys(RunConfig, data, "config")
    kwargs = {}
    try:
        for name, value in data.items():
            cls = _SECTIONS.get(name)
            if cls is None:
                kwargs[name] = value
            elif cls is EncoderConfig:
                _check_encoder_keys(value)
                kwargs[name] = EncoderConfig(**value)
            else:
                _check_keys(cls, value, name)
                kwargs[name] = cls(**value)
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def environment_overrides(environ: Mapping[str, str] = os.environ) -> dict:
    overrides = {}
    workers = environ.get(WORKERS_ENV)
    if workers:
        try:
            overrides["workers"] = int(workers)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {workers!r}") from None
    return overrides


def output_root(environ: Mapping[str, str] = os.environ) -> Path:
    return Path(environ.get(OUTPUT_ROOT_ENV) or DEFAULT_OUTPUT_ROOT)


def _merge(base: dict, update: Mapping[str, Any]) -> dict:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    return data


def load_run_config(
    path=None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Mapping[str, str] = os.environ,
) -> RunConfig:
    """Resolve defaults, environment, ``path`` and ``overrides`` in that order.

    ``overrides`` uses the same nested layout as the file, e.g.
    ``{"train": {"epochs": 2}}``."""
    data = environment_overrides(environ)
    if path is not None:
        data = _merge(data, read_config_file(path))
    data = _merge(data, overrides or {})
    return run_config_from_dict(data).resolved()


def dump_run_config(cfg: RunConfig, path) -> Path:
    """Write ``cfg`` as YAML; :func:`load_run_config` reads it back unchanged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.as_dict(), sort_keys=False), encoding="utf-8")
    return path
