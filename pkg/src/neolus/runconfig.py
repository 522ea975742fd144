"""Run configuration files: key-value pairs in nested [sections].

The grammar is INI-style: section headers in brackets, ``key = value``
lines, ``#``/``;`` comments. Values are typed by the key: booleans are
``true``/``false``, numbers are plain literals, pairs and lists are
comma-separated, everything else is a raw string. A saved config reproduces
its run; the ``NEOLUS_SEED`` environment variable overrides every seed in
the file.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union, get_type_hints

from .metrics import LEVELS
from .models import BackboneSpec, HeadSpec
from .phantom import PhantomSpec
from .preprocess import AugmentationConfig
from .training import TrainingConfig

ENV_SEED = "NEOLUS_SEED"


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _coerce(raw: str, typ: Any, key: str) -> Any:
    import typing

    if typing.get_origin(typ) is Union:
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if len(args) == 1:
            typ = args[0]
    try:
        if typ is bool:
            return _parse_bool(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw.strip()
        if typ == tuple[int, int]:
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 2:
                raise ConfigError(f"expected two comma-separated integers, got {raw!r}")
            return (int(parts[0]), int(parts[1]))
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse {raw!r} as {typ}") from None
    raise ConfigError(f"key '{key}': unsupported config type {typ}")


def _dataclass_from_section(cls, section: Mapping[str, str], context: str):
    hints = get_type_hints(cls)
    kwargs = {}
    field_names = {f.name for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key not in field_names:
            raise ConfigError(f"[{context}] unknown key '{key}'")
        kwargs[key] = _coerce(raw, hints[key], f"{context}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{context}] {exc}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _dataclass_to_section(obj) -> dict[str, str]:
    return {
        f.name: _format_value(getattr(obj, f.name))
        for f in dataclasses.fields(obj)
        if getattr(obj, f.name) is not None
    }


@dataclass
class RunConfig:
    manifest_path: Path
    out_dir: Path
    backbone: BackboneSpec
    head: HeadSpec
    training: TrainingConfig
    augmentation: AugmentationConfig
    split_path: Optional[Path] = None
    video_root: Optional[Path] = None  # defaults to the manifest's directory
    split_scheme: str = "holdout:0.6/0.2/0.2"
    split_seed: int = 0
    split_fold: int = 0
    eval_levels: tuple[str, ...] = LEVELS

    def __post_init__(self) -> None:
        if self.head.task != self.training.strategy:
            raise ConfigError(
                f"head task {self.head.task!r} must match training strategy "
                f"{self.training.strategy!r}"
            )
        bad = [lvl for lvl in self.eval_levels if lvl not in LEVELS]
        if bad:
            raise ConfigError(f"unknown evaluation levels {bad}; known: {LEVELS}")

    def resolved_video_root(self) -> Path:
        return self.video_root if self.video_root is not None else Path(self.manifest_path).parent


def _read_ini(path: Union[str, Path]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def apply_env_seed(cfg: RunConfig, env: Mapping[str, str] = os.environ) -> RunConfig:
    """Override every seed with NEOLUS_SEED when it is set."""
    raw = env.get(ENV_SEED)
    if raw is None:
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_SEED} must be an integer, got {raw!r}") from None
    cfg = dataclasses.replace(cfg, split_seed=seed)
    cfg.training = dataclasses.replace(cfg.training, seed=seed)
    cfg.augmentation = dataclasses.replace(cfg.augmentation, seed=seed)
    return cfg


def load_run_config(path: Union[str, Path], env: Mapping[str, str] = os.environ) -> RunConfig:
    parser = _read_ini(path)
    if not parser.has_section("paths"):
        raise ConfigError(f"{path}: missing [paths] section")
    paths = parser["paths"]
    if "manifest" not in paths or "out_dir" not in paths:
        raise ConfigError(f"{path}: [paths] needs 'manifest' and 'out_dir'")

    def section(name: str) -> dict[str, str]:
        return dict(parser[name]) if parser.has_section(name) else {}

    backbone = _dataclass_from_section(BackboneSpec, section("backbone"), "backbone")
    head = _dataclass_from_section(HeadSpec, section("head"), "head")
    training = _dataclass_from_section(TrainingConfig, section("training"), "training")
    augmentation = _dataclass_from_section(AugmentationConfig, section("augmentation"), "augmentation")

    split = section("split")
    evaluation = section("evaluation")
    levels = tuple(
        s.strip() for s in evaluation.get("levels", ",".join(LEVELS)).split(",") if s.strip()
    )

    cfg = RunConfig(
        manifest_path=Path(paths["manifest"]),
        out_dir=Path(paths["out_dir"]),
        split_path=Path(paths["split"]) if "split" in paths else None,
        video_root=Path(paths["video_root"]) if "video_root" in paths else None,
        backbone=backbone,
        head=head,
        training=training,
        augmentation=augmentation,
        split_scheme=split.get("scheme", "holdout:0.6/0.2/0.2"),
        split_seed=_coerce(split.get("seed", "0"), int, "split.seed"),
        split_fold=_coerce(split.get("fold", "0"), int, "split.fold"),
        eval_levels=levels,
    )
    return apply_env_seed(cfg, env)


def save_run_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    paths: dict[str, str] = {
        "manifest": str(cfg.manifest_path),
        "out_dir": str(cfg.out_dir),
    }
    if cfg.split_path is not None:
        paths["split"] = str(cfg.split_path)
    if cfg.video_root is not None:
        paths["video_root"] = str(cfg.video_root)
    parser["paths"] = paths
    parser["backbone"] = {
        "name": cfg.backbone.name,
        "pretrained": _format_value(cfg.backbone.pretrained),
    }
    parser["head"] = {"pooling": cfg.head.pooling, "task": cfg.head.task}
    parser["training"] = _dataclass_to_section(cfg.training)
    parser["augmentation"] = _dataclass_to_section(cfg.augmentation)
    parser["split"] = {
        "scheme": cfg.split_scheme,
        "seed": str(cfg.split_seed),
        "fold": str(cfg.split_fold),
    }
    parser["evaluation"] = {"levels": ",".join(cfg.eval_levels)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        parser.write(fh)


def load_phantom_spec(path: Union[str, Path]) -> PhantomSpec:
    """Read a [phantom] section; absent keys fall back to PhantomSpec defaults."""
    parser = _read_ini(path)
    section = dict(parser["phantom"]) if parser.has_section("phantom") else {}
    return _dataclass_from_section(PhantomSpec, section, "phantom")


def save_phantom_spec(spec: PhantomSpec, path: Union[str, Path]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser["phantom"] = _dataclass_to_section(spec)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        parser.write(fh)
