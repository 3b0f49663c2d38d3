"""Python bindings for the packed JEPA core.

Configs are plain dicts with the same layout as the JSON run files. Missing
keys take their defaults.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, NamedTuple

from . import _core
from ._core import (
    ConfigError,
    ContractViolation,
    Error,
    FormatError,
    RejectedSample,
    build_mask,
    checkerboard_score,
    make_synthetic,
    pack,
    pack_bench,
    patchify,
    pca_visualize,
    rankme,
    read_image,
    smooth_l1,
    tail_stats,
)

__all__ = [
    "CommandResult",
    "ConfigError",
    "ContractViolation",
    "Error",
    "FormatError",
    "RejectedSample",
    "build_mask",
    "checkerboard_score",
    "config_hash",
    "default_config",
    "ema_beta_at",
    "encode",
    "load_config",
    "loss_map",
    "lr_at",
    "make_synthetic",
    "pack",
    "pack_bench",
    "patchify",
    "pca_visualize",
    "pretrain",
    "probe",
    "rankme",
    "read_image",
    "sample",
    "scale_image",
    "smooth_l1",
    "tail_stats",
    "visualize",
]


class CommandResult(NamedTuple):
    code: int
    stdout: str
    stderr: str


def _dump(config: dict[str, Any] | None) -> str:
    return json.dumps(config or {})


def default_config() -> dict[str, Any]:
    return json.loads(_core.default_config())


def load_config(path: str | Path) -> dict[str, Any]:
    return json.loads(_core.load_config(Path(path)))


def config_hash(config: dict[str, Any] | None = None) -> str:
    return _core.config_hash(_dump(config))


def lr_at(step: int, config: dict[str, Any] | None = None) -> float:
    return _core.lr_at(step, _dump(config))


def ema_beta_at(step: int, config: dict[str, Any] | None = None) -> float:
    return _core.ema_beta_at(step, _dump(config))


def scale_image(image, s: float, config: dict[str, Any] | None = None):
    return _core.scale_image(image, s, _dump(config))


def sample(image, config: dict[str, Any] | None = None, seed: int = 0) -> dict[str, Any]:
    return _core.sample(image, _dump(config), seed)


def encode(checkpoint: str | Path, config: dict[str, Any], image, student: bool = False):
    return _core.encode(Path(checkpoint), _dump(config), image, student)


def pretrain(config: str | Path, **kwargs) -> CommandResult:
    return CommandResult(*_core.pretrain(Path(config), **kwargs))


def loss_map(config: str | Path, checkpoint: str | Path, **kwargs) -> CommandResult:
    return CommandResult(*_core.loss_map(Path(config), Path(checkpoint), **kwargs))


def probe(config: str | Path, checkpoint: str | Path, **kwargs) -> CommandResult:
    return CommandResult(*_core.probe(Path(config), Path(checkpoint), **kwargs))


def visualize(config: str | Path, checkpoint: str | Path, **kwargs) -> CommandResult:
    return CommandResult(*_core.visualize(Path(config), Path(checkpoint), **kwargs))
