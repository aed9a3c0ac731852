"""Run configuration: defaults, config-file loading, flag overrides.

Precedence is flags > config file > built-in defaults. Every run directory
embeds the resolved snapshot so results stay reproducible.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

from .errors import ContractError
from .imaging import INTERPOLATIONS, RESIZE_MODES, ResizePolicy
from .losses import LossWeights

BACKENDS = ("external-model", "manifest")
PASTE_ORDER_CHOICES = ("area-desc", "manifest")


@dataclass
class PipelineConfig:
    """All tunables for segment / stylize / segstylize / train runs."""

    resize_mode: str = "scale-to-pow2"
    max_side: int = 512
    interpolation: str = "bilinear"
    score_threshold: float = 0.5
    min_mask_pixels: int = 16
    paste_order: str | list = "area-desc"
    lambda_content: float = 1.0
    lambda_style: float = 3.0
    lambda_identity1: float = 50.0
    lambda_identity2: float = 1.0
    weights: str | None = None
    backend: str = "external-model"
    manifest: str | None = None
    output_dir: str = "runs"
    seed: int = 0

    def validate(self, check_paths: bool = True) -> "PipelineConfig":
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ContractError(f"score_threshold must be in [0, 1], got {self.score_threshold}")
        if self.backend not in BACKENDS:
            raise ContractError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.resize_mode not in RESIZE_MODES:
            raise ContractError(f"resize_mode must be one of {RESIZE_MODES}")
        if self.interpolation not in INTERPOLATIONS:
            raise ContractError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.min_mask_pixels < 0:
            raise ContractError("min_mask_pixels must be >= 0")
        if not (
            self.paste_order in PASTE_ORDER_CHOICES
            or (
                isinstance(self.paste_order, list)
                and all(isinstance(i, int) for i in self.paste_order)
            )
        ):
            raise ContractError(
                "paste_order must be 'area-desc', 'manifest', or a list of indices"
            )
        self.resize_policy()  # validates max_side / mode / interpolation together
        self.loss_weights()
        if check_paths:
            for name in ("weights", "manifest"):
                path = getattr(self, name)
                if path is not None and not os.path.exists(path):
                    raise ContractError(f"{name} path does not exist: {path}")
        return self

    def resize_policy(self) -> ResizePolicy:
        return ResizePolicy(self.resize_mode, self.max_side, self.interpolation)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            self.lambda_content,
            self.lambda_style,
            self.lambda_identity1,
            self.lambda_identity2,
        )

    def snapshot(self) -> dict:
        return asdict(self)


def load_config_file(path) -> dict:
    """Read a JSON config file, rejecting keys that are not config fields."""
    with open(os.fspath(path), "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ContractError(f"config file '{path}' is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ContractError(f"config file '{path}' must hold a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    for key in doc:
        if key not in known:
            raise ContractError(f"config file '{path}' has unknown key {key!r}")
    return doc


def resolve_config(
    config_file=None, overrides: dict | None = None, check_paths: bool = True
) -> PipelineConfig:
    """Defaults, then config file values, then non-None overrides."""
    values = asdict(PipelineConfig())
    if config_file is not None:
        values.update(load_config_file(config_file))
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in values:
                raise ContractError(f"unknown config override {key!r}")
            values[key] = value
    return PipelineConfig(**values).validate(check_paths=check_paths)
