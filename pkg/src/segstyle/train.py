"""Desk-scale training loop for the transfer modules.

The encoder stays frozen; attention, merge, and decoder parameters take Adam
steps on the weighted sum of the four loss terms. Each step uses the full
fixed set of content/style pairs (pair i trains against image i+1, wrapping),
so the objective is constant across steps and the loss curve is smooth.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import torch

from .errors import ContractError, TrainingDivergedError
from .imaging import is_pow2, load_image, resize_image
from .losses import (
    LossWeights,
    content_loss_from_features,
    identity_losses,
    style_loss_from_features,
)
from .net import MIN_SIDE, StyleTransferNet, to_tensor

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values of one training step."""

    step: int
    content: float
    style: float
    identity1: float
    identity2: float
    total: float

    def is_finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.content, self.style, self.identity1, self.identity2, self.total)
        )


class StyleTrainer:
    """Owns the optimizer state for one training run (single writer).

    lr_decay is a per-step multiplicative factor (1.0 = constant rate);
    decaying the rate keeps the late loss curve from oscillating.
    """

    def __init__(
        self,
        net: StyleTransferNet,
        loss_weights: LossWeights,
        lr: float,
        lr_decay: float = 1.0,
    ):
        self.net = net
        self.loss_weights = loss_weights
        self.lr = lr
        self.lr_decay = lr_decay
        trainable = [p for p in net.parameters() if p.requires_grad]
        if not trainable:
            raise ContractError("network has no trainable parameters")
        self.optimizer = torch.optim.Adam(trainable, lr=lr)
        self._step_count = 0

    def step(self, content: torch.Tensor, style: torch.Tensor) -> LossBreakdown:
        """One gradient step on a (N, 3, H, W) content/style pair batch."""
        if content.shape[0] == 0:
            raise ContractError("batch must be nonempty")
        net = self.net
        net.train()
        ics = net.stylize_tensor(content, style)
        ics_feats = net.encode_pyramid(ics)
        content_feats = net.encode_pyramid(content)
        style_feats = net.encode_pyramid(style)
        lc = content_loss_from_features(ics_feats, content_feats)
        ls = style_loss_from_features(ics_feats, style_feats)
        lid1, lid2 = identity_losses(net, content, style)
        w = self.loss_weights
        total = w.content * lc + w.style * ls + w.identity1 * lid1 + w.identity2 * lid2
        self._step_count += 1
        breakdown = LossBreakdown(
            self._step_count,
            lc.detach().item(),
            ls.detach().item(),
            lid1.detach().item(),
            lid2.detach().item(),
            total.detach().item(),
        )
        if not breakdown.is_finite():
            raise TrainingDivergedError(
                f"non-finite loss at step {self._step_count}: {breakdown}"
            )
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        if self.lr_decay != 1.0:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.lr_decay
        return breakdown


def find_training_images(dataset_dir) -> tuple[list[str], list[str]]:
    """Content and style file lists for a dataset directory.

    With content/ and style/ subdirectories those pools are used; otherwise
    every image in the directory serves as content, paired with its rotated
    neighbor as style.
    """
    dataset_dir = os.fspath(dataset_dir)
    content_dir = os.path.join(dataset_dir, "content")
    style_dir = os.path.join(dataset_dir, "style")
    if os.path.isdir(content_dir) and os.path.isdir(style_dir):
        contents = _list_images(content_dir)
        styles = _list_images(style_dir)
        if not contents or not styles:
            raise ContractError(f"no images under '{content_dir}' / '{style_dir}'")
        n = max(len(contents), len(styles))
        return (
            [contents[i % len(contents)] for i in range(n)],
            [styles[i % len(styles)] for i in range(n)],
        )
    pool = _list_images(dataset_dir)
    if not pool:
        raise ContractError(f"no training images (png/jpeg) found in '{dataset_dir}'")
    styles = pool[1:] + pool[:1] if len(pool) > 1 else list(pool)
    return list(pool), styles


def _list_images(d) -> list[str]:
    return sorted(
        os.path.join(d, name)
        for name in os.listdir(d)
        if name.lower().endswith(IMAGE_EXTENSIONS)
    )


def load_batch(paths, size: int) -> torch.Tensor:
    if not (is_pow2(size) and size >= MIN_SIDE):
        raise ContractError(f"training size must be a power of two >= {MIN_SIDE}, got {size}")
    imgs = [resize_image(load_image(p), (size, size)) for p in paths]
    return torch.cat([to_tensor(im) for im in imgs], dim=0)


@dataclass
class TrainingResult:
    net: StyleTransferNet
    history: list[LossBreakdown]


def run_training(
    dataset_dir,
    steps: int = 200,
    lr: float = 5e-3,
    size: int = 64,
    seed: int = 0,
    profile: str = "tiny",
    loss_weights: LossWeights | None = None,
    lr_decay: float | None = None,
    csv_path=None,
    checkpoint_path=None,
    log_every: int = 0,
) -> TrainingResult:
    """Train from scratch on a directory of images; optionally persist outputs.

    The CSV (one row per step) and checkpoint are written incrementally /
    at the end respectively; with steps=0 the checkpoint equals the seeded
    initialization.
    """
    from .checkpoint import save_checkpoint

    if steps < 0:
        raise ContractError("steps must be >= 0")
    loss_weights = loss_weights or LossWeights()
    if lr_decay is None:
        # decay to 5% of the initial rate over the run
        lr_decay = 0.05 ** (1.0 / steps) if steps > 0 else 1.0
    content_paths, style_paths = find_training_images(dataset_dir)
    contents = load_batch(content_paths, size)
    styles = load_batch(style_paths, size)
    net = StyleTransferNet(profile, seed=seed)
    trainer = StyleTrainer(net, loss_weights, lr, lr_decay)
    history: list[LossBreakdown] = []
    writer = None
    csv_file = None
    try:
        if csv_path is not None:
            csv_file = open(os.fspath(csv_path), "w", newline="", encoding="utf-8")
            writer = csv.writer(csv_file)
            writer.writerow(["step", "content", "style", "id1", "id2", "total"])
        for _ in range(steps):
            breakdown = trainer.step(contents, styles)
            history.append(breakdown)
            if writer is not None:
                writer.writerow(
                    [
                        breakdown.step,
                        f"{breakdown.content:.6g}",
                        f"{breakdown.style:.6g}",
                        f"{breakdown.identity1:.6g}",
                        f"{breakdown.identity2:.6g}",
                        f"{breakdown.total:.6g}",
                    ]
                )
                csv_file.flush()
            if log_every and breakdown.step % log_every == 0:
                print(
                    f"step {breakdown.step}/{steps} total={breakdown.total:.4g} "
                    f"(content={breakdown.content:.4g} style={breakdown.style:.4g} "
                    f"id1={breakdown.identity1:.4g} id2={breakdown.identity2:.4g})"
                )
    finally:
        if csv_file is not None:
            csv_file.close()
    if checkpoint_path is not None:
        save_checkpoint(net, checkpoint_path, loss_weights)
    return TrainingResult(net, history)
