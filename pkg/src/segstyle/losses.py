"""Training losses: content, style statistics, and the two identity terms.

All functions accept (N, 3, H, W) image batches (or single Images) and reduce
per item first, then mean over the batch, so single-pair values do not depend
on batching. Every term is nonnegative and exactly zero in its identity case.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError
from .imaging import Image
from .net import StyleTransferNet, calc_mean_std, mean_variance_norm, to_tensor


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the four loss terms."""

    content: float = 1.0
    style: float = 3.0
    identity1: float = 50.0
    identity2: float = 1.0

    def __post_init__(self):
        for name in ("content", "style", "identity1", "identity2"):
            if getattr(self, name) < 0:
                raise ContractError(f"loss weight {name} must be nonnegative")


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, Image):
        return to_tensor(x)
    if x.dim() == 3:
        return x.unsqueeze(0)
    return x


def content_loss_from_features(a_feats, b_feats) -> torch.Tensor:
    """Mean squared distance between normalized relu4_1 and relu5_1 features."""
    loss = 0.0
    for idx in (3, 4):
        loss = loss + F.mse_loss(
            mean_variance_norm(a_feats[idx]), mean_variance_norm(b_feats[idx])
        )
    return loss


def style_loss_from_features(a_feats, b_feats) -> torch.Tensor:
    """Distance between per-channel feature statistics across all five layers."""
    loss = 0.0
    for fa, fb in zip(a_feats, b_feats):
        mean_a, std_a = calc_mean_std(fa)
        mean_b, std_b = calc_mean_std(fb)
        loss = loss + torch.linalg.vector_norm(
            (mean_a - mean_b).flatten(1), dim=1
        ).mean()
        loss = loss + torch.linalg.vector_norm((std_a - std_b).flatten(1), dim=1).mean()
    return loss


def _sqdist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-item sum of squared differences, averaged over the batch."""
    return ((a - b) ** 2).flatten(1).sum(dim=1).mean()


def content_loss(net: StyleTransferNet, result, content) -> torch.Tensor:
    a = net.encode_pyramid(_as_batch(result))
    b = net.encode_pyramid(_as_batch(content))
    return content_loss_from_features(a, b)


def style_loss(net: StyleTransferNet, result, style) -> torch.Tensor:
    a = net.encode_pyramid(_as_batch(result))
    b = net.encode_pyramid(_as_batch(style))
    return style_loss_from_features(a, b)


def identity_losses(net: StyleTransferNet, content, style):
    """Reconstruction penalties when an image serves as both content and style.

    Returns (pixel-space term, feature-space term). Both are zero for a
    network that reproduces its input exactly.
    """
    c = _as_batch(content)
    s = _as_batch(style)
    rcc = net.stylize_tensor(c, c)
    rss = net.stylize_tensor(s, s)
    l_id1 = _sqdist(rcc, c) + _sqdist(rss, s)
    c_feats = net.encode_pyramid(c)
    s_feats = net.encode_pyramid(s)
    rcc_feats = net.encode_pyramid(rcc)
    rss_feats = net.encode_pyramid(rss)
    l_id2 = rcc.new_zeros(())
    for fa, fb in zip(rcc_feats, c_feats):
        l_id2 = l_id2 + _sqdist(fa, fb)
    for fa, fb in zip(rss_feats, s_feats):
        l_id2 = l_id2 + _sqdist(fa, fb)
    return l_id1, l_id2
