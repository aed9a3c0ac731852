"""Shared fixtures: deterministic images, masks, nets, and a toy training run."""
import time

import numpy as np
import pytest
import torch

from segstyle.imaging import BinaryMask, Image, save_image
from segstyle.net import StyleTransferNet
from segstyle.segmentation import InstanceMask, SegmentationResult
from segstyle.train import run_training


def make_rng(seed=0):
    return np.random.default_rng(seed)


def random_image(width, height, seed=0) -> Image:
    rng = make_rng(seed)
    return Image(rng.random((height, width, 3), dtype=np.float32))


def smooth_image(width, height, seed=0) -> Image:
    """Low-frequency gradient + soft blob; reconstructable at toy scale."""
    rng = make_rng(seed)
    xs, ys = np.meshgrid(np.linspace(0, 1, width), np.linspace(0, 1, height))
    c0, c1, c2 = rng.random(3), rng.random(3), rng.random(3)
    t = np.clip((xs * rng.uniform(-1, 1) + ys * rng.uniform(-1, 1) + 1.5) / 3.0, 0, 1)[..., None]
    arr = c0 * (1 - t) + c1 * t
    cx, cy, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.15, 0.3)
    blob = np.exp(-(((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * r * r)))[..., None]
    arr = arr * (1 - 0.8 * blob) + c2 * 0.8 * blob
    return Image(np.clip(arr, 0, 1).astype(np.float32))


def box_mask(width, height, x0, y0, x1, y1) -> BinaryMask:
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def three_piece_segmentation(width=48, height=40) -> SegmentationResult:
    """Disjoint boxes standing in for flower / vase / bench detections."""
    flower = InstanceMask(box_mask(width, height, 4, 4, 14, 12), "flower", 0.95)
    vase = InstanceMask(box_mask(width, height, 16, 8, 30, 28), "vase", 0.9)
    bench = InstanceMask(box_mask(width, height, 2, 30, 46, 38), "bench", 0.8)
    return SegmentationResult.from_instances([flower, vase, bench], (width, height))


@pytest.fixture(scope="session")
def tiny_net():
    return StyleTransferNet("tiny", seed=0)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Eight smooth 64x64 images on disk."""
    d = tmp_path_factory.mktemp("toyset")
    for k in range(8):
        save_image(smooth_image(64, 64, seed=100 + k), d / f"img_{k}.png")
    return d


@pytest.fixture(scope="session")
def trained(tmp_path_factory, toy_dataset):
    """One 200-step toy training run, shared by the tests that need a
    trained checkpoint (reconstruction quality, gray-shift, smoke curve)."""
    out = tmp_path_factory.mktemp("trained")
    csv_path = out / "losses.csv"
    ckpt_path = out / "checkpoint.ckpt"
    start = time.perf_counter()
    result = run_training(
        toy_dataset,
        steps=200,
        lr=5e-3,
        size=64,
        seed=0,
        profile="tiny",
        csv_path=csv_path,
        checkpoint_path=ckpt_path,
    )
    seconds = time.perf_counter() - start
    return {
        "result": result,
        "csv": csv_path,
        "checkpoint": ckpt_path,
        "dataset": toy_dataset,
        "seconds": seconds,
    }


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)
