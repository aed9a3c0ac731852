"""Ingestion of external pretrained encoder weights.

The encoder topology matches the widely distributed "normalised" 19-layer
feature stack shipped as a flat torch sequential (keys "0.weight" ..
"43.weight", conv layers only). ``ingest_encoder_state`` maps such a state
dict onto a network's frozen encoder; ``fetch_weights`` downloads one,
verifies its SHA-256, and converts it into a fresh checkpoint whose transfer
modules (attention, merge, decoder) still need training.

Downloads happen only through the explicit fetch command, never implicitly,
and always against a caller-supplied digest.
"""
from __future__ import annotations

import hashlib
import os
import tempfile
import urllib.request

import torch

from .errors import CheckpointError, ContractError
from .net import ENCODER_SLICES, StyleTransferNet

# flat sequential indices that hold conv weights in the donor file
ENCODER_CONV_INDICES = (0, 2, 5, 9, 12, 16, 19, 22, 25, 29, 32, 35, 38, 42)


def _locate(flat_index: int) -> tuple[int, int]:
    """Map a flat encoder index to (block number 1..5, index within block)."""
    for k, (start, stop) in enumerate(ENCODER_SLICES):
        if start <= flat_index < stop:
            return k + 1, flat_index - start
    raise ContractError(f"flat index {flat_index} is outside the encoder")


def ingest_encoder_state(net: StyleTransferNet, state: dict) -> None:
    """Copy a flat-sequential encoder state dict into the network's encoder."""
    with torch.no_grad():
        for idx in ENCODER_CONV_INDICES:
            block, local = _locate(idx)
            conv = getattr(net, f"enc_{block}")[local]
            for part in ("weight", "bias"):
                key = f"{idx}.{part}"
                if key not in state:
                    raise CheckpointError(f"donor weights are missing {key!r}")
                src = state[key]
                dst = getattr(conv, part)
                if tuple(src.shape) != tuple(dst.shape):
                    raise CheckpointError(
                        f"donor tensor {key!r} has shape {tuple(src.shape)}, "
                        f"encoder expects {tuple(dst.shape)}"
                    )
                dst.copy_(src.to(dst.dtype))


def sha256_of(path, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(os.fspath(path), "rb") as f:
        while chunk := f.read(chunk_size):
            digest.update(chunk)
    return digest.hexdigest()


def download_verified(url: str, sha256: str, dest) -> None:
    """Download url to dest, failing (and removing dest) on digest mismatch."""
    dest = os.fspath(dest)
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(dest) or ".")
    os.close(tmp_fd)
    try:
        with urllib.request.urlopen(url) as resp, open(tmp_path, "wb") as out:
            while chunk := resp.read(1 << 20):
                out.write(chunk)
        actual = sha256_of(tmp_path)
        if actual != sha256.lower():
            raise CheckpointError(
                f"downloaded file hash {actual} does not match expected {sha256.lower()}"
            )
        os.replace(tmp_path, dest)
    finally:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)


def convert_encoder_file(weights_path, profile: str = "vgg19", seed: int = 0) -> StyleTransferNet:
    """Build a network around a donor encoder file.

    Transfer modules are seeded randomly; train them before expecting
    useful stylization.
    """
    try:
        state = torch.load(os.fspath(weights_path), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read donor weights '{weights_path}': {e}") from e
    net = StyleTransferNet(profile, seed=seed)
    ingest_encoder_state(net, state)
    return net
