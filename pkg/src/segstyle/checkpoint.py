"""Versioned binary weight container.

Layout: an 8-byte magic, a little-endian uint32 header length, a JSON header
(format version, architecture profile, optional loss weights, tensor table),
then the raw float32 little-endian tensor data in table order. Tensors are
rejected on save and load if any value is non-finite.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np
import torch

from .errors import CheckpointError
from .losses import LossWeights
from .net import ArchitectureProfile, StyleTransferNet

MAGIC = b"SGSTYLEW"
FORMAT_VERSION = 1


def save_checkpoint(net: StyleTransferNet, path, loss_weights: LossWeights | None = None) -> None:
    state = net.state_dict()
    table = []
    blobs = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        if not np.isfinite(arr).all():
            raise CheckpointError(f"refusing to save non-finite tensor {name!r}")
        table.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "profile": {"name": net.profile.name, "widths": list(net.profile.widths)},
        "loss_weights": None
        if loss_weights is None
        else {
            "content": loss_weights.content,
            "style": loss_weights.style,
            "identity1": loss_weights.identity1,
            "identity2": loss_weights.identity2,
        },
        "tensors": table,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(os.fspath(path), "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def read_header(path) -> dict:
    """Parse and validate the JSON header without touching tensor data."""
    with open(os.fspath(path), "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"'{path}' is not a segstyle checkpoint (bad magic)")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise CheckpointError(f"'{path}' is truncated")
        (header_len,) = struct.unpack("<I", raw_len)
        header_bytes = f.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointError(f"'{path}' is truncated")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"'{path}' has a corrupt header: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"'{path}' has checkpoint format version {version}, "
            f"this build expects version {FORMAT_VERSION}"
        )
    return header


def load_checkpoint(path) -> StyleTransferNet:
    """Rebuild a network from a checkpoint file.

    The loss weights recorded at training time, if any, are attached as
    ``net.trained_loss_weights``.
    """
    path = os.fspath(path)
    header = read_header(path)
    try:
        profile = ArchitectureProfile(
            header["profile"]["name"], tuple(header["profile"]["widths"])
        )
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"'{path}' has an invalid profile entry: {e}") from e
    net = StyleTransferNet(profile)
    with open(path, "rb") as f:
        f.seek(len(MAGIC))
        (header_len,) = struct.unpack("<I", f.read(4))
        f.seek(len(MAGIC) + 4 + header_len)
        state = {}
        for entry in header.get("tensors", []):
            name, shape = entry["name"], tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            blob = f.read(count * 4)
            if len(blob) != count * 4:
                raise CheckpointError(f"'{path}' is truncated in tensor {name!r}")
            arr = np.frombuffer(blob, dtype="<f4").reshape(shape)
            if not np.isfinite(arr).all():
                raise CheckpointError(f"tensor {name!r} in '{path}' has non-finite values")
            state[name] = torch.from_numpy(arr.copy())
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"'{path}' does not match the declared architecture: {e}") from e
    lw = header.get("loss_weights")
    net.trained_loss_weights = None if lw is None else LossWeights(**lw)
    for p in net.encoder_parameters():
        p.requires_grad_(False)
    return net
