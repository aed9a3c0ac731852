"""Per-object instance masks: detection backends, overlap resolution, manifests.

A segmentation result is always a strict partition of the image: instance
masks are pairwise disjoint and the background is the complement of their
union. Everything downstream (piece extraction, paste-back) relies on that.

Two mask sources are shipped:
  - ``MaskRCNNBackend``: a client for a pretrained instance-segmentation
    model (torchvision Mask R-CNN trained on COCO). Heavy, optional,
    needs cached model weights.
  - manifests: JSON files with run-length encoded masks, for reproducible
    and offline runs (``load_manifest`` / ``save_manifest``,
    or ``PrecomputedManifestBackend`` to plug into ``detect_instances``).
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .errors import BackendError, ContractError, ManifestError
from .imaging import (
    BinaryMask,
    Image,
    mask_apply,
    mask_complement,
    mask_to_rle,
    mask_union,
    rle_to_mask,
)

PASTE_ORDERS = ("area-desc", "explicit")
DEFAULT_MIN_MASK_PIXELS = 16


class ManifestWarning(UserWarning):
    """Non-fatal manifest issues (overlapping masks, stale bounding boxes)."""


def tight_bbox(bits: np.ndarray) -> tuple[int, int, int, int]:
    """(x0, y0, x1, y1) half-open box around the set pixels."""
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    if rows.size == 0:
        raise ContractError("mask has no set pixels")
    return (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


@dataclass(eq=False)
class InstanceMask:
    """One detected object: mask, class label, confidence, bounding box.

    The bbox is always the tight half-open box of the mask's set pixels;
    pass bbox=None to have it computed.
    """

    mask: BinaryMask
    label: str
    score: float
    bbox: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ContractError(f"score must be in [0, 1], got {self.score}")
        computed = tight_bbox(self.mask.bits)
        if self.bbox is None:
            self.bbox = computed
        elif tuple(self.bbox) != computed:
            raise ContractError(f"bbox {tuple(self.bbox)} is not the tight box {computed}")
        else:
            self.bbox = computed

    @property
    def area(self) -> int:
        return self.mask.area

    def __eq__(self, other):
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return (
            self.label == other.label
            and self.score == other.score
            and self.bbox == other.bbox
            and np.array_equal(self.mask.bits, other.mask.bits)
        )


@dataclass(eq=False)
class SegmentationResult:
    """Disjoint instance masks plus the derived background for one image."""

    instances: list[InstanceMask]
    background: BinaryMask
    source_dims: tuple[int, int]

    def __post_init__(self):
        self.source_dims = tuple(self.source_dims)
        w, h = self.source_dims
        for i, inst in enumerate(self.instances):
            if inst.mask.dims != (w, h):
                raise ContractError(
                    f"instance {i} mask dims {inst.mask.dims} != source dims {(w, h)}"
                )
        if self.background.dims != (w, h):
            raise ContractError("background dims do not match source_dims")
        union = mask_union([i.mask for i in self.instances], dims=self.source_dims)
        if sum(i.area for i in self.instances) != union.area:
            raise ContractError("instance masks overlap; resolve overlaps first")
        if not np.array_equal(self.background.bits, ~union.bits):
            raise ContractError("background is not the complement of the instance union")

    @classmethod
    def from_instances(
        cls, instances: Sequence[InstanceMask], source_dims: tuple[int, int]
    ) -> "SegmentationResult":
        union = mask_union([i.mask for i in instances], dims=tuple(source_dims))
        return cls(list(instances), mask_complement(union), tuple(source_dims))

    def __eq__(self, other):
        if not isinstance(other, SegmentationResult):
            return NotImplemented
        return (
            self.source_dims == other.source_dims
            and self.instances == other.instances
            and np.array_equal(self.background.bits, other.background.bits)
        )


class RawInstance(NamedTuple):
    """What a backend emits per detection, before any post-processing."""

    label: str
    score: float
    mask: np.ndarray


class SegmentationBackend(Protocol):
    def detect(self, img: Image) -> list[RawInstance]: ...


def resolve_overlaps(instances: Sequence[InstanceMask]) -> list[InstanceMask]:
    """Make masks pairwise disjoint.

    Contested pixels go to the instance with the higher score; ties are
    broken by larger (original) mask area, then by input order. Instances
    left with an empty mask are dropped. Input order is preserved.
    """
    n = len(instances)
    if n == 0:
        return []
    dims = instances[0].mask.dims
    for inst in instances[1:]:
        if inst.mask.dims != dims:
            raise ContractError("instance masks must share dimensions")
    priority = sorted(range(n), key=lambda i: (-instances[i].score, -instances[i].area, i))
    claimed = np.zeros(instances[0].mask.bits.shape, dtype=bool)
    kept_bits: dict[int, np.ndarray] = {}
    for i in priority:
        keep = instances[i].mask.bits & ~claimed
        claimed |= keep
        kept_bits[i] = keep
    out = []
    for i, inst in enumerate(instances):
        bits = kept_bits[i]
        if not bits.any():
            continue
        if np.array_equal(bits, inst.mask.bits):
            out.append(inst)
        else:
            out.append(InstanceMask(BinaryMask(bits), inst.label, inst.score))
    return out


def order_by_area(instances: Sequence[InstanceMask]) -> list[InstanceMask]:
    """Descending mask area; bigger objects paste first, small ones stay on top."""
    return sorted(instances, key=lambda inst: -inst.area)


def detect_instances(
    img: Image,
    score_threshold: float = 0.5,
    *,
    backend: SegmentationBackend,
    min_mask_pixels: int = DEFAULT_MIN_MASK_PIXELS,
) -> SegmentationResult:
    """Run a backend over the image and normalize its output.

    Detections below the threshold are discarded, overlaps resolved,
    slivers below min_mask_pixels dropped, and the survivors ordered by
    descending area. Zero detections are a valid result with an all-ones
    background.
    """
    if not 0.0 <= score_threshold <= 1.0:
        raise ContractError(f"score_threshold must be in [0, 1], got {score_threshold}")
    raw = backend.detect(img)
    candidates = []
    for k, det in enumerate(raw):
        bits = np.asarray(det.mask).astype(bool)
        if bits.shape != (img.height, img.width):
            raise BackendError(
                f"backend mask {k} has shape {bits.shape}, expected {(img.height, img.width)}"
            )
        if det.score < score_threshold or not bits.any():
            continue
        candidates.append(InstanceMask(BinaryMask(bits), str(det.label), float(det.score)))
    resolved = [
        inst for inst in resolve_overlaps(candidates) if inst.area >= min_mask_pixels
    ]
    return SegmentationResult.from_instances(order_by_area(resolved), img.dims)


def extract_pieces(img: Image, seg: SegmentationResult) -> tuple[Image, list[Image]]:
    """Cut the image into its background piece and one full-frame piece per instance.

    Every piece keeps the object at its original position on a black canvas,
    so the pieces of a resolved result sum back to the original image.
    """
    if seg.source_dims != img.dims:
        raise ContractError(f"segmentation dims {seg.source_dims} != image dims {img.dims}")
    background_piece = mask_apply(img, seg.background)
    instance_pieces = [mask_apply(img, inst.mask) for inst in seg.instances]
    return background_piece, instance_pieces


def manifest_dict(seg: SegmentationResult, order: str = "explicit") -> dict:
    """The manifest JSON document for a segmentation result."""
    if order not in PASTE_ORDERS:
        raise ContractError(f"order must be one of {PASTE_ORDERS}")
    return {
        "source_dims": list(seg.source_dims),
        "order": order,
        "instances": [
            {
                "label": inst.label,
                "score": inst.score,
                "bbox": list(inst.bbox),
                "rle": mask_to_rle(inst.mask),
            }
            for inst in seg.instances
        ],
    }


def save_manifest(seg: SegmentationResult, path, order: str = "explicit") -> None:
    """Write a segmentation result as the documented JSON manifest."""
    with open(os.fspath(path), "w", encoding="utf-8") as f:
        json.dump(manifest_dict(seg, order), f, indent=1)


def _manifest_instance(entry, i: int, source_dims: tuple[int, int]) -> InstanceMask:
    where = f"instances[{i}]"
    if not isinstance(entry, dict):
        raise ManifestError(f"{where}: expected an object")
    label = entry.get("label")
    if not isinstance(label, str):
        raise ManifestError(f"{where}.label: expected a string")
    score = entry.get("score")
    if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0 <= score <= 1:
        raise ManifestError(f"{where}.score: expected a number in [0, 1]")
    if "rle" not in entry:
        raise ManifestError(f"{where}.rle: missing")
    mask = rle_to_mask(entry["rle"], field=f"{where}.rle")
    if mask.dims != source_dims:
        raise ManifestError(
            f"{where}.rle: mask dims {mask.dims} do not match source_dims {source_dims}"
        )
    if mask.area == 0:
        raise ManifestError(f"{where}.rle: mask has no set pixels")
    inst = InstanceMask(mask, label, float(score))
    stored_bbox = entry.get("bbox")
    if stored_bbox is not None and tuple(stored_bbox) != inst.bbox:
        warnings.warn(
            f"{where}.bbox {stored_bbox} is not the tight box {list(inst.bbox)}; recomputed",
            ManifestWarning,
            stacklevel=3,
        )
    return inst


def load_manifest(path) -> SegmentationResult:
    """Load a manifest, resolving any mask overlaps (with a warning).

    A manifest saved from a resolved result loads back identically:
    masks, labels, scores, and order are preserved.
    """
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ManifestError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ManifestError("top level: expected an object")
    dims = doc.get("source_dims")
    if (
        not isinstance(dims, (list, tuple))
        or len(dims) != 2
        or not all(isinstance(v, int) and v >= 1 for v in dims)
    ):
        raise ManifestError("source_dims: expected [width, height] of positive integers")
    source_dims = (dims[0], dims[1])
    order = doc.get("order", "explicit")
    if order not in PASTE_ORDERS:
        raise ManifestError(f"order: expected one of {PASTE_ORDERS}, got {order!r}")
    entries = doc.get("instances")
    if not isinstance(entries, list):
        raise ManifestError("instances: expected a list")
    instances = [_manifest_instance(e, i, source_dims) for i, e in enumerate(entries)]
    if sum(i.area for i in instances) != mask_union(
        [i.mask for i in instances], dims=source_dims
    ).area:
        warnings.warn(
            f"{path}: instance masks overlap; contested pixels were reassigned",
            ManifestWarning,
            stacklevel=2,
        )
        instances = resolve_overlaps(instances)
    if order == "area-desc":
        instances = order_by_area(instances)
    return SegmentationResult.from_instances(instances, source_dims)


class PrecomputedManifestBackend:
    """Backend adapter serving detections from a manifest file."""

    def __init__(self, path):
        self.path = os.fspath(path)

    def detect(self, img: Image) -> list[RawInstance]:
        seg = load_manifest(self.path)
        if seg.source_dims != img.dims:
            raise BackendError(
                f"manifest {self.path} was built for dims {seg.source_dims}, "
                f"image has {img.dims}"
            )
        return [RawInstance(i.label, i.score, i.mask.bits) for i in seg.instances]


class MaskRCNNBackend:
    """Client for the pretrained torchvision Mask R-CNN instance segmenter.

    The model is loaded lazily on first use. Loading needs the pretrained
    weights in the local torchvision cache (one-time download); without
    them detection fails with a BackendError suggesting the manifest route.
    """

    def __init__(self, mask_threshold: float = 0.5, device: str = "cpu"):
        self.mask_threshold = mask_threshold
        self.device = device
        self._model = None
        self._categories = None

    def _ensure_model(self):
        if self._model is not None:
            return
        try:
            from torchvision.models.detection import (
                MaskRCNN_ResNet50_FPN_Weights,
                maskrcnn_resnet50_fpn,
            )

            weights = MaskRCNN_ResNet50_FPN_Weights.DEFAULT
            model = maskrcnn_resnet50_fpn(weights=weights)
        except Exception as e:
            raise BackendError(
                f"could not load the pretrained detection model ({e}); "
                "download the torchvision Mask R-CNN weights once with network "
                "access, or supply precomputed masks via a manifest"
            ) from e
        model.eval()
        model.to(self.device)
        self._model = model
        self._categories = list(weights.meta["categories"])

    def detect(self, img: Image) -> list[RawInstance]:
        import torch

        self._ensure_model()
        x = torch.from_numpy(img.pixels.transpose(2, 0, 1).copy()).to(self.device)
        with torch.no_grad():
            pred = self._model([x])[0]
        out = []
        for mask, label_id, score in zip(pred["masks"], pred["labels"], pred["scores"]):
            bits = (mask[0] > self.mask_threshold).cpu().numpy()
            name = self._categories[int(label_id)]
            out.append(RawInstance(name, float(score), bits))
        return out
