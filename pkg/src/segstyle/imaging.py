"""Image and mask data model, file I/O, and size preprocessing.

Conventions:
  - Images are float32 arrays of shape (H, W, 3) with values in [0, 1].
    Alpha is never kept past loading: 4-channel sources are composited
    over black and dropped to 3 channels.
  - Masks are boolean arrays of shape (H, W) matching the image they index.
  - All public types are immutable values; operations are pure functions
    returning new values, so everything here is safe to share across workers.
  - Dimension tuples are (width, height); array shapes are (height, width).

The style network only accepts sides that are powers of two, so
``to_power_of_two`` pairs every forward resize with an ``InverseTransform``
that maps the result back to the original geometry.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import ContractError, ImageFormatError, ManifestError

RESIZE_MODES = ("scale-to-pow2", "pad-to-pow2")
INTERPOLATIONS = ("bilinear", "nearest")


@dataclass(frozen=True, eq=False)
class Image:
    """A 3-channel raster with float values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        pix = np.array(self.pixels, dtype=np.float32, copy=True)
        if pix.ndim != 3 or pix.shape[2] != 3:
            raise ContractError(f"image must have shape (H, W, 3), got {pix.shape}")
        if pix.shape[0] < 1 or pix.shape[1] < 1:
            raise ContractError("image must be at least 1x1")
        if not np.isfinite(pix).all():
            raise ContractError("image contains non-finite values")
        if pix.min() < 0.0 or pix.max() > 1.0:
            raise ContractError("image values must lie in [0, 1]")
        pix.setflags(write=False)
        object.__setattr__(self, "pixels", pix)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        """(width, height)."""
        return (self.width, self.height)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A boolean per-pixel mask with the same geometry as the image it indexes."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, copy=True)
        if bits.ndim != 2:
            raise ContractError(f"mask must have shape (H, W), got {bits.shape}")
        if bits.dtype != np.bool_:
            if not np.isin(bits, (0, 1)).all():
                raise ContractError("mask elements must be exactly 0 or 1")
            bits = bits.astype(bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def area(self) -> int:
        """Number of set pixels."""
        return int(self.bits.sum())

    def same_dims(self, other) -> bool:
        return self.bits.shape == (other.height, other.width)


@dataclass(frozen=True)
class ResizePolicy:
    """How images are brought to power-of-two sides before the network."""

    mode: str = "scale-to-pow2"
    max_side: int = 512
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.mode not in RESIZE_MODES:
            raise ContractError(f"mode must be one of {RESIZE_MODES}, got {self.mode!r}")
        if self.interpolation not in INTERPOLATIONS:
            raise ContractError(
                f"interpolation must be one of {INTERPOLATIONS}, got {self.interpolation!r}"
            )
        if not is_pow2(self.max_side) or not 64 <= self.max_side <= 2048:
            raise ContractError("max_side must be a power of two in [64, 2048]")


@dataclass(frozen=True)
class InverseTransform:
    """Undo record for ``to_power_of_two``.

    ``crop`` is (x_off, y_off, width, height) of the meaningful interior for
    pad mode, None when nothing was padded. Scale-mode inverses resize back
    to ``original_dims``; pad-mode crops are exact.
    """

    forward_dims: tuple[int, int]
    original_dims: tuple[int, int]
    crop: tuple[int, int, int, int] | None = None
    interpolation: str = "bilinear"

    @property
    def is_identity(self) -> bool:
        return self.crop is None and self.forward_dims == self.original_dims


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def nearest_pow2(n: int, cap: int = 2048) -> int:
    """Closest power of two to n, ties broken downward, clamped to cap."""
    if n < 1:
        raise ContractError("side must be >= 1")
    lo = 1 << (n.bit_length() - 1)
    if lo == n:
        p = n
    else:
        hi = lo << 1
        p = lo if (n - lo) <= (hi - n) else hi
    return min(p, cap)


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    if n < 1:
        raise ContractError("side must be >= 1")
    return 1 << (n - 1).bit_length()


def _resize_pixels(pixels: np.ndarray, size: tuple[int, int], interpolation: str) -> np.ndarray:
    """Resize an (H, W, 3) raster to (width, height) = size."""
    w, h = size
    t = torch.from_numpy(pixels.transpose(2, 0, 1).copy()).unsqueeze(0)
    if interpolation == "nearest":
        out = F.interpolate(t, size=(h, w), mode="nearest-exact")
    else:
        # antialias only matters (and is only supported) when shrinking
        shrink = h < t.shape[2] or w < t.shape[3]
        out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False, antialias=shrink)
    arr = out.squeeze(0).clamp_(0.0, 1.0).permute(1, 2, 0).contiguous().numpy()
    return arr


def resize_image(img: Image, size: tuple[int, int], interpolation: str = "bilinear") -> Image:
    """Resize to (width, height); returns the input unchanged if already there."""
    if img.dims == tuple(size):
        return img
    return Image(_resize_pixels(img.pixels, tuple(size), interpolation))


def load_image(path) -> Image:
    """Load a PNG or JPEG file as a 3-channel [0, 1] image.

    Sources with an alpha channel are composited over black (pixel * alpha)
    before the alpha plane is dropped. Grayscale and palette images are
    expanded to RGB.
    """
    path = os.fspath(path)
    try:
        with PILImage.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ImageFormatError(
                    f"unsupported image format {im.format!r} in '{path}': expected PNG or JPEG"
                )
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N", "F"):
                raise ImageFormatError(
                    f"unsupported pixel depth {im.mode!r} in '{path}': only 8-bit images are handled"
                )
            has_alpha = im.mode in ("RGBA", "LA", "PA") or (
                im.mode == "P" and "transparency" in im.info
            )
            if has_alpha:
                arr = np.asarray(im.convert("RGBA"), dtype=np.float32) / 255.0
                pixels = arr[..., :3] * arr[..., 3:4]
            else:
                pixels = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"cannot decode '{path}': {e}") from e
    return Image(pixels)


def save_image(img: Image, path) -> None:
    """Write an image as 8-bit PNG or JPEG (decided by the file extension)."""
    arr = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(os.fspath(path))


def to_power_of_two(img: Image, policy: ResizePolicy) -> tuple[Image, InverseTransform]:
    """Bring both sides to powers of two <= policy.max_side.

    scale-to-pow2 resizes each side to its nearest power of two (ties
    rounded down). pad-to-pow2 first scales down if a side exceeds
    max_side, then pads up to the next power of two with black, keeping
    the content centered.
    """
    w, h = img.dims
    if policy.mode == "scale-to-pow2":
        tw = nearest_pow2(w, policy.max_side)
        th = nearest_pow2(h, policy.max_side)
        inv = InverseTransform((tw, th), (w, h), None, policy.interpolation)
        return resize_image(img, (tw, th), policy.interpolation), inv

    scale = min(1.0, policy.max_side / max(w, h))
    sw = max(1, round(w * scale))
    sh = max(1, round(h * scale))
    scaled = resize_image(img, (sw, sh), policy.interpolation)
    tw, th = next_pow2(sw), next_pow2(sh)
    if (tw, th) == (sw, sh):
        inv = InverseTransform((tw, th), (w, h), None, policy.interpolation)
        return scaled, inv
    x_off = (tw - sw) // 2
    y_off = (th - sh) // 2
    canvas = np.zeros((th, tw, 3), dtype=np.float32)
    canvas[y_off : y_off + sh, x_off : x_off + sw] = scaled.pixels
    inv = InverseTransform((tw, th), (w, h), (x_off, y_off, sw, sh), policy.interpolation)
    return Image(canvas), inv


def apply_inverse(img: Image, t: InverseTransform) -> Image:
    """Map an image shaped like the forward output back to the original dims."""
    if img.dims != t.forward_dims:
        raise ContractError(
            f"image dims {img.dims} do not match the transform's forward dims {t.forward_dims}"
        )
    out = img
    if t.crop is not None:
        x, y, cw, ch = t.crop
        out = Image(out.pixels[y : y + ch, x : x + cw])
    if out.dims != t.original_dims:
        out = resize_image(out, t.original_dims, t.interpolation)
    return out


def mask_apply(img: Image, m: BinaryMask) -> Image:
    """Keep pixels where the mask is set, black out the rest."""
    if not m.same_dims(img):
        raise ContractError(f"mask dims {m.dims} do not match image dims {img.dims}")
    return Image(np.where(m.bits[..., None], img.pixels, np.float32(0.0)))


def mask_union(masks: Sequence[BinaryMask], dims: tuple[int, int] | None = None) -> BinaryMask:
    """Elementwise OR of masks; an empty list yields all-zeros (dims required)."""
    if not masks:
        if dims is None:
            raise ContractError("mask_union of an empty list needs explicit dims")
        w, h = dims
        return BinaryMask(np.zeros((h, w), dtype=bool))
    first = masks[0]
    acc = first.bits.copy()
    for m in masks[1:]:
        if m.dims != first.dims:
            raise ContractError(f"mask dims {m.dims} do not match {first.dims}")
        acc |= m.bits
    if dims is not None and first.dims != tuple(dims):
        raise ContractError(f"masks have dims {first.dims}, expected {tuple(dims)}")
    return BinaryMask(acc)


def mask_complement(m: BinaryMask) -> BinaryMask:
    return BinaryMask(~m.bits)


def mask_to_rle(m: BinaryMask) -> dict[str, Any]:
    """Run-length encode: column-major scan, alternating runs starting with 0."""
    flat = m.bits.ravel(order="F").astype(np.int8)
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0] == 1:
        counts = [0] + counts
    return {"size": [m.height, m.width], "counts": counts}


def rle_to_mask(rle: dict[str, Any], field: str = "rle") -> BinaryMask:
    """Decode the {"size": [h, w], "counts": [...]} encoding back into a mask."""
    if not isinstance(rle, dict):
        raise ManifestError(f"{field}: expected an object, got {type(rle).__name__}")
    size = rle.get("size")
    counts = rle.get("counts")
    if not (isinstance(size, (list, tuple)) and len(size) == 2):
        raise ManifestError(f"{field}.size: expected [height, width]")
    h, w = size
    if not (isinstance(h, int) and isinstance(w, int) and h >= 1 and w >= 1):
        raise ManifestError(f"{field}.size: sides must be positive integers")
    if not isinstance(counts, (list, tuple)) or not all(
        isinstance(c, int) and c >= 0 for c in counts
    ):
        raise ManifestError(f"{field}.counts: expected a list of nonnegative integers")
    if sum(counts) != h * w:
        raise ManifestError(f"{field}.counts: runs sum to {sum(counts)}, expected {h * w}")
    values = np.arange(len(counts), dtype=np.int64) % 2
    flat = np.repeat(values, counts).astype(bool)
    return BinaryMask(flat.reshape((h, w), order="F"))


def save_mask_png(m: BinaryMask, path) -> None:
    """Write a mask as a 1-channel PNG with values 0 / 255."""
    arr = (m.bits.astype(np.uint8)) * 255
    PILImage.fromarray(arr, mode="L").save(os.fspath(path))


def load_mask_png(path) -> BinaryMask:
    """Read a 1-channel mask PNG; anything above half intensity counts as set."""
    with PILImage.open(os.fspath(path)) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask(arr > 127)
