"""The style transfer network: frozen encoder, soft-attention blocks, decoder.

The encoder is the 19-layer classification convnet feature stack (reflection
padded, ceil-mode pooled) tapped at relu1_1..relu5_1. Attention runs at
relu4_1 and relu5_1: style features are rearranged to the content layout by a
content-to-style soft attention map, merged across the two layers, and decoded
back to an image by a decoder that mirrors the encoder up to relu4_1.

Two architecture profiles share the topology: "vgg19" at full width for real
checkpoints, and "tiny" (4 channels everywhere) so the whole stack runs in
tests without any pretrained download.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .imaging import Image, is_pow2

# smallest side the network accepts: relu5_1 must stay at least 1x1 and half
# the relu4_1 size, which needs 2^4 input pixels per side
MIN_SIDE = 16

ENCODER_LAYERS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
ATTENTION_LAYERS = ("relu4_1", "relu5_1")

# flat index ranges of the encoder sequential for each tapped activation
ENCODER_SLICES = ((0, 4), (4, 11), (11, 18), (18, 31), (31, 44))


@dataclass(frozen=True)
class ArchitectureProfile:
    """Channel widths of the five encoder blocks (relu1_1..relu5_1)."""

    name: str
    widths: tuple[int, int, int, int, int]

    def __post_init__(self):
        if len(self.widths) != 5 or any(w < 1 for w in self.widths):
            raise ContractError("profile needs five positive block widths")
        if self.widths[3] != self.widths[4]:
            raise ContractError("relu4_1 and relu5_1 widths must match (their outputs are summed)")

    @property
    def attention_channels(self) -> int:
        return self.widths[3]

    def layer_width(self, layer: str) -> int:
        return self.widths[ENCODER_LAYERS.index(layer)]


PROFILES = {
    "vgg19": ArchitectureProfile("vgg19", (64, 128, 256, 512, 512)),
    "tiny": ArchitectureProfile("tiny", (4, 4, 4, 4, 4)),
}


def resolve_profile(profile) -> ArchitectureProfile:
    if isinstance(profile, ArchitectureProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ContractError(f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Activations of one encoder layer, shaped (channels, height, width)."""

    activations: torch.Tensor
    layer: str

    def __post_init__(self):
        if self.layer not in ATTENTION_LAYERS:
            raise ContractError(f"layer must be one of {ATTENTION_LAYERS}, got {self.layer!r}")
        if self.activations.dim() != 3:
            raise ContractError(f"activations must be 3D (C, H, W), got {tuple(self.activations.shape)}")
        if not torch.isfinite(self.activations).all():
            raise ContractError("activations contain non-finite values")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(channels, height, width)."""
        return tuple(self.activations.shape)


def calc_mean_std(feat: torch.Tensor, eps: float = 1e-5):
    """Per-sample, per-channel spatial mean and std of a (N, C, H, W) tensor.

    Uses the biased variance so 1x1 feature maps stay finite.
    """
    n, c = feat.shape[:2]
    flat = feat.reshape(n, c, -1)
    mean = flat.mean(dim=2).view(n, c, 1, 1)
    std = (flat.var(dim=2, unbiased=False) + eps).sqrt().view(n, c, 1, 1)
    return mean, std


def mean_variance_norm(feat: torch.Tensor) -> torch.Tensor:
    mean, std = calc_mean_std(feat)
    return (feat - mean) / std


def to_tensor(img: Image) -> torch.Tensor:
    """Image -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(img.pixels.transpose(2, 0, 1).copy()).unsqueeze(0)


def image_from_tensor(t: torch.Tensor) -> Image:
    """(1, 3, H, W) or (3, H, W) tensor -> Image, clamped to [0, 1]."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ContractError("expected a single image tensor")
        t = t[0]
    arr = t.detach().clamp(0.0, 1.0).permute(1, 2, 0).to(torch.float32).cpu().numpy()
    return Image(arr)


class EdgePad2d(nn.Module):
    """Reflection padding, degrading to replication when a side is too small.

    Reflection needs a neighbor to mirror, so 1x1 maps (the deepest layer at
    the minimum input size) pad by repeating their single value instead.
    """

    def __init__(self, pad: int = 1):
        super().__init__()
        self.pad = pad

    def forward(self, x):
        mode = "reflect" if min(x.shape[2], x.shape[3]) > self.pad else "replicate"
        return F.pad(x, (self.pad,) * 4, mode=mode)

    def extra_repr(self):
        return str(self.pad)


def _conv_block(in_ch: int, out_ch: int):
    return [EdgePad2d(1), nn.Conv2d(in_ch, out_ch, 3), nn.ReLU()]


def build_encoder(widths) -> nn.Sequential:
    """The full feature stack through relu5_1 as one flat sequential."""
    c1, c2, c3, c4, c5 = widths
    pool = lambda: nn.MaxPool2d(2, 2, ceil_mode=True)
    layers = [nn.Conv2d(3, 3, 1)]
    layers += _conv_block(3, c1)  # relu1_1 @ 3
    layers += _conv_block(c1, c1)
    layers += [pool()] + _conv_block(c1, c2)  # relu2_1 @ 10
    layers += _conv_block(c2, c2)
    layers += [pool()] + _conv_block(c2, c3)  # relu3_1 @ 17
    layers += _conv_block(c3, c3) + _conv_block(c3, c3) + _conv_block(c3, c3)
    layers += [pool()] + _conv_block(c3, c4)  # relu4_1 @ 30
    layers += _conv_block(c4, c4) + _conv_block(c4, c4) + _conv_block(c4, c4)
    layers += [pool()] + _conv_block(c4, c5)  # relu5_1 @ 43
    return nn.Sequential(*layers)


def build_decoder(widths) -> nn.Sequential:
    """Mirror of the encoder from relu4_1 back to the image."""
    c1, c2, c3, c4, _ = widths
    up = lambda: nn.Upsample(scale_factor=2, mode="nearest")
    layers = _conv_block(c4, c3) + [up()]
    layers += _conv_block(c3, c3) + _conv_block(c3, c3) + _conv_block(c3, c3)
    layers += _conv_block(c3, c2) + [up()]
    layers += _conv_block(c2, c2)
    layers += _conv_block(c2, c1) + [up()]
    layers += _conv_block(c1, c1)
    layers += [EdgePad2d(1), nn.Conv2d(c1, 3, 3)]
    return nn.Sequential(*layers)


class StyleAttention(nn.Module):
    """Soft attention that rearranges style features onto the content layout.

    Queries come from the normalized content map, keys from the normalized
    style map (both through 1x1 convs to a reduced channel count); values are
    a 1x1 projection of the raw style map. The attended result is projected
    back and added to the content features as a residual.
    """

    def __init__(self, channels: int, reduced: int | None = None):
        super().__init__()
        if reduced is None:
            reduced = max(channels // 8, 1)
        self.f = nn.Conv2d(channels, reduced, 1)
        self.g = nn.Conv2d(channels, reduced, 1)
        self.h = nn.Conv2d(channels, channels, 1)
        self.out = nn.Conv2d(channels, channels, 1)

    def attention_map(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """(N, Nc, Ns) attention; each row is a distribution over style positions."""
        q = self.f(mean_variance_norm(content)).flatten(2)  # N, R, Nc
        k = self.g(mean_variance_norm(style)).flatten(2)  # N, R, Ns
        logits = torch.bmm(q.transpose(1, 2), k)
        return torch.softmax(logits, dim=-1)

    def forward(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if content.shape[1] != style.shape[1]:
            raise ContractError(
                f"content has {content.shape[1]} channels, style has {style.shape[1]}"
            )
        a = self.attention_map(content, style)
        v = self.h(style).flatten(2)  # N, C, Ns
        o = torch.bmm(v, a.transpose(1, 2))  # N, C, Nc
        o = o.view(content.shape[0], content.shape[1], content.shape[2], content.shape[3])
        return self.out(o) + content


class StyleTransferNet(nn.Module):
    """Encoder + two attention blocks + merge + decoder.

    The encoder is frozen; only attention, merge, and decoder parameters
    train. Weights are immutable during inference, so any number of
    concurrent stylize calls may share one instance.
    """

    def __init__(self, profile="tiny", seed: int | None = None):
        super().__init__()
        self.profile = resolve_profile(profile)
        encoder = build_encoder(self.profile.widths)
        for k, (start, stop) in enumerate(ENCODER_SLICES):
            self.add_module(f"enc_{k + 1}", encoder[start:stop])
        c = self.profile.attention_channels
        self.san4 = StyleAttention(c)
        self.san5 = StyleAttention(c)
        self.merge_pad = EdgePad2d(1)
        self.merge_conv = nn.Conv2d(c, c, 3)
        self.decoder = build_decoder(self.profile.widths)
        if seed is not None:
            self.reset_parameters(seed)
        else:
            self._init_untrained()
        for p in self.encoder_parameters():
            p.requires_grad_(False)

    def encoder_modules(self):
        return [getattr(self, f"enc_{k}") for k in range(1, 6)]

    def encoder_parameters(self):
        for m in self.encoder_modules():
            yield from m.parameters()

    def _init_untrained(self):
        # Fresh (non-pretrained) encoders get noisy passthrough filters: a
        # pure random 4-channel stack flattens feature maps to near-constants
        # by relu4_1, leaving nothing for the decoder to reconstruct from.
        # Pretrained ingestion overwrites this entirely.
        for m in self.encoder_modules():
            for conv in m:
                if not isinstance(conv, nn.Conv2d):
                    continue
                out_c, in_c, kh, kw = conv.weight.shape
                fan_in = in_c * kh * kw
                with torch.no_grad():
                    conv.weight.normal_(0.0, 0.3 / fan_in**0.5)
                    for o in range(out_c):
                        conv.weight[o, o % in_c, kh // 2, kw // 2] += 1.0
                    conv.bias.zero_()
        # start decoder output mid-gray so the [0,1] clamp is inactive at init
        final = self.decoder[-1]
        with torch.no_grad():
            final.bias.fill_(0.5)

    def reset_parameters(self, seed: int):
        """Deterministically reinitialize every conv from the given seed."""
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    m.reset_parameters()
            self._init_untrained()

    def encode_pyramid(self, x: torch.Tensor) -> list[torch.Tensor]:
        """relu1_1..relu5_1 activations for a (N, 3, H, W) batch."""
        feats = []
        for m in self.encoder_modules():
            x = m(x)
            feats.append(x)
        return feats

    def transform(self, c4, s4, c5, s5) -> torch.Tensor:
        """Attend at both layers and merge to a single relu4_1-shaped map."""
        o4 = self.san4(c4, s4)
        o5 = self.san5(c5, s5)
        o5 = F.interpolate(o5, scale_factor=2, mode="nearest")
        if o5.shape[2:] != o4.shape[2:]:
            raise ContractError(
                f"upsampled relu5_1 map {tuple(o5.shape[2:])} does not match "
                f"relu4_1 map {tuple(o4.shape[2:])}"
            )
        return self.merge_conv(self.merge_pad(o4 + o5))

    def stylize_tensor(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """Full forward pass; output clamped to [0, 1]."""
        cf = self.encode_pyramid(content)
        sf = self.encode_pyramid(style)
        merged = self.transform(cf[3], sf[3], cf[4], sf[4])
        return self.decoder(merged).clamp(0.0, 1.0)


def _require_net_input(img: Image):
    w, h = img.dims
    if not (is_pow2(w) and is_pow2(h)) or min(w, h) < MIN_SIDE:
        raise ContractError(
            f"network input sides must be powers of two >= {MIN_SIDE}, got {w}x{h}; "
            "preprocess with to_power_of_two first"
        )


def encode(img: Image, net: StyleTransferNet) -> dict[str, FeatureMap]:
    """Encoder features at relu4_1 (input/8) and relu5_1 (input/16)."""
    _require_net_input(img)
    with torch.no_grad():
        feats = net.encode_pyramid(to_tensor(img))
    out = {}
    for layer, idx in (("relu4_1", 3), ("relu5_1", 4)):
        fm = FeatureMap(feats[idx][0], layer)
        expected = net.profile.layer_width(layer)
        if fm.dims[0] != expected:
            raise ContractError(f"{layer} has {fm.dims[0]} channels, profile expects {expected}")
        out[layer] = fm
    return out


def attention_rearrange(fc: FeatureMap, fs: FeatureMap, block: StyleAttention) -> FeatureMap:
    """Rearrange style features to the content layout (residual on content)."""
    if fc.layer != fs.layer:
        raise ContractError(f"feature maps come from different layers: {fc.layer} vs {fs.layer}")
    if fc.dims[0] != fs.dims[0]:
        raise ContractError(f"channel mismatch: {fc.dims[0]} vs {fs.dims[0]}")
    with torch.no_grad():
        out = block(fc.activations.unsqueeze(0), fs.activations.unsqueeze(0))
    return FeatureMap(out[0], fc.layer)


def merge_and_decode(out4: FeatureMap, out5: FeatureMap, net: StyleTransferNet) -> Image:
    """Merge the two attended maps and decode to an image (8x the relu4_1 dims)."""
    c4, h4, w4 = out4.dims
    c5, h5, w5 = out5.dims
    if (h5 * 2, w5 * 2) != (h4, w4):
        raise ContractError(
            f"relu5_1 map {h5}x{w5} must be half the relu4_1 map {h4}x{w4}"
        )
    with torch.no_grad():
        o5 = F.interpolate(out5.activations.unsqueeze(0), scale_factor=2, mode="nearest")
        merged = net.merge_conv(net.merge_pad(out4.activations.unsqueeze(0) + o5))
        img = net.decoder(merged).clamp(0.0, 1.0)
    return image_from_tensor(img)


def stylize(content: Image, style: Image, net: StyleTransferNet) -> Image:
    """Transfer the style image's appearance onto the content image.

    Both inputs must already have power-of-two sides; the output has the
    content's dimensions. Deterministic for fixed weights and inputs.
    """
    _require_net_input(content)
    _require_net_input(style)
    net.eval()
    with torch.no_grad():
        out = net.stylize_tensor(to_tensor(content), to_tensor(style))
    return image_from_tensor(out)
