"""Coarse/fine generators and the four-scale discriminator ensemble.

Layer vocabulary (pix2pixHD naming):

    c7s1-k  7x7 conv, stride 1, BatchNorm, ReLU
    dk      3x3 conv, stride 2, BatchNorm, ReLU
    Rk      residual block, two 3x3 convs with k filters
    uk      3x3 transposed conv, stride 1/2, BatchNorm, ReLU
    Ck      4x4 conv, stride 2, BatchNorm, LeakyReLU(0.2)

``width_divisor`` shrinks every filter count (used for the miniature gradient
check configuration); it never changes the layer sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .labels import NUM_SEMANTIC_CODES, downsample_bilinear, downsample_labels_nearest, one_hot_torch

NUM_MODALITIES = 4
NUM_SCALES = 4
GEN_DIVISIBILITY = 32


def init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def c7s1(in_ch: int, out_ch: int, final: bool = False) -> nn.Sequential:
    # conv bias is redundant ahead of BatchNorm and would never see a gradient
    layers: list[nn.Module] = [nn.ReflectionPad2d(3), nn.Conv2d(in_ch, out_ch, 7, bias=final)]
    if final:
        layers.append(nn.Tanh())
    else:
        layers += [nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


def down(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


def up(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, 3, stride=2, padding=1, output_padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ReflectionPad(nn.Module):
    """Reflection padding that degrades to edge replication on maps too small to reflect.

    The coarse bottleneck of a 32x32 input is 1x1, where reflecting a single
    pixel is the pixel itself.
    """

    def __init__(self, pad: int):
        super().__init__()
        self.pad = pad

    def forward(self, x):
        mode = "reflect" if min(x.shape[-2:]) > self.pad else "replicate"
        return F.pad(x, (self.pad,) * 4, mode=mode)


class ResidualBlock(nn.Module):
    """Two 3x3 conv layers with an identity skip.

    When ``in_ch != out_ch`` the skip path becomes a 1x1 projection, which is
    how the 6-channel branch concatenation is lifted into the 64-channel
    fusion blocks.
    """

    def __init__(self, in_ch: int, out_ch: int | None = None):
        super().__init__()
        out_ch = out_ch or in_ch
        self.body = nn.Sequential(
            ReflectionPad(1),
            nn.Conv2d(in_ch, out_ch, 3, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            ReflectionPad(1),
            nn.Conv2d(out_ch, out_ch, 3, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        self.skip = nn.Identity() if in_ch == out_ch else nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        return self.skip(x) + self.body(x)


def _check_divisible(h: int, w: int, factor: int, what: str) -> None:
    if h % factor or w % factor:
        raise ValueError(f"{what}: spatial size {h}x{w} must be divisible by {factor}")


class CoarseGenerator(nn.Module):
    """c7s1-64, d128, d256, d512, d1024, R1024 x4, u512, u256, u128, u64, c7s1-4.

    Runs on the half-resolution conditioning map. ``forward`` returns the
    Tanh image and the 64-channel u64 activations used for fusion.

    The c7s1-4 image head sits outside the fused path, so nothing in the
    training objective reaches it; it is frozen and kept only so the coarse
    sketch can be rendered for inspection.
    """

    def __init__(self, in_ch: int = NUM_SEMANTIC_CODES, out_ch: int = NUM_MODALITIES, width_divisor: int = 1):
        super().__init__()
        k = lambda n: max(1, n // width_divisor)  # noqa: E731
        self.feature_ch = k(64)
        self.trunk = nn.Sequential(
            c7s1(in_ch, k(64)),
            down(k(64), k(128)),
            down(k(128), k(256)),
            down(k(256), k(512)),
            down(k(512), k(1024)),
            *[ResidualBlock(k(1024)) for _ in range(4)],
            up(k(1024), k(512)),
            up(k(512), k(256)),
            up(k(256), k(128)),
            up(k(128), k(64)),
        )
        self.head = c7s1(k(64), out_ch, final=True)
        self.apply(init_weights)
        self.head.requires_grad_(False)

    def forward(self, cond_half):
        _check_divisible(cond_half.shape[-2], cond_half.shape[-1], 16, "coarse generator input")
        features = self.trunk(cond_half)
        return self.head(features), features


class FineGenerator(nn.Module):
    """Boundary-aware fine generator.

    Trunk c7s1-32, d64, (+ coarse features), R64 x3, u32; then two heads,
    c7s1-4 (image branch, Tanh) and c7s1-2 (boundary branch, softmax), whose
    concatenation passes through R64, R64 and the final c7s1-4.
    """

    def __init__(self, in_ch: int = NUM_SEMANTIC_CODES, out_ch: int = NUM_MODALITIES, width_divisor: int = 1):
        super().__init__()
        k = lambda n: max(1, n // width_divisor)  # noqa: E731
        self.encode = nn.Sequential(c7s1(in_ch, k(32)), down(k(32), k(64)))
        self.refine = nn.Sequential(
            ResidualBlock(k(64)),
            ResidualBlock(k(64)),
            ResidualBlock(k(64)),
            up(k(64), k(32)),
        )
        self.image_branch = c7s1(k(32), out_ch, final=True)
        # Tanh is swapped for a 2-way softmax in forward()
        self.boundary_branch = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(k(32), 2, 7))
        self.fuse = nn.Sequential(
            ResidualBlock(out_ch + 2, k(64)),
            ResidualBlock(k(64)),
            c7s1(k(64), out_ch, final=True),
        )
        self.apply(init_weights)

    def forward(self, cond_full, coarse_features):
        trunk = self.encode(cond_full)
        if trunk.shape != coarse_features.shape:
            raise ValueError(
                f"fusion shape mismatch: fine trunk {tuple(trunk.shape)} vs coarse features {tuple(coarse_features.shape)}"
            )
        h = self.refine(trunk + coarse_features)
        branch_image = self.image_branch(h)
        boundary_prob = torch.softmax(self.boundary_branch(h), dim=1)
        final_image = self.fuse(torch.cat([branch_image, boundary_prob], dim=1))
        return final_image, branch_image, boundary_prob


@dataclass
class GeneratorOutput:
    final_image: torch.Tensor
    branch_image: torch.Tensor
    boundary_prob: torch.Tensor
    coarse_image: torch.Tensor


class GeneratorBundle(nn.Module):
    """G = {G_c, G_f} wired through the feature-fusion contract."""

    def __init__(self, width_divisor: int = 1):
        super().__init__()
        self.coarse = CoarseGenerator(width_divisor=width_divisor)
        self.fine = FineGenerator(width_divisor=width_divisor)
        if self.coarse.feature_ch != self.fine.encode[-1][0].out_channels:
            raise ValueError("coarse feature width does not match the fine trunk")

    def forward(self, semantic_maps) -> GeneratorOutput:
        """``semantic_maps``: integer N x H x W tensor with codes 0..5."""
        h, w = semantic_maps.shape[-2:]
        _check_divisible(h, w, GEN_DIVISIBILITY, "generator input")
        dtype = self.fine.fuse[-1][1].weight.dtype
        cond_full = one_hot_torch(semantic_maps, dtype)
        cond_half = one_hot_torch(downsample_labels_nearest(semantic_maps, 2), dtype)
        coarse_image, features = self.coarse(cond_half)
        final_image, branch_image, boundary_prob = self.fine(cond_full, features)
        return GeneratorOutput(final_image, branch_image, boundary_prob, coarse_image)


class PatchDiscriminator(nn.Module):
    """C64, C128, C256, C512, then a 4x4 stride-1 conv to one sigmoid channel.

    Padding follows pix2pixHD (2 on every 4x4 conv) so the 1/8-scale member
    still has spatial extent left after four stride-2 layers.
    """

    def __init__(self, in_ch: int = NUM_MODALITIES + NUM_SEMANTIC_CODES, width_divisor: int = 1):
        super().__init__()
        widths = [max(1, n // width_divisor) for n in (64, 128, 256, 512)]
        blocks = []
        prev = in_ch
        for n in widths:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(prev, n, 4, stride=2, padding=2, bias=False),
                    nn.BatchNorm2d(n),
                    nn.LeakyReLU(0.2, inplace=True),
                )
            )
            prev = n
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(prev, 1, 4, stride=1, padding=2)
        self.apply(init_weights)

    def forward(self, x):
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return torch.sigmoid(self.head(x)), features


@dataclass
class DiscriminatorResult:
    prediction: torch.Tensor
    features: list


class DiscriminatorEnsemble(nn.Module):
    """Four unshared discriminators fed at scales 1, 1/2, 1/4, 1/8."""

    scales = (1, 2, 4, 8)

    def __init__(self, width_divisor: int = 1):
        super().__init__()
        self.members = nn.ModuleList(PatchDiscriminator(width_divisor=width_divisor) for _ in self.scales)

    def forward(self, image, cond) -> list[DiscriminatorResult]:
        """``image`` N x 4 x H x W, ``cond`` one-hot N x 6 x H x W (or integer N x H x W)."""
        if cond.dim() == 3:
            cond = one_hot_torch(cond)
        if image.shape[-2:] != cond.shape[-2:]:
            raise ValueError(f"image {tuple(image.shape)} and condition {tuple(cond.shape)} differ spatially")
        x = torch.cat([image, cond.to(image.dtype)], dim=1)
        results = []
        for factor, member in zip(self.scales, self.members):
            inp = x if factor == 1 else downsample_bilinear(x, factor)
            pred, feats = member(inp)
            results.append(DiscriminatorResult(pred, feats))
        return results


def discriminator_output_size(n: int, factor: int) -> int:
    """Spatial size of a member's prediction map for an n-pixel side."""
    n //= factor
    for _ in range(4):
        n = (n + 2 * 2 - 4) // 2 + 1
    return n + 2 * 2 - 4 + 1


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def build_networks(width_divisor: int = 1, seed: int = 0):
    """Seeded construction of a fresh (generator, discriminator ensemble) pair."""
    torch.manual_seed(seed)
    gen = GeneratorBundle(width_divisor=width_divisor)
    disc = DiscriminatorEnsemble(width_divisor=width_divisor)
    return gen, disc
