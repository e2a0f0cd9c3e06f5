"""Semantic label maps, tumor boundaries, elastic label deformation, pyramids.

Semantic codes used everywhere in the package::

    0 background   1 necrosis   2 edema   3 non-enhancing   4 enhancing
    5 non-tumor brain

Raw case labels use 0..4 only; code 5 is produced here from the brain mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

BACKGROUND, NECROSIS, EDEMA, NON_ENHANCING, ENHANCING, BRAIN = range(6)
TUMOR_CODES = (NECROSIS, EDEMA, NON_ENHANCING, ENHANCING)
NUM_SEMANTIC_CODES = 6


def brain_mask(modalities) -> np.ndarray:
    """Nonzero support of the (skull-stripped) modality stack."""
    stack = np.stack([np.asarray(m) for m in modalities.values()]) if isinstance(modalities, dict) else np.asarray(modalities)
    return np.any(stack != 0, axis=0)


def semantic_from_raw(labels: np.ndarray, brain: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.where(np.asarray(brain, dtype=bool), BRAIN, BACKGROUND).astype(np.uint8)
    tumor = np.isin(labels, TUMOR_CODES)
    out[tumor] = labels[tumor]
    return out


def build_semantic_label_map(case) -> np.ndarray:
    """Tumor codes 1-4 win; remaining nonzero-intensity pixels become 5."""
    return semantic_from_raw(case.labels, brain_mask(case.modalities))


def raw_from_semantic(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.uint8)
    return np.where(m == BRAIN, BACKGROUND, m).astype(np.uint8)


def complete_tumor_mask(m) -> np.ndarray:
    return np.isin(np.asarray(m), TUMOR_CODES).astype(np.uint8)


def extract_boundary(mask) -> np.ndarray:
    """Inner one-pixel contour under 4-connectivity; outside the image counts as 0."""
    mask = np.asarray(mask).astype(bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return (mask & ~interior).astype(np.float32)


@dataclass(frozen=True)
class DeformParams:
    alpha: float = 300.0
    sigma: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def displacement_field(shape: tuple[int, int], p: DeformParams) -> np.ndarray:
    """Smoothed uniform noise per axis, scaled by alpha. Returns 2 x H x W (dy, dx)."""
    rng = np.random.default_rng(p.seed)
    noise = rng.uniform(-1.0, 1.0, size=(2, *shape))
    return np.stack([ndimage.gaussian_filter(n, p.sigma, mode="constant", cval=0.0) * p.alpha for n in noise])


def warp_nearest(m: np.ndarray, field: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    h, w = m.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([yy + field[0], xx + field[1]])
    return ndimage.map_coordinates(m, coords, order=0, mode="constant", cval=0).astype(m.dtype)


def elastic_deform_labels(m, p: DeformParams) -> np.ndarray:
    m = np.asarray(m)
    if p.alpha == 0:
        return m.copy()
    return warp_nearest(m, displacement_field(m.shape, p))


def one_hot(m) -> np.ndarray:
    m = np.asarray(m)
    return (np.arange(NUM_SEMANTIC_CODES)[:, None, None] == m[None]).astype(np.float32)


def one_hot_torch(m: torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    """Integer N x H x W -> float N x 6 x H x W."""
    return F.one_hot(m.long(), NUM_SEMANTIC_CODES).permute(0, 3, 1, 2).to(dtype)


def downsample_bilinear(img, factor: int):
    """Bilinear decimation of a C x H x W (or N x C x H x W) image.

    Accepts numpy arrays or torch tensors and returns the same kind. Autograd
    flows through the torch path, which is what the discriminator ensemble uses.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"factor must be 2, 4 or 8, got {factor}")
    is_numpy = isinstance(img, np.ndarray)
    t = torch.from_numpy(img) if is_numpy else img
    h, w = t.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} is not divisible by factor {factor}")
    batched = t.dim() == 4
    if not batched:
        t = t.unsqueeze(0)
    out = F.interpolate(t, size=(h // factor, w // factor), mode="bilinear", align_corners=False)
    if not batched:
        out = out.squeeze(0)
    return out.numpy() if is_numpy else out


def downsample_labels_nearest(m, factor: int = 2):
    """Nearest-neighbour decimation sampling the top-left pixel of each block."""
    h, w = m.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"label map size {h}x{w} is not divisible by factor {factor}")
    return m[..., ::factor, ::factor]
