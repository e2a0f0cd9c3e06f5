"""The traditional augmentation baseline: small rotation, zoom and horizontal flip."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

MAX_ROTATION_DEG = 10.0
ZOOM_RANGE = (0.98, 1.02)
FLIP_PROBABILITY = 0.5


def affine_augment(image, labels, angle_deg: float, zoom: float, flip: bool):
    """Apply flip, then rotation/zoom about the image centre.

    Images (C x H x W) are resampled bilinearly, labels (H x W) by nearest
    neighbour; both keep their original size and extend edge values, so label
    codes can only disappear, never appear.
    """
    image = np.asarray(image, dtype=np.float32)
    labels = np.asarray(labels)
    if flip:
        image = image[..., ::-1]
        labels = labels[..., ::-1]
    if angle_deg == 0.0 and zoom == 1.0:
        return image.copy(), labels.copy()
    h, w = labels.shape
    t = np.deg2rad(angle_deg)
    # maps output coordinates to input coordinates
    matrix = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]) / zoom
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - matrix @ center
    out_img = np.stack([
        ndimage.affine_transform(ch, matrix, offset, order=1, mode="nearest") for ch in image
    ]).astype(np.float32)
    out_lab = ndimage.affine_transform(labels, matrix, offset, order=0, mode="nearest").astype(labels.dtype)
    return out_img, out_lab


def draw_params(rng: np.random.Generator) -> tuple[float, float, bool]:
    angle = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    zoom = rng.uniform(*ZOOM_RANGE)
    flip = bool(rng.random() < FLIP_PROBABILITY)
    return angle, zoom, flip


def traditional_augment(image, labels, seed):
    """Random rotation in [-10, 10] deg, zoom in [0.98, 1.02], flip with p=0.5."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return affine_augment(image, labels, *draw_params(rng))
