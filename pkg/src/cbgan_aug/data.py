"""Multimodal cases, intensity normalization and the procedural phantom dataset."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .labels import EDEMA, ENHANCING, NECROSIS, NON_ENHANCING
from .tensorio import read_tensor, write_tensor

logger = logging.getLogger(__name__)

MODALITIES = ("FLAIR", "T1", "T1c", "T2")
GRADES = ("HG", "LG", "phantom")
STD_EPS = 1e-8
MIN_PHANTOM_SIZE = 32


class CaseFormatError(ValueError):
    pass


@dataclass
class MultimodalCase:
    case_id: str
    modalities: dict
    labels: np.ndarray
    grade: str = "phantom"

    def __post_init__(self):
        if set(self.modalities) != set(MODALITIES):
            raise CaseFormatError(f"modalities must be exactly {MODALITIES}, got {sorted(self.modalities)}")
        if self.grade not in GRADES:
            raise CaseFormatError(f"unknown grade {self.grade!r}")
        shape = self.labels.shape
        for name in MODALITIES:
            if self.modalities[name].shape != shape:
                raise CaseFormatError(
                    f"shape mismatch: {name} is {self.modalities[name].shape}, labels are {shape}"
                )
        bad = np.setdiff1d(np.unique(self.labels), np.arange(5))
        if bad.size:
            raise CaseFormatError(f"invalid raw label codes {bad.tolist()} (raw labels use 0-4)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def image_stack(self) -> np.ndarray:
        """4 x H x W, each modality z-scored independently."""
        return np.stack([zscore_normalize(self.modalities[m]) for m in MODALITIES])

    def has_tumor(self) -> bool:
        return bool(np.any(self.labels > 0))


def zscore_normalize(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("cannot normalize an empty image")
    std = image.std()
    if std < STD_EPS:
        warnings.warn("constant image: normalized to zeros", RuntimeWarning, stacklevel=2)
        return np.zeros(image.shape, dtype=np.float32)
    return ((image - image.mean()) / std).astype(np.float32)


# Tissue contrast table (relative units, before per-modality scaling).
# Every tumor subclass is separable in at least one channel:
#   edema bright in FLAIR and T2, enhancing bright in T1c, necrosis dark in T1c,
#   non-enhancing intermediate in T2 and darkest in T1.
CONTRAST = {
    # code:        FLAIR  T1    T1c   T2
    0: np.array([0.40, 0.60, 0.55, 0.40]),  # healthy brain when inside the mask
    NECROSIS: np.array([0.55, 0.35, 0.12, 0.95]),
    EDEMA: np.array([1.00, 0.45, 0.50, 0.90]),
    NON_ENHANCING: np.array([0.75, 0.25, 0.40, 0.65]),
    ENHANCING: np.array([0.70, 0.50, 1.00, 0.55]),
}
MODALITY_SCALE = np.array([120.0, 90.0, 110.0, 150.0])
TEXTURE_AMPLITUDE = 0.08
EDGE_BLUR = 0.7


@dataclass(frozen=True)
class PhantomConfig:
    num_cases: int = 200
    height: int = 64
    width: int = 64
    tumor_probability: float = 0.8
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_cases < 1:
            raise ValueError("num_cases must be positive")
        if self.height < MIN_PHANTOM_SIZE or self.width < MIN_PHANTOM_SIZE:
            raise ValueError(
                f"phantom size {self.height}x{self.width} too small; need at least {MIN_PHANTOM_SIZE} per side"
            )
        if not 0.0 <= self.tumor_probability <= 1.0:
            raise ValueError("tumor_probability must lie in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def _elliptic_radius(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (yy - cy) * c + (xx - cx) * s
    v = -(yy - cy) * s + (xx - cx) * c
    return np.sqrt((u / ry) ** 2 + (v / rx) ** 2), np.arctan2(v, u)


def _phantom_case(cfg: PhantomConfig, index: int) -> MultimodalCase:
    rng = np.random.default_rng([cfg.seed, index])
    h, w = cfg.height, cfg.width
    size = min(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    cy = h / 2 + rng.uniform(-0.04, 0.04) * h
    cx = w / 2 + rng.uniform(-0.04, 0.04) * w
    ry, rx = rng.uniform(0.36, 0.44) * h, rng.uniform(0.30, 0.40) * w
    rho, ang = _elliptic_radius(yy, xx, cy, cx, ry, rx, rng.uniform(-0.3, 0.3))
    wobble = 0.04 * np.sin(3 * ang + rng.uniform(0, 2 * np.pi)) + 0.03 * np.sin(5 * ang + rng.uniform(0, 2 * np.pi))
    brain = rho < 1.0 + wobble

    labels = np.zeros((h, w), dtype=np.uint8)
    if rng.random() < cfg.tumor_probability:
        r = np.sqrt(rng.uniform(0, 0.45 ** 2))
        phi = rng.uniform(0, 2 * np.pi)
        ty, tx = cy + r * ry * np.cos(phi), cx + r * rx * np.sin(phi)
        edema_r = rng.uniform(0.16, 0.22) * size
        aspect = rng.uniform(0.8, 1.2)
        trho, tang = _elliptic_radius(yy, xx, ty, tx, edema_r * aspect, edema_r / aspect, rng.uniform(0, np.pi))
        trho = trho * (1.0 + 0.06 * np.sin(4 * tang + rng.uniform(0, 2 * np.pi)))
        core = rng.uniform(0.5, 0.65)
        labels[trho < 1.0] = EDEMA
        labels[trho < core] = ENHANCING
        labels[trho < 0.7 * core] = NON_ENHANCING
        labels[trho < 0.4 * core] = NECROSIS
        labels[~brain] = 0

    texture = ndimage.gaussian_filter(rng.standard_normal((h, w)), size / 16) * size / 16 * TEXTURE_AMPLITUDE
    modalities = {}
    for k, name in enumerate(MODALITIES):
        img = np.full((h, w), CONTRAST[0][k]) + texture
        for code in (NECROSIS, EDEMA, NON_ENHANCING, ENHANCING):
            img[labels == code] = CONTRAST[code][k]
        img = ndimage.gaussian_filter(img, EDGE_BLUR)
        img = img + rng.normal(0.0, cfg.noise_std, size=(h, w)) if cfg.noise_std > 0 else img
        img = np.where(brain, np.maximum(img, 0.01), 0.0) * MODALITY_SCALE[k]
        modalities[name] = img.astype(np.float32)
    return MultimodalCase(f"phantom_{index:04d}", modalities, labels, "phantom")


def generate_phantom_dataset(cfg: PhantomConfig) -> list[MultimodalCase]:
    """Deterministic list of elliptical-brain phantoms with nested tumors.

    Each case is seeded from (cfg.seed, index), so a case does not depend on
    how many others are generated alongside it.
    """
    return [_phantom_case(cfg, i) for i in range(cfg.num_cases)]


def _modality_file(name: str) -> str:
    return f"{name.lower()}.tnsr"


def save_case(case: MultimodalCase, dir_path) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for name in MODALITIES:
        write_tensor(np.asarray(case.modalities[name], dtype=np.float32), d / _modality_file(name))
    write_tensor(np.asarray(case.labels, dtype=np.uint8), d / "labels.tnsr")
    h, w = case.shape
    meta = {"case_id": case.case_id, "grade": case.grade, "height": h, "width": w}
    (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CaseFormatError(f"{path}: malformed meta line {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def load_case(dir_path) -> MultimodalCase:
    d = Path(dir_path)
    modalities = {}
    for name in MODALITIES:
        f = d / _modality_file(name)
        if not f.exists():
            raise CaseFormatError(f"{d}: missing modality file {f.name} ({name.lower()})")
        modalities[name] = read_tensor(f)
    if not (d / "labels.tnsr").exists():
        raise CaseFormatError(f"{d}: missing labels.tnsr")
    labels = read_tensor(d / "labels.tnsr")
    if labels.dtype != np.uint8:
        raise CaseFormatError(f"{d}: labels must be uint8, found {labels.dtype}")
    if labels.max(initial=0) > 4:
        raise CaseFormatError(f"{d}: invalid raw label code {int(labels.max())} (raw labels use 0-4)")
    for name, img in modalities.items():
        if img.dtype != np.float32:
            raise CaseFormatError(f"{d}: {name} must be float32, found {img.dtype}")
        if img.shape != labels.shape:
            raise CaseFormatError(f"{d}: shape mismatch, {name} {img.shape} vs labels {labels.shape}")
    meta_path = d / "meta.txt"
    if not meta_path.exists():
        raise CaseFormatError(f"{d}: missing meta.txt")
    meta = _read_meta(meta_path)
    for key in ("case_id", "grade", "height", "width"):
        if key not in meta:
            raise CaseFormatError(f"{d}: meta.txt lacks {key!r}")
    if (int(meta["height"]), int(meta["width"])) != labels.shape:
        raise CaseFormatError(f"{d}: meta size {meta['height']}x{meta['width']} disagrees with tensors {labels.shape}")
    return MultimodalCase(meta["case_id"], modalities, labels, meta["grade"])


def save_dataset(cases, root) -> list[Path]:
    root = Path(root)
    paths = []
    for case in cases:
        p = root / case.case_id
        save_case(case, p)
        paths.append(p)
    return paths


def load_dataset(root) -> list[MultimodalCase]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if (p / "meta.txt").exists())
    if not dirs:
        raise CaseFormatError(f"{root}: no case directories found")
    return [load_case(p) for p in dirs]


# Slice sampling. The source never states how axial slices were drawn from
# volumes; "tumor_biased" puts TUMOR_SLICE_MASS of the probability on
# tumor-bearing slices, "all" samples uniformly.
SLICE_POLICIES = ("tumor_biased", "all")
TUMOR_SLICE_MASS = 0.75


def slice_sampling_weights(cases, policy: str = "tumor_biased") -> np.ndarray:
    if policy not in SLICE_POLICIES:
        raise ValueError(f"unknown slice policy {policy!r}")
    tumor = np.array([c.has_tumor() for c in cases])
    n = len(cases)
    if policy == "all" or tumor.all() or not tumor.any():
        return np.full(n, 1.0 / n)
    weights = np.where(tumor, TUMOR_SLICE_MASS / tumor.sum(), (1 - TUMOR_SLICE_MASS) / (~tumor).sum())
    return weights / weights.sum()


def split_cases(cases, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle and split into (train, val, test) by the given fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    order = np.random.default_rng(seed).permutation(len(cases))
    n_train = int(round(fractions[0] * len(cases)))
    n_val = int(round(fractions[1] * len(cases)))
    pick = lambda idx: [cases[i] for i in idx]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train:n_train + n_val]), pick(order[n_train + n_val:])
