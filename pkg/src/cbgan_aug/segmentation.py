"""U-Net segmentation trainer with the three augmentation modes."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import traditional_augment
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .evaluation import case_metrics, predict_labels
from .gan import OptimizerConfig, deform_case_labels, load_generator, synthesize_batch
from .labels import DeformParams, brain_mask

logger = logging.getLogger(__name__)

NUM_CLASSES = 5
AUGMENTATION_MODES = ("none", "traditional", "proposed")
METRIC_LOG_HEADER = ["epoch", "dice_complete", "dice_core", "dice_enh"]


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationMode:
    mode: str = "none"
    mix_probability: float = 0.5
    deform: DeformParams = field(default_factory=DeformParams)
    deform_order: str = "raw_first"

    def __post_init__(self):
        if self.mode not in AUGMENTATION_MODES:
            raise ConfigurationError(f"unknown augmentation mode {self.mode!r}")
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ConfigurationError("mix_probability must lie in [0, 1]")


def double_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, in_ch: int = 4, num_classes: int = NUM_CLASSES, base: int = 32, depth: int = 4):
        super().__init__()
        widths = [base * 2**i for i in range(depth + 1)]
        self.depth = depth
        self.inc = double_conv(in_ch, widths[0])
        self.downs = nn.ModuleList(double_conv(widths[i], widths[i + 1]) for i in range(depth))
        self.ups = nn.ModuleList(double_conv(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(depth)))
        self.out = nn.Conv2d(widths[0], num_classes, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 2**self.depth or w % 2**self.depth:
            raise ValueError(f"input {h}x{w} must be divisible by {2**self.depth}")
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(F.max_pool2d(skips[-1], 2)))
        y = skips.pop()
        for up in self.ups:
            y = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
            y = up(torch.cat([y, skips.pop()], dim=1))
        return self.out(y)


@dataclass
class SegmentationResult:
    model: UNet
    metric_log: list
    synthetic_samples: int = 0
    real_samples: int = 0

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_LOG_HEADER)
            for row in self.metric_log:
                w.writerow([row["epoch"], *(f"{row[k]:.6f}" for k in METRIC_LOG_HEADER[1:])])


def validation_dice(model, images, labels) -> dict:
    preds = predict_labels(model, images)
    rows = [case_metrics(p, g) for p, g in zip(preds, labels)]
    return {
        "dice_complete": float(np.mean([r["complete_dice"] for r in rows])),
        "dice_core": float(np.mean([r["core_dice"] for r in rows])),
        "dice_enh": float(np.mean([r["enhancing_dice"] for r in rows])),
    }


def train_segmentation(
    train_cases,
    val_cases,
    mode: AugmentationMode,
    opt: OptimizerConfig,
    generator=None,
    gan_checkpoint=None,
) -> SegmentationResult:
    """Train a U-Net with cross-entropy over the five raw label codes.

    Augmentation is drawn per sample at load time from
    ``default_rng([seed, epoch, index])``; validation data is never augmented.
    In ``proposed`` mode each training sample is swapped, with probability
    ``mode.mix_probability``, for a generator image of an elastically
    deformed copy of its labels.
    """
    if mode.mode == "proposed" and generator is None:
        if gan_checkpoint is None or not Path(gan_checkpoint).exists():
            raise ConfigurationError(f"proposed mode needs a GAN checkpoint; got {gan_checkpoint!r}")
        generator = load_generator(gan_checkpoint)
    if not train_cases:
        raise ConfigurationError("no training cases")

    images = np.stack([c.image_stack() for c in train_cases])
    labels = np.stack([np.asarray(c.labels, np.uint8) for c in train_cases])
    brains = [brain_mask(c.modalities) for c in train_cases] if mode.mode == "proposed" else None
    val_images = np.stack([c.image_stack() for c in val_cases]) if val_cases else None
    val_labels = [c.labels for c in val_cases]

    torch.manual_seed(opt.seed)
    model = UNet()
    optimizer = opt.adam(model.parameters())
    result = SegmentationResult(model, [])
    n = len(train_cases)

    for epoch in range(opt.epochs):
        model.train()
        order = np.random.default_rng([opt.seed, epoch]).permutation(n)
        running = 0.0
        for start in range(0, n, opt.batch_size):
            idx = order[start:start + opt.batch_size]
            xb, yb, synth_slots, synth_maps = [], [], [], []
            for slot, i in enumerate(idx):
                rng = np.random.default_rng([opt.seed, epoch, int(i)])
                x, y = images[i], labels[i]
                if mode.mode == "traditional":
                    x, y = traditional_augment(x, y, rng)
                elif mode.mode == "proposed" and rng.random() < mode.mix_probability:
                    p = DeformParams(mode.deform.alpha, mode.deform.sigma, int(rng.integers(0, 2**63 - 1)))
                    y, sem = deform_case_labels(y, brains[i], p, mode.deform_order)
                    synth_slots.append(slot)
                    synth_maps.append(sem)
                xb.append(x)
                yb.append(y)
            if synth_maps:
                for slot, img in zip(synth_slots, synthesize_batch(generator, np.stack(synth_maps))):
                    xb[slot] = img
            result.synthetic_samples += len(synth_slots)
            result.real_samples += len(idx) - len(synth_slots)
            xt = torch.from_numpy(np.ascontiguousarray(np.stack(xb)))
            yt = torch.from_numpy(np.ascontiguousarray(np.stack(yb))).long()
            optimizer.zero_grad(set_to_none=True)
            loss = F.cross_entropy(model(xt), yt)
            loss.backward()
            optimizer.step()
            running += loss.item() * len(idx)
        row = {"epoch": epoch + 1, "loss": running / n}
        if val_images is not None:
            row.update(validation_dice(model, val_images, val_labels))
        else:
            row.update({k: float("nan") for k in METRIC_LOG_HEADER[1:]})
        result.metric_log.append(row)
        logger.info("epoch %d loss %.4f dice_complete %.4f", epoch + 1, row["loss"], row["dice_complete"])
    return result


def save_unet(model: UNet, path) -> None:
    save_checkpoint(path, {"unet": model}, meta={"kind": "unet"})


def load_unet(path) -> UNet:
    meta, _ = read_checkpoint(path)
    if meta.get("kind") != "unet":
        raise ConfigurationError(f"{path} is not a segmentation checkpoint")
    model = UNet()
    load_checkpoint(path, {"unet": model})
    model.eval()
    return model
