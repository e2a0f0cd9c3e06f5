"""Alternating adversarial training and synthetic pair generation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import MultimodalCase, slice_sampling_weights, zscore_normalize
from .labels import (
    DeformParams,
    brain_mask,
    complete_tumor_mask,
    displacement_field,
    extract_boundary,
    semantic_from_raw,
    warp_nearest,
)
from .losses import (
    LOSS_LOG_HEADER,
    LossReport,
    LossWeights,
    adv_loss_discriminator,
    adv_loss_generator_terms,
    boundary_loss,
    perceptual_loss_terms,
    total_generator_objective,
)
from .networks import DiscriminatorEnsemble, GeneratorBundle, build_networks

logger = logging.getLogger(__name__)

DEFORM_ORDERS = ("raw_first", "semantic_first")
PERCEPTUAL_MODES = ("matched", "printed")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 4
    iterations: int = 2000
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in ("batch_size", "iterations", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def adam(self, params) -> torch.optim.Adam:
        return torch.optim.Adam(params, lr=self.learning_rate, betas=(self.beta1, self.beta2))


class TrainingDiverged(RuntimeError):
    pass


def gan_domain(case: MultimodalCase) -> np.ndarray:
    """Map the z-scored modality stack into the generator's Tanh range.

    Each modality is min-max scaled to [-1, 1]. Z-scoring a synthetic image
    undoes any positive affine rescaling, so real and synthetic inputs reach
    the segmenter with matching statistics.
    """
    stack = case.image_stack().astype(np.float64)
    lo = stack.min(axis=(1, 2), keepdims=True)
    hi = stack.max(axis=(1, 2), keepdims=True)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return (2.0 * (stack - lo) / span - 1.0).astype(np.float32)


def deform_case_labels(labels, brain, p: DeformParams, order: str = "raw_first"):
    """Deform a case's labels; returns (deformed raw labels 0-4, semantic map 0-5).

    ``raw_first`` warps the raw tumor labels and rebuilds the semantic map on
    the original brain support. ``semantic_first`` warps the full semantic map,
    so the brain contour moves with the tumor.
    """
    if order not in DEFORM_ORDERS:
        raise ValueError(f"unknown deform order {order!r}")
    labels = np.asarray(labels, dtype=np.uint8)
    if p.alpha == 0:
        return labels.copy(), semantic_from_raw(labels, brain)
    field_ = displacement_field(labels.shape, p)
    if order == "raw_first":
        raw = warp_nearest(labels, field_)
        return raw, semantic_from_raw(raw, brain)
    sem = warp_nearest(semantic_from_raw(labels, brain), field_)
    return np.where(sem == 5, 0, sem).astype(np.uint8), sem


@dataclass
class PreparedCase:
    image: np.ndarray
    labels: np.ndarray
    brain: np.ndarray
    semantic: np.ndarray


def prepare_cases(cases) -> list[PreparedCase]:
    out = []
    for c in cases:
        brain = brain_mask(c.modalities)
        out.append(PreparedCase(gan_domain(c), np.asarray(c.labels, np.uint8), brain, semantic_from_raw(c.labels, brain)))
    return out


@dataclass
class GANBatch:
    image: torch.Tensor
    cond: torch.Tensor
    deformed: torch.Tensor
    boundary: torch.Tensor


class GANTrainer:
    """Owns the generator, the discriminator ensemble and their optimizers.

    Iteration ``i`` draws its batch and deformation seeds from
    ``np.random.default_rng([seed, i])`` so that a run resumed from a
    checkpoint replays exactly the same data as an uninterrupted one.
    """

    def __init__(
        self,
        cases,
        opt: OptimizerConfig | None = None,
        weights: LossWeights | None = None,
        deform: DeformParams | None = None,
        width_divisor: int = 1,
        deform_order: str = "raw_first",
        perceptual_mode: str = "matched",
        slice_policy: str = "tumor_biased",
        gen: GeneratorBundle | None = None,
        disc: DiscriminatorEnsemble | None = None,
    ):
        if not cases:
            raise ValueError("GAN training needs at least one case")
        if perceptual_mode not in PERCEPTUAL_MODES:
            raise ValueError(f"unknown perceptual mode {perceptual_mode!r}")
        if deform_order not in DEFORM_ORDERS:
            raise ValueError(f"unknown deform order {deform_order!r}")
        self.opt = opt or OptimizerConfig()
        self.weights = weights or LossWeights()
        self.deform = deform or DeformParams()
        self.deform_order = deform_order
        self.perceptual_mode = perceptual_mode
        self.width_divisor = width_divisor
        self.cases = prepare_cases(cases)
        self.sample_p = slice_sampling_weights(cases, slice_policy)
        if gen is None or disc is None:
            gen, disc = build_networks(width_divisor, seed=self.opt.seed)
        self.gen, self.disc = gen, disc
        self.g_opt = self.opt.adam([p for p in gen.parameters() if p.requires_grad])
        self.d_opt = self.opt.adam(disc.parameters())
        self.iteration = 0
        self.reports: list[LossReport] = []

    def batch(self, iteration: int) -> GANBatch:
        rng = np.random.default_rng([self.opt.seed, iteration])
        idx = rng.choice(len(self.cases), size=self.opt.batch_size, p=self.sample_p)
        seeds = rng.integers(0, 2**63 - 1, size=self.opt.batch_size)
        images, conds, deformed, bounds = [], [], [], []
        for i, s in zip(idx, seeds):
            pc = self.cases[i]
            p = DeformParams(self.deform.alpha, self.deform.sigma, int(s))
            _, z = deform_case_labels(pc.labels, pc.brain, p, self.deform_order)
            images.append(pc.image)
            conds.append(pc.semantic)
            deformed.append(z)
            bounds.append(extract_boundary(complete_tumor_mask(z)))
        return GANBatch(
            torch.from_numpy(np.stack(images)),
            torch.from_numpy(np.stack(conds)).long(),
            torch.from_numpy(np.stack(deformed)).long(),
            torch.from_numpy(np.stack(bounds)),
        )

    def discriminator_step(self, b: GANBatch, fake_image: torch.Tensor) -> float:
        self.d_opt.zero_grad(set_to_none=True)
        real = self.disc(b.image, b.cond)
        fake = self.disc(fake_image.detach(), b.deformed)
        d_loss = adv_loss_discriminator([r.prediction for r in real], [f.prediction for f in fake])
        self._check(d_loss, "d_loss")
        d_loss.backward()
        self.d_opt.step()
        return d_loss.item()

    def generator_objective(self, b: GANBatch, out=None):
        """Total generator loss on a batch, plus its parts for reporting.

        The discriminator is used as a fixed critic here; callers that must
        not touch its gradients freeze it first (see ``generator_step``).
        """
        out = self.gen(b.deformed) if out is None else out
        fake = self.disc(out.final_image, b.deformed)
        adv_terms = adv_loss_generator_terms([f.prediction for f in fake])
        g_adv = torch.stack(adv_terms).sum()
        l_b = boundary_loss(out.boundary_prob, b.boundary)
        with torch.no_grad():
            real = self.disc(b.image, b.cond)
        if self.perceptual_mode == "matched":
            fake = self.disc(self.gen(b.cond).final_image, b.cond)
        p_terms = perceptual_loss_terms([r.features for r in real], [f.features for f in fake])
        l_p = torch.stack(p_terms).sum()
        for name, value in (("g_adv", g_adv), ("l_b", l_b), ("l_p", l_p)):
            self._check(value, name)
        total = total_generator_objective(g_adv, l_b, l_p, self.weights)
        return total, (g_adv, l_b, l_p, adv_terms, p_terms)

    def generator_step(self, b: GANBatch, out) -> LossReport:
        self.disc.requires_grad_(False)
        try:
            self.g_opt.zero_grad(set_to_none=True)
            total, (g_adv, l_b, l_p, adv_terms, p_terms) = self.generator_objective(b, out)
            total.backward()
            self.g_opt.step()
        finally:
            self.disc.requires_grad_(True)
        return LossReport(
            0.0, g_adv.item(), l_b.item(), l_p.item(),
            g_adv.item() + self.weights.lambda1 * l_b.item() + self.weights.lambda2 * l_p.item(),
            [t.item() for t in adv_terms], [t.item() for t in p_terms],
        )

    def _check(self, value, name: str) -> None:
        if not torch.isfinite(value).all():
            raise TrainingDiverged(f"iteration {self.iteration}: non-finite {name} ({value.item()})")

    def step(self) -> LossReport:
        """One discriminator update followed by one generator update."""
        self.gen.train()
        self.disc.train()
        b = self.batch(self.iteration)
        out = self.gen(b.deformed)
        d_loss = self.discriminator_step(b, out.final_image)
        report = self.generator_step(b, out)
        report.d_loss = d_loss
        self.reports.append(report)
        self.iteration += 1
        return report

    def run(self, iterations: int, out_dir=None, checkpoint_every: int = 0, log_every: int = 100) -> list[LossReport]:
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        stop = self.iteration + iterations
        while self.iteration < stop:
            r = self.step()
            if log_every and self.iteration % log_every == 0:
                logger.info("iter %d d=%.4f g_adv=%.4f l_b=%.5f l_p=%.4f", self.iteration, r.d_loss, r.g_adv, r.l_b, r.l_p)
            if out_dir is not None and checkpoint_every and self.iteration % checkpoint_every == 0:
                self.save(out_dir / "checkpoints" / f"gan_{self.iteration:06d}.ckpt")
                self.write_log(out_dir / "loss_log.csv")
        if out_dir is not None:
            self.save(out_dir / "checkpoints" / "gan_final.ckpt")
            self.write_log(out_dir / "loss_log.csv")
        return self.reports

    def write_log(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        start = self.iteration - len(self.reports)
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOSS_LOG_HEADER)
            for i, r in enumerate(self.reports):
                w.writerow([repr(v) if isinstance(v, float) else v for v in r.csv_row(start + i)])
        tmp.replace(path)

    def save(self, path) -> None:
        save_checkpoint(
            path,
            {"generator": self.gen, "discriminator": self.disc},
            {"generator": (self.g_opt, self.gen), "discriminator": (self.d_opt, self.disc)},
            meta={"iteration": self.iteration, "seed": self.opt.seed, "width_divisor": self.width_divisor},
        )

    def load(self, path) -> None:
        meta = load_checkpoint(
            path,
            {"generator": self.gen, "discriminator": self.disc},
            {"generator": (self.g_opt, self.gen), "discriminator": (self.d_opt, self.disc)},
        )
        self.iteration = int(meta["iteration"])
        self.reports = []


def train_gan(cases, opt: OptimizerConfig, weights: LossWeights, out_dir=None, checkpoint_every: int = 0, **kwargs):
    """Train from scratch for ``opt.iterations``; returns the trainer (nets + loss log)."""
    trainer = GANTrainer(cases, opt, weights, **kwargs)
    trainer.run(opt.iterations, out_dir=out_dir, checkpoint_every=checkpoint_every)
    return trainer


def load_generator(path, width_divisor: int | None = None) -> GeneratorBundle:
    from .checkpoint import read_checkpoint

    meta, _ = read_checkpoint(path)
    wd = width_divisor or int(meta.get("width_divisor", 1))
    gen = GeneratorBundle(width_divisor=wd)
    load_checkpoint(path, {"generator": gen})
    gen.eval()
    return gen


@torch.no_grad()
def synthesize_batch(gen: GeneratorBundle, semantic_maps: np.ndarray) -> np.ndarray:
    """Generator images for N x H x W semantic maps, z-scored per modality."""
    was_training = gen.training
    gen.eval()
    try:
        out = gen(torch.from_numpy(np.asarray(semantic_maps)).long())
    finally:
        gen.train(was_training)
    final = out.final_image.numpy()
    return np.stack([np.stack([zscore_normalize(ch) for ch in img]) for img in final])


def synthesize_augmented_pair(
    gen: GeneratorBundle, case: MultimodalCase, deform: DeformParams, seed: int | None = None, deform_order: str = "raw_first"
):
    """(image 4 x H x W, labels 0-4) from a deformed copy of the case's labels."""
    if seed is not None:
        deform = DeformParams(deform.alpha, deform.sigma, seed)
    raw, sem = deform_case_labels(case.labels, brain_mask(case.modalities), deform, deform_order)
    image = synthesize_batch(gen, sem[None])[0]
    return image, raw
