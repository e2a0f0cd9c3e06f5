"""Adversarial, boundary, feature-matching and combined generator losses.

All functions take torch tensors and return scalar tensors so they can be
back-propagated; call ``float()`` on the result for reporting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

LOG_EPS = 1e-7


def _log(p):
    return torch.log(p.clamp(LOG_EPS, 1.0 - LOG_EPS))


def _pred(p):
    return p.prediction if hasattr(p, "prediction") else p


def adv_loss_discriminator_terms(real_preds, fake_preds) -> list:
    if len(real_preds) != len(fake_preds):
        raise ValueError("real and fake prediction lists differ in length")
    return [
        -(_log(_pred(r)).mean() + _log(1.0 - _pred(f)).mean())
        for r, f in zip(real_preds, fake_preds)
    ]


def adv_loss_discriminator(real_preds, fake_preds):
    """Negated GAN value summed over the ensemble; D minimizes this."""
    return torch.stack(adv_loss_discriminator_terms(real_preds, fake_preds)).sum()


def adv_loss_generator_terms(fake_preds) -> list:
    # non-saturating -log D(G(z)) in place of log(1 - D(G(z)))
    return [-_log(_pred(f)).mean() for f in fake_preds]


def adv_loss_generator(fake_preds):
    return torch.stack(adv_loss_generator_terms(fake_preds)).sum()


def boundary_loss(pred, target):
    """Mean squared error between the boundary probability and the boundary mask.

    ``pred`` is the 2-channel softmax output (N x 2 x H x W, or 2 x H x W for a
    single image); channel 1 is the boundary probability. ``target`` holds the
    matching {0, 1} masks (N x H x W or H x W). The mean runs over every pixel
    of every batch item.
    """
    prob = pred[:, 1] if pred.dim() == 4 else pred[1]
    target = target.to(prob.dtype)
    if prob.shape != target.shape:
        raise ValueError(f"boundary prediction {tuple(prob.shape)} vs target {tuple(target.shape)}")
    return ((prob - target) ** 2).mean()


def _feats(f):
    return f.features if hasattr(f, "features") else f


def perceptual_loss_terms(real_feats, fake_feats) -> list:
    terms = []
    for real_member, fake_member in zip(real_feats, fake_feats, strict=True):
        total = 0.0
        for r, f in zip(_feats(real_member), _feats(fake_member), strict=True):
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch {tuple(r.shape)} vs {tuple(f.shape)}")
            total = total + ((r.detach() - f) ** 2).mean()
        terms.append(total if torch.is_tensor(total) else torch.tensor(total))
    return terms


def perceptual_loss(real_feats, fake_feats):
    """Sum over members and layers of the per-element mean squared feature gap.

    Real activations are detached, so only the fake side carries gradient.
    """
    return torch.stack(perceptual_loss_terms(real_feats, fake_feats)).sum()


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 10.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (v >= 0 and v < float("inf")):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def total_generator_objective(g_adv, l_b, l_p, w: LossWeights):
    return g_adv + w.lambda1 * l_b + w.lambda2 * l_p


LOSS_LOG_HEADER = (
    ["iteration", "d_loss", "g_adv", "l_b", "l_p", "total"]
    + [f"g_adv_{k}" for k in range(1, 5)]
    + [f"l_p_{k}" for k in range(1, 5)]
)


@dataclass
class LossReport:
    d_loss: float
    g_adv: float
    l_b: float
    l_p: float
    total: float
    adv_per_member: list = field(default_factory=list)
    perceptual_per_member: list = field(default_factory=list)

    def scalars(self) -> dict:
        return {"d_loss": self.d_loss, "g_adv": self.g_adv, "l_b": self.l_b, "l_p": self.l_p, "total": self.total}

    def csv_row(self, iteration: int) -> list:
        return [iteration, self.d_loss, self.g_adv, self.l_b, self.l_p, self.total,
                *self.adv_per_member, *self.perceptual_per_member]

    @classmethod
    def from_csv_row(cls, row: dict) -> "LossReport":
        return cls(
            float(row["d_loss"]), float(row["g_adv"]), float(row["l_b"]), float(row["l_p"]), float(row["total"]),
            [float(row[f"g_adv_{k}"]) for k in range(1, 5)],
            [float(row[f"l_p_{k}"]) for k in range(1, 5)],
        )
