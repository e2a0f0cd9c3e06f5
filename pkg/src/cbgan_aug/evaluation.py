"""BRATS-style region metrics: Dice, precision and sensitivity.

Empty-mask conventions (needed for tumor-free slices):

* dice: both masks empty -> 1.0
* precision: empty prediction -> 1.0 if the ground truth is empty too, else 0.0
* sensitivity: empty ground truth -> 1.0 if the prediction is empty too, else 0.0
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import torch

REGIONS = {
    "complete": (1, 2, 3, 4),
    "core": (1, 3, 4),
    "enhancing": (4,),
}
METRICS = ("dice", "precision", "sensitivity")
SHORT = {"complete": "Complete", "core": "Core", "enhancing": "Enh."}


@dataclass(frozen=True)
class RegionSpec:
    name: str

    def __post_init__(self):
        if self.name not in REGIONS:
            raise ValueError(f"unknown region {self.name!r}; expected one of {sorted(REGIONS)}")

    @property
    def codes(self) -> tuple:
        return REGIONS[self.name]


def region_mask(labels, region) -> np.ndarray:
    spec = region if isinstance(region, RegionSpec) else RegionSpec(region)
    return np.isin(np.asarray(labels), spec.codes)


def _counts(pred, gt):
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    return int(np.count_nonzero(p & g)), int(p.sum()), int(g.sum())


def dice(pred, gt) -> float:
    inter, np_, ng = _counts(pred, gt)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def precision(pred, gt) -> float:
    inter, np_, ng = _counts(pred, gt)
    if np_ == 0:
        return 1.0 if ng == 0 else 0.0
    return inter / np_


def sensitivity(pred, gt) -> float:
    inter, np_, ng = _counts(pred, gt)
    if ng == 0:
        return 1.0 if np_ == 0 else 0.0
    return inter / ng


def case_metrics(pred_labels, gt_labels) -> dict:
    out = {}
    for region in REGIONS:
        p, g = region_mask(pred_labels, region), region_mask(gt_labels, region)
        out[f"{region}_dice"] = dice(p, g)
        out[f"{region}_precision"] = precision(p, g)
        out[f"{region}_sensitivity"] = sensitivity(p, g)
    return out


METRIC_KEYS = [f"{r}_{m}" for r in REGIONS for m in METRICS]


@dataclass
class EvalReport:
    case_ids: list
    per_case: list
    aggregate: dict = field(default_factory=dict)

    @classmethod
    def from_cases(cls, case_ids, per_case) -> "EvalReport":
        agg = {k: float(np.mean([row[k] for row in per_case])) for k in METRIC_KEYS} if per_case else {}
        return cls(list(case_ids), list(per_case), agg)

    @property
    def case_count(self) -> int:
        return len(self.per_case)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", *METRIC_KEYS])
            for cid, row in zip(self.case_ids, self.per_case):
                w.writerow([cid, *(f"{row[k]:.6f}" for k in METRIC_KEYS)])
            w.writerow(["mean", *(f"{self.aggregate[k]:.6f}" for k in METRIC_KEYS)])

    def table(self, name: str = "model") -> str:
        return format_table({name: self.aggregate})


def format_table(rows: dict) -> str:
    """Fixed-width table: Dice, Precision, Sensitivity x (Complete, Core, Enh.)."""
    name_w = max([len("Method")] + [len(n) for n in rows])
    groups = [("Dice", "dice"), ("Precision", "precision"), ("Sensitivity", "sensitivity")]
    cell = 8
    group_w = 3 * cell + 2
    top = " " * name_w + " | " + " | ".join(g.center(group_w) for g, _ in groups)
    sub = "Method".ljust(name_w) + " | " + " | ".join(
        " ".join(SHORT[r].rjust(cell) for r in REGIONS) for _ in groups
    )
    lines = [top, sub, "-" * len(sub)]
    for name, agg in rows.items():
        lines.append(name.ljust(name_w) + " | " + " | ".join(
            " ".join(f"{agg[f'{r}_{m}']:.4f}".rjust(cell) for r in REGIONS) for _, m in groups
        ))
    lines.append("empty-mask conventions: dice(empty, empty)=1; precision/sensitivity of an empty side = 1 iff both empty")
    return "\n".join(lines)


@torch.no_grad()
def predict_labels(model, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Argmax label maps for N x 4 x H x W z-scored images."""
    model.eval()
    out = []
    for start in range(0, len(images), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(images[start:start + batch_size]))
        out.append(model(x).argmax(dim=1).numpy().astype(np.uint8))
    return np.concatenate(out)


def evaluate(model, cases) -> EvalReport:
    if not cases:
        raise ValueError("no cases to evaluate")
    images = np.stack([c.image_stack() for c in cases])
    preds = predict_labels(model, images)
    rows = [case_metrics(p, c.labels) for p, c in zip(preds, cases)]
    return EvalReport.from_cases([c.case_id for c in cases], rows)
