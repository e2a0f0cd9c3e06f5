"""Flat ``key=value`` experiment configuration.

Every tunable has an explicit default (see ``python -m cbgan_aug dump-defaults``)
except ``seed``, which each config file must set. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import SLICE_POLICIES, PhantomConfig
from .gan import DEFORM_ORDERS, PERCEPTUAL_MODES, OptimizerConfig
from .labels import DeformParams
from .losses import LossWeights
from .segmentation import AUGMENTATION_MODES, AugmentationMode


class ConfigError(ValueError):
    pass


# key: (type, default); order is the dump-defaults order
SCHEMA: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "dataset_dir": (str, ""),
    "phantom.num_cases": (int, 200),
    "phantom.height": (int, 64),
    "phantom.width": (int, 64),
    "phantom.tumor_probability": (float, 0.8),
    "phantom.noise_std": (float, 0.05),
    "split.train": (float, 0.6),
    "split.val": (float, 0.2),
    "split.test": (float, 0.2),
    "deform.alpha": (float, 300.0),
    "deform.sigma": (float, 10.0),
    "deform.order": (str, "raw_first"),
    "loss.lambda1": (float, 10.0),
    "loss.lambda2": (float, 10.0),
    "gan.learning_rate": (float, 2e-4),
    "gan.beta1": (float, 0.5),
    "gan.beta2": (float, 0.999),
    "gan.batch_size": (int, 4),
    "gan.iterations": (int, 2000),
    "gan.width_divisor": (int, 1),
    "gan.checkpoint_every": (int, 500),
    "gan.perceptual_mode": (str, "matched"),
    "gan.slice_policy": (str, "tumor_biased"),
    "seg.learning_rate": (float, 2e-4),
    "seg.beta1": (float, 0.5),
    "seg.beta2": (float, 0.999),
    "seg.batch_size": (int, 2),
    "seg.epochs": (int, 30),
    "aug.mode": (str, "none"),
    "aug.mix_probability": (float, 0.5),
    "synth.count": (int, 8),
    "compare.seeds": (int, 3),
}

CHOICES = {
    "deform.order": DEFORM_ORDERS,
    "gan.perceptual_mode": PERCEPTUAL_MODES,
    "gan.slice_policy": SLICE_POLICIES,
    "aug.mode": AUGMENTATION_MODES,
}


def dump_defaults() -> str:
    return "".join(f"{k}={v}\n" for k, (_, v) in SCHEMA.items())


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "ExperimentConfig":
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "seed" not in raw:
            raise ConfigError("config must set 'seed'")
        values = {}
        for key, (typ, default) in SCHEMA.items():
            value = raw.get(key, default)
            try:
                values[key] = typ(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None
            if key in CHOICES and values[key] not in CHOICES[key]:
                raise ConfigError(f"{key}: {values[key]!r} not in {CHOICES[key]}")
        cfg = cls(values, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
        return cls.from_dict(raw, base_dir=path.parent)

    def validate(self) -> None:
        try:
            self.phantom()
            self.deform()
            self.gan_optimizer()
            self.seg_optimizer()
            self.loss_weights()
            self.augmentation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        fractions = self.split_fractions()
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
        if self["gan.width_divisor"] < 1:
            raise ConfigError("gan.width_divisor must be >= 1")
        if self["gan.checkpoint_every"] < 0 or self["synth.count"] < 1 or self["compare.seeds"] < 1:
            raise ConfigError("gan.checkpoint_every must be >= 0; synth.count and compare.seeds >= 1")
        if self["phantom.height"] % 32 or self["phantom.width"] % 32:
            raise ConfigError("phantom height/width must be multiples of 32 for the generator")

    def phantom(self) -> PhantomConfig:
        return PhantomConfig(
            self["phantom.num_cases"], self["phantom.height"], self["phantom.width"],
            self["phantom.tumor_probability"], self["phantom.noise_std"], self["seed"],
        )

    def deform(self) -> DeformParams:
        return DeformParams(self["deform.alpha"], self["deform.sigma"], self["seed"])

    def _optimizer(self, prefix: str, seed: int, iterations: int = 1) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self[f"{prefix}.learning_rate"],
            beta1=self[f"{prefix}.beta1"],
            beta2=self[f"{prefix}.beta2"],
            batch_size=self[f"{prefix}.batch_size"],
            iterations=iterations,
            epochs=self["seg.epochs"],
            seed=seed,
        )

    def gan_optimizer(self) -> OptimizerConfig:
        return self._optimizer("gan", self["seed"], self["gan.iterations"])

    def seg_optimizer(self, seed: int | None = None) -> OptimizerConfig:
        return self._optimizer("seg", self["seed"] if seed is None else seed)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self["loss.lambda1"], self["loss.lambda2"])

    def augmentation(self, mode: str | None = None) -> AugmentationMode:
        return AugmentationMode(
            mode or self["aug.mode"], self["aug.mix_probability"], self.deform(), self["deform.order"]
        )

    def split_fractions(self) -> tuple[float, float, float]:
        return (self["split.train"], self["split.val"], self["split.test"])

    def dataset_dir(self, out_dir: Path) -> Path:
        if not self["dataset_dir"]:
            return Path(out_dir) / "dataset"
        p = Path(self["dataset_dir"])
        return p if p.is_absolute() else self.base_dir / p
