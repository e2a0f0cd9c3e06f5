"""Command-line entry point: ``cbgan-aug <command> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, dump_defaults
from .data import CaseFormatError, MultimodalCase, generate_phantom_dataset, load_dataset, save_case, save_dataset, split_cases
from .evaluation import evaluate, format_table
from .gan import GANTrainer, TrainingDiverged, deform_case_labels, load_generator, synthesize_batch
from .labels import DeformParams, brain_mask, complete_tumor_mask, extract_boundary
from .segmentation import AUGMENTATION_MODES, ConfigurationError, load_unet, save_unet, train_segmentation
from .tensorio import write_tensor

logger = logging.getLogger("cbgan_aug")

OUT_ENV = "CBGAN_AUG_OUT"
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _splits(cfg: ExperimentConfig, out: Path):
    cases = load_dataset(cfg.dataset_dir(out))
    return split_cases(cases, cfg.split_fractions(), seed=cfg["seed"])


def cmd_phantom(cfg: ExperimentConfig, out: Path, args) -> None:
    target = cfg.dataset_dir(out)
    if target.exists() and any(target.iterdir()):
        raise ConfigError(f"dataset directory {target} is not empty")
    cases = generate_phantom_dataset(cfg.phantom())
    save_dataset(cases, target)
    print(f"wrote {len(cases)} phantom cases to {target}")


def _train_gan(cfg: ExperimentConfig, train_cases, out: Path) -> Path:
    trainer = GANTrainer(
        train_cases,
        cfg.gan_optimizer(),
        cfg.loss_weights(),
        cfg.deform(),
        width_divisor=cfg["gan.width_divisor"],
        deform_order=cfg["deform.order"],
        perceptual_mode=cfg["gan.perceptual_mode"],
        slice_policy=cfg["gan.slice_policy"],
    )
    trainer.run(cfg["gan.iterations"], out_dir=out, checkpoint_every=cfg["gan.checkpoint_every"])
    return out / "checkpoints" / "gan_final.ckpt"


def cmd_train_gan(cfg: ExperimentConfig, out: Path, args) -> None:
    train, _, _ = _splits(cfg, out)
    ckpt = _train_gan(cfg, train, out / "gan")
    print(f"GAN checkpoint: {ckpt}")
    print(f"loss log: {out / 'gan' / 'loss_log.csv'}")


def _require_checkpoint(args, default: Path) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else default
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    return path


def cmd_synth(cfg: ExperimentConfig, out: Path, args) -> None:
    ckpt = _require_checkpoint(args, out / "gan" / "checkpoints" / "gan_final.ckpt")
    gen = load_generator(ckpt)
    train, _, _ = _splits(cfg, out)
    target = out / "synth"
    deform = cfg.deform()
    for i in range(cfg["synth.count"]):
        source = train[i % len(train)]
        p = DeformParams(deform.alpha, deform.sigma, int(np.random.default_rng([cfg["seed"], i]).integers(0, 2**63 - 1)))
        raw, sem = deform_case_labels(source.labels, brain_mask(source.modalities), p, cfg["deform.order"])
        image = synthesize_batch(gen, sem[None])[0]
        case = MultimodalCase(
            f"synth_{i:04d}",
            {m: image[k] for k, m in enumerate(("FLAIR", "T1", "T1c", "T2"))},
            raw,
            "phantom",
        )
        d = target / case.case_id
        save_case(case, d)
        write_tensor(extract_boundary(complete_tumor_mask(sem)), d / "boundary.tnsr")
        write_tensor(sem, d / "semantic.tnsr")
        with open(d / "meta.txt", "a", encoding="utf-8") as fh:
            fh.write(f"source={source.case_id}\n")
    print(f"wrote {cfg['synth.count']} synthetic cases to {target}")


def cmd_train_seg(cfg: ExperimentConfig, out: Path, args) -> None:
    mode = args.mode or cfg["aug.mode"]
    train, val, _ = _splits(cfg, out)
    gan_ckpt = None
    if mode == "proposed":
        gan_ckpt = _require_checkpoint(args, out / "gan" / "checkpoints" / "gan_final.ckpt")
    result = train_segmentation(train, val, cfg.augmentation(mode), cfg.seg_optimizer(), gan_checkpoint=gan_ckpt)
    target = out / f"seg_{mode}"
    target.mkdir(parents=True, exist_ok=True)
    save_unet(result.model, target / "unet.ckpt")
    result.write_log(target / "metrics.csv")
    print(f"segmentation checkpoint: {target / 'unet.ckpt'}")


def cmd_evaluate(cfg: ExperimentConfig, out: Path, args) -> None:
    if not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint pointing at a segmentation checkpoint")
    model = load_unet(_require_checkpoint(args, Path(args.checkpoint)))
    _, _, test = _splits(cfg, out)
    if not test:
        raise ConfigError("test split is empty")
    report = evaluate(model, test)
    target = out / "eval"
    target.mkdir(parents=True, exist_ok=True)
    report.write_csv(target / "report.csv")
    table = report.table(Path(args.checkpoint).parent.name or "model")
    (target / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def cmd_compare(cfg: ExperimentConfig, out: Path, args) -> None:
    train, val, test = _splits(cfg, out)
    if not test:
        raise ConfigError("test split is empty")
    target = out / "compare"
    target.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        gan_ckpt = _require_checkpoint(args, Path(args.checkpoint))
    else:
        gan_ckpt = _train_gan(cfg, train, target / "gan")
    gen = load_generator(gan_ckpt)
    seeds = [cfg["seed"] + k for k in range(args.seeds or cfg["compare.seeds"])]
    rows = {}
    lines = ["mode,seed,dice_complete,dice_core,dice_enh"]
    for mode, name in zip(AUGMENTATION_MODES, ("w/o DA", "w/ DA", "w/ Proposed")):
        aggs = []
        for s in seeds:
            res = train_segmentation(train, val, cfg.augmentation(mode), cfg.seg_optimizer(s), generator=gen)
            agg = evaluate(res.model, test).aggregate
            aggs.append(agg)
            lines.append(f"{mode},{s},{agg['complete_dice']:.6f},{agg['core_dice']:.6f},{agg['enhancing_dice']:.6f}")
        rows[name] = {k: float(np.mean([a[k] for a in aggs])) for k in aggs[0]}
    (target / "per_seed.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    table = format_table(rows)
    (target / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


COMMANDS = {
    "phantom": cmd_phantom,
    "train-gan": cmd_train_gan,
    "synth": cmd_synth,
    "train-seg": cmd_train_seg,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbgan-aug", description="GAN-learned augmentation for tumor segmentation")
    parser.add_argument("command", choices=[*COMMANDS, "dump-defaults"])
    parser.add_argument("--config", help="key=value experiment config")
    parser.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    parser.add_argument("--checkpoint", help="GAN or segmentation checkpoint")
    parser.add_argument("--mode", choices=AUGMENTATION_MODES)
    parser.add_argument("--seeds", type=int, help="number of seeds for compare")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "dump-defaults":
        sys.stdout.write(dump_defaults())
        return 0
    try:
        if not args.config:
            raise ConfigError("--config is required")
        cfg = ExperimentConfig.from_file(args.config)
        out_arg = args.out or os.environ.get(OUT_ENV)
        if not out_arg:
            raise ConfigError(f"--out is required (or set {OUT_ENV})")
        if args.seeds is not None and args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        out = Path(out_arg)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, CheckpointError, CaseFormatError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
