"""Command line entry points: synth, train, eval, ablate."""
from __future__ import annotations

import argparse
import hashlib
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import ablate as ablate_mod
from .config import RunConfig, config_digest, dump_yaml, load_config
from .data import ALL_CONDITIONS, load_dataset, save_dataset, synth_dataset
from .metrics import evaluate
from .report import render_loss_curve, write_ablation, write_report
from .trainer import (
    GroundTruthOracle,
    load_checkpoint,
    predict,
    save_checkpoint,
    state_digests,
    train_stage1,
    train_stage2,
)


def make_benchmark(cfg: RunConfig):
    """Seeded train/test pair: train carries the configured corruption, test is clean."""
    d = cfg.data
    train = synth_dataset(
        cfg.seed, d.train_samples, d.size, d.noise_fraction, d.noise_kind, d.noise_level, split="train"
    )
    test = synth_dataset(cfg.seed + 1, d.test_samples, d.size, 0.0, split="test")
    return train, test


def _resolve_cfg(args) -> RunConfig:
    overrides = {"seed": args.seed} if args.seed is not None else None
    return load_config(args.config, args.profile, overrides)


def _claim_out_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {path} is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def cmd_synth(args) -> int:
    cfg = _resolve_cfg(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"output directory {out} is not empty (use --force to overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    train, test = make_benchmark(cfg)

    # build in a scratch sibling, then swap in: a failed run leaves nothing behind
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        save_dataset(train, tmp / "train", cfg.data.folders)
        save_dataset(test, tmp / "test", cfg.data.folders)
        dump_yaml(cfg, tmp / "config.yaml")
        (tmp / "digest.txt").write_text(_tree_digest(tmp) + "\n")
        if out.exists():
            shutil.rmtree(out)
        tmp.replace(out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    print(f"dataset digest: {(out / 'digest.txt').read_text().strip()}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    _claim_out_dir(out, args.force)
    if args.stage == 1:
        cfg = _resolve_cfg(args)
        ds = load_dataset(args.data, cfg.data.size, cfg.data.folders)
        log = out / "train_stage1.csv"
        state = train_stage1(cfg, ds, log_path=log)
        ckpt = out / "stage1.pt"
    else:
        if not getattr(args, "from_ckpt", None):
            raise ValueError("--stage 2 requires --from <stage-1 checkpoint>")
        state = load_checkpoint(args.from_ckpt)
        if args.config or args.profile or args.seed is not None:
            cli_cfg = _resolve_cfg(args)  # architecture stays with the checkpoint
            state.cfg = replace(state.cfg, seed=cli_cfg.seed, stage2=cli_cfg.stage2)
        cfg = state.cfg
        ds = load_dataset(args.data, cfg.data.size, cfg.data.folders)
        log = out / "train_stage2.csv"
        state = train_stage2(state, ds, log_path=log)
        ckpt = out / "stage2.pt"

    save_checkpoint(state, ckpt)
    dump_yaml(cfg, out / "config.yaml")
    render_loss_curve(log, out / f"{log.stem}_curve.png")
    digests = state_digests(state)
    for name, value in sorted(digests.items()):
        print(f"{name}: {value}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    _claim_out_dir(out, args.force)
    if args.oracle:
        cfg = _resolve_cfg(args)
        state = GroundTruthOracle()
        meta = {"model": "oracle"}
    else:
        if not args.ckpt:
            raise ValueError("eval needs --ckpt <checkpoint> or --oracle")
        state = load_checkpoint(args.ckpt)
        cfg = state.cfg
        meta = {"model": str(args.ckpt)}
        meta.update({f"digest_{k}": v for k, v in sorted(state_digests(state).items())})
    meta["config_digest"] = config_digest(cfg)

    ds = load_dataset(args.data, cfg.data.size, cfg.data.folders)
    report = evaluate(state, ds, meta=meta)
    write_report(report, out)
    dump_yaml(cfg, out / "config.yaml")
    for cond in ALL_CONDITIONS:
        cond_dir = out / "maps" / cond.value
        cond_dir.mkdir(parents=True, exist_ok=True)
        for sample in ds:
            pred = predict(state, sample, cond)
            arr = np.round(np.clip(pred.values, 0, 1) * 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(cond_dir / f"{sample.id}.png")
    print((out / "report.txt").read_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_cfg(args)
    out = Path(args.out)
    _claim_out_dir(out, args.force)
    root = Path(args.data)
    train = load_dataset(root / "train", cfg.data.size, cfg.data.folders)
    test = load_dataset(root / "test", cfg.data.size, cfg.data.folders)
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    rows = ablate_mod.run_matrix(args.matrix, cfg, train, test, log_dir=logs)
    write_ablation(rows, out, args.matrix)
    dump_yaml(cfg, out / "config.yaml")
    print((out / "ablation.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cola",
        description="Robust dual-modal salient object detection at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="YAML config overrides")
        p.add_argument("--profile", default=None, choices=["desk", "paper"], help="base profile (default desk)")
        p.add_argument("--seed", type=int, default=None, help="run seed (COLA_SEED env wins)")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    p = sub.add_parser("synth", help="generate the seeded synthetic benchmark")
    common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--data", required=True, help="dataset split directory (M1/M2/GT)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--stage", type=int, choices=[1, 2], required=True)
    p.add_argument("--from", dest="from_ckpt", default=None, help="stage-1 checkpoint (stage 2 only)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint under all conditions")
    common(p)
    p.add_argument("--ckpt", default=None, help="checkpoint to evaluate")
    p.add_argument("--oracle", action="store_true", help="score the ground-truth oracle instead")
    p.add_argument("--data", required=True, help="dataset split directory (M1/M2/GT)")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score an ablation matrix")
    common(p)
    p.add_argument("--matrix", required=True, choices=sorted(ablate_mod.MATRICES))
    p.add_argument("--data", required=True, help="benchmark root holding train/ and test/")
    p.add_argument("--out", required=True, help="ablation output directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
