"""Model state, the two-stage training loops, prediction, and checkpoints."""
from __future__ import annotations

import copy as _copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import (
    BackboneState,
    DualEncoder,
    ZeroConvs,
    cd_forward,
    encode,
    init_parameters,
    make_trainable_copy,
    param_digest,
    set_trainable,
)
from .config import RunConfig, StageConfig, _merge, to_dict, validate
from .data import ALL_CONDITIONS, Condition, Dataset, DualModalSample, SaliencyMap, apply_condition, sample_condition
from .decoder import Decoder, decode, fuse
from .embedder import StubEmbedder, VisionLanguageEmbedder
from .lqa import LearnablePrompt, assess_t
from .losses import LossReport, total_loss

CHECKPOINT_VERSION = 1
GROUP_NAMES = ("theta", "theta_f", "theta_z", "omega", "decoder")

# forward topologies: plain branches, duplicate replaces, frozen + tapped duplicate
MODE_BASE = "base"
MODE_DUPLICATE = "duplicate"
MODE_DUPLICATE_TAP = "duplicate_tap"

_INIT_STREAM = 0x171


@dataclass
class StageTwoToggles:
    """Structural switches for second-stage training rows.

    copy duplicates the encoder branches, zconv routes the duplicate through
    zero-init 1x1 taps added to the frozen path (otherwise the duplicate
    replaces the original in the forward), freeze pins the original encoder,
    prompt and decoder, and md samples availability conditions per sample.
    """

    copy: bool = True
    zconv: bool = True
    freeze: bool = True
    md: bool = True

    def __post_init__(self):
        if self.zconv and not self.copy:
            raise ValueError("zconv requires copy")
        if self.freeze and not self.copy:
            raise ValueError("freeze requires copy (nothing would remain trainable)")


@dataclass
class ModelState:
    cfg: RunConfig
    stage: int
    mode: str
    backbone: BackboneState
    decoder: Decoder
    prompt: LearnablePrompt
    embedder: VisionLanguageEmbedder
    frozen_digests: dict[str, str] = field(default_factory=dict)


class GroundTruthOracle:
    """Reference stub whose predictions are the ground truth itself."""


def build_model(cfg: RunConfig) -> ModelState:
    """Fresh first-stage model; parameter draws are fixed by cfg.seed."""
    validate(cfg)
    theta = DualEncoder(cfg.model.widths, norm=cfg.model.norm)
    decoder = Decoder(cfg.model.widths, cbam_reduction=cfg.model.cbam_reduction)
    rng = np.random.default_rng([cfg.seed, _INIT_STREAM])
    init_parameters(theta, rng)
    init_parameters(decoder, rng)
    prompt = LearnablePrompt(cfg.lqa.embed_dim)
    embedder = StubEmbedder(
        dim=cfg.lqa.embed_dim,
        pool_grid=cfg.lqa.pool_grid,
        sharpness_weight=cfg.lqa.sharpness_weight,
        seed=cfg.lqa.embedder_seed,
    )
    return ModelState(
        cfg=cfg,
        stage=1,
        mode=MODE_BASE,
        backbone=BackboneState(theta=theta),
        decoder=decoder,
        prompt=prompt,
        embedder=embedder,
    )


def groups(state: ModelState) -> dict[str, nn.Module | None]:
    return {
        "theta": state.backbone.theta,
        "theta_f": state.backbone.theta_f,
        "theta_z": state.backbone.theta_z,
        "omega": state.prompt,
        "decoder": state.decoder,
    }


def state_digests(state: ModelState) -> dict[str, str]:
    return {name: param_digest(m) for name, m in groups(state).items() if m is not None}


def freeze(state: ModelState, group: str) -> None:
    """Disable gradients for a group and pin its current digest."""
    mod = _group_module(state, group)
    set_trainable(mod, False)
    state.frozen_digests[group] = param_digest(mod)


def assert_frozen(state: ModelState, group: str) -> None:
    """Error unless the group was frozen and its parameters are unchanged."""
    if group not in state.frozen_digests:
        raise RuntimeError(f"group {group!r} was never frozen")
    now = param_digest(_group_module(state, group))
    if now != state.frozen_digests[group]:
        raise RuntimeError(f"frozen group {group!r} changed: {now} != {state.frozen_digests[group]}")


def _group_module(state: ModelState, group: str) -> nn.Module:
    mods = groups(state)
    if group not in mods:
        raise ValueError(f"unknown group {group!r}, expected one of {GROUP_NAMES}")
    mod = mods[group]
    if mod is None:
        raise ValueError(f"group {group!r} is not present at stage {state.stage}")
    return mod


# ---------------------------------------------------------------------------
# forward paths


def _batch_tensors(samples: list[DualModalSample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    x1 = torch.from_numpy(np.stack([s.m1.pixels for s in samples]))
    x2 = torch.from_numpy(np.stack([s.m2.pixels for s in samples]))
    gt = torch.from_numpy(np.stack([s.gt.values[None] for s in samples]))
    return x1, x2, gt


def _batch_betas(
    state: ModelState, samples: list[DualModalSample], with_grad: bool
) -> tuple[torch.Tensor | float, torch.Tensor | float]:
    if not state.cfg.lqa.enabled:
        return 0.5, 0.5
    ctx = torch.enable_grad() if with_grad else torch.no_grad()
    with ctx:
        pairs = [
            assess_t(s.m1, s.m2, state.embedder, state.prompt, state.cfg.lqa.prompt_text)
            for s in samples
        ]
    b1 = torch.stack([p[0] for p in pairs]).to(torch.float32)
    b2 = torch.stack([p[1] for p in pairs]).to(torch.float32)
    return b1, b2


def _branch_features(state: ModelState, which: str, x: torch.Tensor):
    bb = state.backbone
    if state.mode == MODE_BASE:
        return encode(getattr(bb.theta, which), x)
    if state.mode == MODE_DUPLICATE:
        return encode(getattr(bb.theta_f, which), x)
    taps = bb.theta_z.m1 if which == "branch_m1" else bb.theta_z.m2
    return cd_forward(x, getattr(bb.theta, which), getattr(bb.theta_f, which), taps)


def forward_batch(state: ModelState, samples: list[DualModalSample], betas_with_grad: bool = False) -> torch.Tensor:
    """Prediction maps for already-conditioned samples, shape (B, 1, H, W)."""
    x1, x2, _ = _batch_tensors(samples)
    b1, b2 = _batch_betas(state, samples, with_grad=betas_with_grad)
    pyr1 = _branch_features(state, "branch_m1", x1)
    pyr2 = _branch_features(state, "branch_m2", x2)
    return decode(state.decoder, fuse(pyr1, pyr2, b1, b2))


def predict(state: ModelState | GroundTruthOracle, sample: DualModalSample, condition: Condition) -> SaliencyMap:
    """Saliency map for one sample under an availability condition."""
    if isinstance(state, GroundTruthOracle):
        return SaliencyMap(sample.gt.values.copy())
    conditioned = apply_condition(sample, condition)
    with torch.no_grad():
        pred = forward_batch(state, [conditioned])
    return SaliencyMap(pred[0, 0].numpy())


# ---------------------------------------------------------------------------
# training loops


class _TrainLog:
    HEADER = "epoch,step,n_complete,n_missing_m1,n_missing_m2,bce,iou,total,lr"

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        if self.path is not None and (not self.path.exists() or self.path.stat().st_size == 0):
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(self.HEADER + "\n")

    def row(self, epoch: int, step: int, counts: dict[Condition, int], report: LossReport, lr: float) -> None:
        if self.path is None:
            return
        with self.path.open("a") as fh:
            fh.write(
                f"{epoch},{step},{counts.get(Condition.COMPLETE, 0)},"
                f"{counts.get(Condition.MISSING_M1, 0)},{counts.get(Condition.MISSING_M2, 0)},"
                f"{report.bce:.9g},{report.iou:.9g},{report.total:.9g},{lr:.9g}\n"
            )


def _epoch_batches(n: int, batch_size: int, seed_key: list[int]):
    perm = np.random.default_rng(seed_key).permutation(n)
    for i in range(0, n, batch_size):
        yield [int(j) for j in perm[i : i + batch_size]]


def _run_epochs(
    state: ModelState,
    dataset: Dataset,
    stage_cfg: StageConfig,
    params: list[torch.Tensor],
    log: _TrainLog,
    stage_tag: int,
    betas_with_grad: bool,
    md: bool,
    verify_frozen: bool,
) -> None:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    opt = torch.optim.Adam(
        params,
        lr=stage_cfg.lr,
        betas=(stage_cfg.adam_beta1, stage_cfg.adam_beta2),
        eps=stage_cfg.adam_eps,
    )
    dist = stage_cfg.distribution()
    cond_rng = np.random.default_rng([state.cfg.seed, stage_tag, 0xC0])
    step = 0
    for epoch in range(stage_cfg.epochs):
        lr = stage_cfg.lr_at(epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        for idx in _epoch_batches(len(dataset), stage_cfg.batch_size, [state.cfg.seed, stage_tag, epoch]):
            batch = [dataset[i] for i in idx]
            if md:
                conds = [sample_condition(cond_rng, dist) for _ in batch]
            else:
                conds = [Condition.COMPLETE] * len(batch)
            conditioned = [apply_condition(s, c) for s, c in zip(batch, conds)]
            pred = forward_batch(state, conditioned, betas_with_grad=betas_with_grad)
            _, _, gt = _batch_tensors(conditioned)
            loss, report = total_loss(pred, gt)
            if not math.isfinite(report.total):
                raise RuntimeError(f"non-finite loss at epoch {epoch} step {step}: {report}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            counts = {c: conds.count(c) for c in ALL_CONDITIONS}
            log.row(epoch, step, counts, report, lr)
            step += 1
        if verify_frozen:
            for group in list(state.frozen_digests):
                assert_frozen(state, group)


def train_stage1(cfg: RunConfig, dataset: Dataset, log_path: str | Path | None = None) -> ModelState:
    """First stage: branches, decoder, and prompt trained on complete pairs."""
    state = build_model(cfg)
    params = list(state.backbone.theta.parameters()) + list(state.decoder.parameters())
    if cfg.lqa.enabled:
        params += list(state.prompt.parameters())
    _run_epochs(
        state,
        dataset,
        cfg.stage1,
        params,
        _TrainLog(log_path),
        stage_tag=1,
        betas_with_grad=cfg.lqa.enabled,
        md=False,
        verify_frozen=False,
    )
    return state


def train_stage2(
    state: ModelState,
    dataset: Dataset,
    toggles: StageTwoToggles | None = None,
    log_path: str | Path | None = None,
) -> ModelState:
    """Second stage: condition-aware fine-tuning; the input state is untouched.

    The default toggles give the full scheme: frozen originals, duplicated
    branches feeding zero-init taps, sampled availability conditions. The
    prompt trains only in stage one and stays frozen in every variant.
    """
    toggles = toggles or StageTwoToggles()
    work = _copy.deepcopy(state)
    work.stage = 2

    if toggles.copy:
        work.backbone = make_trainable_copy(work.backbone)
        work.mode = MODE_DUPLICATE_TAP if toggles.zconv else MODE_DUPLICATE
    else:
        work.mode = MODE_BASE

    freeze(work, "omega")
    if toggles.freeze:
        freeze(work, "theta")
        freeze(work, "decoder")
    else:
        set_trainable(work.backbone.theta, True)
        set_trainable(work.decoder, True)

    params = [p for m in groups(work).values() if m is not None for p in m.parameters() if p.requires_grad]
    if not params:
        raise ValueError("no trainable parameters for the requested toggles")
    _run_epochs(
        work,
        dataset,
        work.cfg.stage2,
        params,
        _TrainLog(log_path),
        stage_tag=2,
        betas_with_grad=False,
        md=toggles.md,
        verify_frozen=True,
    )
    return work


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """Single-archive checkpoint with per-group parameter digests."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "stage": state.stage,
        "mode": state.mode,
        "seed": state.cfg.seed,
        "config": to_dict(state.cfg),
        "groups": {name: m.state_dict() for name, m in groups(state).items() if m is not None},
        "digests": state_digests(state),
        "frozen_digests": dict(state.frozen_digests),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> ModelState:
    payload = torch.load(Path(path), weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    cfg = validate(_merge(RunConfig(), payload["config"]))
    state = build_model(cfg)
    state.stage = payload["stage"]
    state.mode = payload["mode"]
    state.frozen_digests = dict(payload["frozen_digests"])

    if "theta_f" in payload["groups"]:
        state.backbone = BackboneState(
            theta=state.backbone.theta,
            theta_f=DualEncoder(cfg.model.widths, norm=cfg.model.norm),
            theta_z=ZeroConvs(cfg.model.widths),
        )
    mods = groups(state)
    for name, sd in payload["groups"].items():
        mods[name].load_state_dict(sd)
    for name, stored in payload["digests"].items():
        now = param_digest(mods[name])
        if now != stored:
            raise RuntimeError(f"checkpoint digest mismatch for group {name!r}: {now} != {stored}")
    for name in state.frozen_digests:
        set_trainable(mods[name], False)
    if state.backbone.has_copy and "theta" in state.frozen_digests:
        set_trainable(state.backbone.theta, False)
    return state
