"""Model assembly, two-stage training, freeze bookkeeping, and checkpoints."""

import copy
import csv
import dataclasses

import numpy as np
import pytest
import torch

from conftest import MICRO_OVERRIDES

from cola.backbone import ZeroConvs, param_digest
from cola.config import load_config
from cola.data import ALL_CONDITIONS, Condition, Dataset
from cola.losses import LossReport
from cola.trainer import (
    CHECKPOINT_VERSION,
    GROUP_NAMES,
    GroundTruthOracle,
    StageTwoToggles,
    _batch_betas,
    assert_frozen,
    build_model,
    forward_batch,
    freeze,
    load_checkpoint,
    predict,
    save_checkpoint,
    state_digests,
    train_stage1,
    train_stage2,
)


def _with_stage2_epochs(cfg, epochs):
    return dataclasses.replace(cfg, stage2=dataclasses.replace(cfg.stage2, epochs=epochs))


def _max_pred_diff(a, b, dataset, n=4):
    worst = 0.0
    for s in list(dataset)[:n]:
        for cond in ALL_CONDITIONS:
            pa = predict(a, s, cond).values
            pb = predict(b, s, cond).values
            worst = max(worst, float(np.abs(pa - pb).max()))
    return worst


def test_build_model_is_deterministic(micro_cfg):
    a = build_model(micro_cfg)
    b = build_model(micro_cfg)
    assert state_digests(a) == state_digests(b)
    assert a.stage == 1 and a.mode == "base"
    assert not a.backbone.has_copy
    assert set(state_digests(a)) == {"theta", "omega", "decoder"}
    assert set(GROUP_NAMES) == {"theta", "theta_f", "theta_z", "omega", "decoder"}

    c = build_model(dataclasses.replace(micro_cfg, seed=99))
    assert state_digests(c)["theta"] != state_digests(a)["theta"]


def test_stage_two_toggle_validation():
    assert StageTwoToggles() == StageTwoToggles(copy=True, zconv=True, freeze=True, md=True)
    with pytest.raises(ValueError):
        StageTwoToggles(copy=False, zconv=True, freeze=False, md=True)
    with pytest.raises(ValueError):
        StageTwoToggles(copy=False, zconv=False, freeze=True, md=True)


def test_zero_epoch_stage_two_is_an_exact_identity(micro_stage1, micro_benchmark):
    base = copy.deepcopy(micro_stage1)
    base.cfg = _with_stage2_epochs(base.cfg, 0)
    s2 = train_stage2(base, micro_benchmark[0])
    assert s2.stage == 2 and s2.mode == "duplicate_tap"
    assert _max_pred_diff(micro_stage1, s2, micro_benchmark[0]) == 0.0


def test_stage_two_trains_only_the_duplicate_path(micro_stage1, micro_benchmark):
    before = state_digests(micro_stage1)
    s2 = train_stage2(micro_stage1, micro_benchmark[0])
    after = state_digests(s2)

    for group in ("theta", "omega", "decoder"):
        assert after[group] == before[group]
        assert_frozen(s2, group)
    assert after["theta_f"] != before["theta"]  # the copy moved
    fresh_taps = param_digest(ZeroConvs(s2.cfg.model.widths))
    assert after["theta_z"] != fresh_taps  # the taps moved off zero

    # the input state is untouched
    assert state_digests(micro_stage1) == before
    assert not micro_stage1.backbone.has_copy
    assert micro_stage1.stage == 1


def test_dropout_only_variant_trains_the_base_model(micro_stage1, micro_benchmark):
    toggles = StageTwoToggles(copy=False, zconv=False, freeze=False, md=True)
    s2 = train_stage2(micro_stage1, micro_benchmark[0], toggles=toggles)
    before = state_digests(micro_stage1)
    after = state_digests(s2)
    assert s2.mode == "base"
    assert not s2.backbone.has_copy
    assert after["theta"] != before["theta"]
    assert after["decoder"] != before["decoder"]
    assert after["omega"] == before["omega"]


def test_prompt_is_frozen_in_every_stage_two_variant(micro_stage1, micro_benchmark):
    quick = copy.deepcopy(micro_stage1)
    quick.cfg = _with_stage2_epochs(quick.cfg, 1)
    variants = [
        StageTwoToggles(),
        StageTwoToggles(copy=False, zconv=False, freeze=False, md=True),
        StageTwoToggles(copy=True, zconv=False, freeze=False, md=False),
        StageTwoToggles(copy=True, zconv=True, freeze=False, md=True),
    ]
    omega_before = state_digests(micro_stage1)["omega"]
    for toggles in variants:
        s2 = train_stage2(quick, micro_benchmark[0], toggles=toggles)
        assert state_digests(s2)["omega"] == omega_before
        assert not s2.prompt.omega.requires_grad
        assert_frozen(s2, "omega")


def test_disabled_lqa_uses_constant_half_weights(micro_benchmark):
    overrides = {**MICRO_OVERRIDES, "lqa": {**MICRO_OVERRIDES["lqa"], "enabled": False}}
    overrides["stage1"] = {**MICRO_OVERRIDES["stage1"], "epochs": 1}
    cfg = load_config(profile="desk", overrides=overrides, env={})
    state = train_stage1(cfg, micro_benchmark[0])
    assert _batch_betas(state, list(micro_benchmark[0])[:2], with_grad=False) == (0.5, 0.5)
    # the unused prompt never moves off its zero init
    assert state_digests(state)["omega"] == state_digests(build_model(cfg))["omega"]


def test_forward_batch_and_predict_contracts(micro_stage1, micro_benchmark):
    samples = list(micro_benchmark[0])[:2]
    with torch.no_grad():
        out = forward_batch(micro_stage1, samples)
    assert out.shape == (2, 1, 32, 32)
    assert float(out.min()) > 0.0 and float(out.max()) < 1.0

    pred = predict(micro_stage1, samples[0], Condition.COMPLETE)
    assert pred.values.shape == (32, 32)
    assert pred.values.dtype == np.float32
    again = predict(micro_stage1, samples[0], Condition.COMPLETE)
    assert np.array_equal(pred.values, again.values)
    missing = predict(micro_stage1, samples[0], Condition.MISSING_M1)
    assert not np.array_equal(pred.values, missing.values)


def test_oracle_predicts_the_ground_truth(micro_benchmark):
    s = micro_benchmark[1][0]
    pred = predict(GroundTruthOracle(), s, Condition.MISSING_M2)
    assert np.array_equal(pred.values, s.gt.values)
    assert not np.shares_memory(pred.values, s.gt.values)


def test_checkpoint_roundtrip(tmp_path, micro_stage1, micro_benchmark):
    path = tmp_path / "stage1.pt"
    save_checkpoint(micro_stage1, path)
    loaded = load_checkpoint(path)
    assert state_digests(loaded) == state_digests(micro_stage1)
    assert loaded.cfg == micro_stage1.cfg
    assert loaded.stage == 1 and loaded.mode == "base"
    assert _max_pred_diff(micro_stage1, loaded, micro_benchmark[0], n=2) == 0.0


def test_checkpoint_roundtrip_stage_two(tmp_path, micro_stage1, micro_benchmark):
    s2 = train_stage2(micro_stage1, micro_benchmark[0])
    path = tmp_path / "stage2.pt"
    save_checkpoint(s2, path)
    loaded = load_checkpoint(path)
    assert loaded.backbone.has_copy
    assert loaded.mode == "duplicate_tap"
    assert state_digests(loaded) == state_digests(s2)
    assert _max_pred_diff(s2, loaded, micro_benchmark[0], n=2) == 0.0
    # frozen groups stay frozen after a reload
    for group in ("theta", "omega", "decoder"):
        assert_frozen(loaded, group)
    assert not loaded.prompt.omega.requires_grad
    assert all(not p.requires_grad for p in loaded.decoder.parameters())
    assert all(not p.requires_grad for p in loaded.backbone.theta.parameters())


def test_checkpoint_digest_mismatch_is_fatal(tmp_path, micro_stage1):
    path = tmp_path / "ok.pt"
    save_checkpoint(micro_stage1, path)
    payload = torch.load(path, weights_only=False)
    payload["digests"]["decoder"] = "0" * 64
    bad = tmp_path / "bad.pt"
    torch.save(payload, bad)
    with pytest.raises(RuntimeError, match="digest mismatch"):
        load_checkpoint(bad)


def test_checkpoint_version_guard(tmp_path, micro_stage1):
    path = tmp_path / "ok.pt"
    save_checkpoint(micro_stage1, path)
    payload = torch.load(path, weights_only=False)
    assert payload["format_version"] == CHECKPOINT_VERSION
    payload["format_version"] = 99
    bad = tmp_path / "future.pt"
    torch.save(payload, bad)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(bad)


def test_stage_one_training_is_deterministic(micro_cfg, micro_benchmark):
    a = train_stage1(micro_cfg, micro_benchmark[0])
    b = train_stage1(micro_cfg, micro_benchmark[0])
    assert state_digests(a) == state_digests(b)


def test_train_log_format(tmp_path, micro_cfg, micro_benchmark, micro_stage1):
    log1 = tmp_path / "s1.csv"
    train_stage1(micro_cfg, micro_benchmark[0], log_path=log1)
    lines = log1.read_text().splitlines()
    assert lines[0] == "epoch,step,n_complete,n_missing_m1,n_missing_m2,bce,iou,total,lr"
    assert len(lines) == 1 + 2 * 3  # epochs x ceil(12 / 4) batches
    with log1.open() as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        assert row["n_complete"] == "4"  # first stage sees complete pairs only
        assert row["n_missing_m1"] == "0" and row["n_missing_m2"] == "0"
        assert float(row["lr"]) == pytest.approx(micro_cfg.stage1.lr_at(int(row["epoch"])))
        assert float(row["total"]) == pytest.approx(
            float(row["bce"]) + float(row["iou"]), abs=1e-6
        )

    log2 = tmp_path / "s2.csv"
    train_stage2(micro_stage1, micro_benchmark[0], log_path=log2)
    with log2.open() as fh:
        rows = list(csv.DictReader(fh))
    counts = [
        (int(r["n_complete"]), int(r["n_missing_m1"]), int(r["n_missing_m2"])) for r in rows
    ]
    assert all(sum(c) == 4 for c in counts)
    assert sum(c[1] + c[2] for c in counts) > 0  # sampled conditions showed up


def test_training_rejects_empty_datasets(micro_cfg):
    with pytest.raises(ValueError):
        train_stage1(micro_cfg, Dataset(samples=[], split="empty"))


def test_non_finite_loss_aborts_training(monkeypatch, micro_cfg, micro_benchmark):
    def poisoned(pred, gt):
        bad = float("nan")
        return torch.tensor(bad, requires_grad=True), LossReport(bce=bad, iou=0.0)

    monkeypatch.setattr("cola.trainer.total_loss", poisoned)
    with pytest.raises(RuntimeError, match="non-finite"):
        train_stage1(micro_cfg, micro_benchmark[0])


def test_freeze_bookkeeping(micro_cfg):
    state = build_model(micro_cfg)
    with pytest.raises(RuntimeError, match="never frozen"):
        assert_frozen(state, "decoder")
    freeze(state, "decoder")
    assert_frozen(state, "decoder")
    with torch.no_grad():
        state.decoder.head.weight.add_(1.0)
    with pytest.raises(RuntimeError, match="changed"):
        assert_frozen(state, "decoder")
    with pytest.raises(ValueError, match="unknown group"):
        freeze(state, "bogus")
    with pytest.raises(ValueError, match="not present"):
        freeze(state, "theta_f")
