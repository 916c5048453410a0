"""Encoder branches, trainable duplicates, zero taps, and parameter helpers."""

import numpy as np
import pytest
import torch

from cola.backbone import (
    BackboneState,
    DualEncoder,
    EncoderBranch,
    ZeroConvs,
    cd_forward,
    encode,
    init_parameters,
    make_trainable_copy,
    param_digest,
    set_trainable,
)

WIDTHS = (4, 8, 16)


def _branch(seed=0, norm="none"):
    branch = EncoderBranch(WIDTHS, norm=norm)
    init_parameters(branch, np.random.default_rng(seed))
    return branch


def test_pyramid_shapes_halve_per_level():
    branch = _branch()
    assert branch.levels == 3
    torch.manual_seed(3)
    pyr = encode(branch, torch.rand(2, 3, 32, 32))
    assert [tuple(f.shape) for f in pyr] == [(2, 4, 16, 16), (2, 8, 8, 8), (2, 16, 4, 4)]


def test_zero_input_gives_zero_pyramid():
    for norm in ("none", "group"):
        pyr = encode(_branch(norm=norm), torch.zeros(1, 3, 32, 32))
        for f in pyr:
            assert torch.all(f == 0)


def test_positive_homogeneity_without_norm():
    branch = _branch(1)
    torch.manual_seed(0)
    x = torch.rand(1, 3, 32, 32)
    base = encode(branch, x)
    doubled = encode(branch, 2.0 * x)
    for f, g in zip(base, doubled):
        assert torch.equal(2.0 * f, g)  # scaling by 2 is exact in float


def test_encode_validation():
    branch = _branch()
    with pytest.raises(ValueError):
        encode(branch, torch.zeros(3, 32, 32))
    with pytest.raises(ValueError):
        encode(branch, torch.zeros(1, 3, 20, 20))  # 20 % 8 != 0


def test_branch_constructor_validation():
    with pytest.raises(ValueError):
        EncoderBranch(())
    with pytest.raises(ValueError):
        EncoderBranch((4,), norm="batch")


def test_single_stage_hand_computation():
    branch = EncoderBranch((1,))
    with torch.no_grad():
        w = torch.zeros(1, 3, 3, 3)
        w[0, 0, 1, 1] = 1.0  # pick out channel 0, identity kernel
        branch.stages[0][0].weight.copy_(w)
    x = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).expand(3, 2, 2).clone()[None]
    with torch.no_grad():
        pyr = encode(branch, x)
        assert pyr[0].shape == (1, 1, 1, 1)
        assert float(pyr[0]) == pytest.approx(2.5)  # avg pool of channel 0

        neg = encode(branch, -x)  # ReLU clips the negated copy to zero
        assert float(neg[0]) == 0.0


def test_dual_encoder_branches_are_independent():
    enc = DualEncoder(WIDTHS)
    init_parameters(enc, np.random.default_rng(0))
    assert enc.widths == WIDTHS
    w1 = enc.branch_m1.stages[0][0].weight
    w2 = enc.branch_m2.stages[0][0].weight
    assert not torch.equal(w1, w2)


def test_zero_convs_start_exactly_at_zero():
    taps = ZeroConvs(WIDTHS)
    assert len(taps.m1) == len(taps.m2) == len(WIDTHS)
    for conv in list(taps.m1) + list(taps.m2):
        assert torch.all(conv.weight == 0)
        assert torch.all(conv.bias == 0)


def test_make_trainable_copy_contract():
    enc = DualEncoder(WIDTHS)
    init_parameters(enc, np.random.default_rng(3))
    state = BackboneState(theta=enc)
    assert not state.has_copy

    copied = make_trainable_copy(state)
    assert copied.has_copy
    assert copied.theta is enc
    for p in copied.theta.parameters():
        assert not p.requires_grad
    for p in copied.theta_f.parameters():
        assert p.requires_grad
    for p in copied.theta_z.parameters():
        assert p.requires_grad
    # duplicate starts as an exact parameter copy of the original
    assert param_digest(copied.theta_f) == param_digest(enc)
    assert copied.theta_f is not enc

    with pytest.raises(ValueError):
        make_trainable_copy(copied)


def test_cd_forward_with_zero_taps_matches_the_frozen_path():
    enc = DualEncoder(WIDTHS)
    init_parameters(enc, np.random.default_rng(4))
    state = make_trainable_copy(BackboneState(theta=enc))
    torch.manual_seed(1)
    x = torch.rand(2, 3, 32, 32)
    base = encode(enc.branch_m1, x)
    tapped = cd_forward(x, enc.branch_m1, state.theta_f.branch_m1, state.theta_z.m1)
    for f, g in zip(base, tapped):
        assert torch.equal(f, g)


def test_cd_forward_hand_computed_tap():
    frozen = EncoderBranch((1,))
    init_parameters(frozen, np.random.default_rng(5))
    state = make_trainable_copy(BackboneState(theta=DualEncoder((1,))))
    duplicate = frozen  # reuse so base and extra paths are identical
    tap = state.theta_z.m1
    with torch.no_grad():
        tap[0].weight.fill_(0.5)
        tap[0].bias.fill_(0.25)
    torch.manual_seed(2)
    x = torch.rand(1, 3, 16, 16)
    base = encode(frozen, x)[0]
    out = cd_forward(x, frozen, duplicate, tap)[0]
    assert torch.allclose(out, 1.5 * base + 0.25, atol=1e-7)


def test_param_digest_sensitivity():
    a = _branch(6)
    b = _branch(6)
    assert param_digest(a) == param_digest(b)
    with torch.no_grad():
        b.stages[0][0].weight[0, 0, 0, 0] += 1e-3
    assert param_digest(a) != param_digest(b)


def test_init_parameters_statistics():
    branch = EncoderBranch((32, 32), norm="group")
    init_parameters(branch, np.random.default_rng(7))
    again = EncoderBranch((32, 32), norm="group")
    init_parameters(again, np.random.default_rng(7))
    assert param_digest(branch) == param_digest(again)

    w = branch.stages[1][0].weight.detach()  # 32 -> 32 conv, fan_in = 32 * 9
    expected = float(np.sqrt(2.0 / (32 * 9)))
    assert abs(float(w.std()) - expected) / expected < 0.25
    gn = branch.stages[0][1]
    assert torch.all(gn.weight == 1.0)
    assert torch.all(gn.bias == 0.0)


def test_set_trainable_toggles_every_parameter():
    branch = _branch()
    set_trainable(branch, False)
    assert all(not p.requires_grad for p in branch.parameters())
    set_trainable(branch, True)
    assert all(p.requires_grad for p in branch.parameters())
