import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smforge.errors import ConfigError, ShapeError
from smforge.losses import (
    LOSSES, LossConfig, PatchStats, finite_diff_grad, fsc_loss, get_loss, grad_rel_error, l1_loss,
    l2_loss, l_ad, patch_stats, s_ad, ssim, ssim_ad,
)

FD_TOL = {"l1": 1e-6, "l2": 1e-6, "ssim": 1e-4, "ssim_ad": 1e-4, "fsc": 1e-4}


def test_l1_hand_values():
    gt = np.zeros((2, 2))
    assert l1_loss(gt, gt).value == 0 and not l1_loss(gt, gt).grad.any()
    ev = l1_loss(gt + 2, gt)
    assert ev.value == 2
    np.testing.assert_array_equal(ev.grad, np.full((2, 2), 0.25))


def test_l2_hand_values():
    gt = np.zeros((2, 2))
    assert l2_loss(gt, gt).value == 0
    assert l2_loss(gt + 2, gt).value == 4


def test_l_ad_examples():
    cfg = LossConfig()
    assert l_ad(PatchStats.scalar(0.3, 0.3, 0, 0, 0), cfg) == 0
    assert l_ad(PatchStats.scalar(1, 0, 0, 0, 0), cfg) == pytest.approx(1 / (1 + 1e-4), rel=1e-15)
    assert l_ad(PatchStats.scalar(0, 0, 0, 0, 0), LossConfig(c1=5.0)) == 0


def test_s_ad_examples(rng):
    cfg = LossConfig()
    x = rng.standard_normal((8, 8))
    assert s_ad(patch_stats(2 * x + 3, x, cfg), cfg).max() <= 1e-12
    var = 0.7
    expected = 2 * var / (2 * var + cfg.c2)
    assert s_ad(PatchStats.scalar(0, 0, var, var, -var), cfg) == pytest.approx(expected, rel=1e-14)
    const = np.full((8, 8), 4.0)
    assert s_ad(patch_stats(const, const + 1, cfg), cfg).max() == 0


def test_ssim_examples(rng):
    gt = rng.uniform(0, 1, (16, 16))
    assert abs(ssim(gt, gt).value) <= 1e-10
    shifted = ssim(gt + 5.0, gt)
    st_ = patch_stats(gt + 5.0, gt, LossConfig())
    lum = (2 * st_.mu_x * st_.mu_y + 1e-4) / (st_.mu_x**2 + st_.mu_y**2 + 1e-4)
    assert lum.max() < 1 and shifted.value > 0


def test_ssim_ad_linear_invariance_of_structure_product(rng):
    # with the bare per-patch product, an affine rescaling of gt is invisible
    cfg = LossConfig(patch_combine="product")
    gt = rng.uniform(0, 1, (16, 16))
    pred = 2.0 * gt  # positive scale, zero offset: S_AD = 0 on every patch
    assert ssim_ad(pred, gt, cfg).value <= 1e-12
    assert ssim_ad(gt, gt, cfg).value == 0


def test_fsc_constant_shift_is_penalized(rng):
    cfg = LossConfig()
    gt = rng.uniform(0, 1, (8, 8))
    pred = gt + 0.3
    assert s_ad(patch_stats(pred, gt, cfg), cfg).max() <= 1e-12
    assert l_ad(patch_stats(pred, gt, cfg), cfg).min() > 0
    assert l1_loss(pred, gt).value == pytest.approx(0.3)
    assert fsc_loss(pred, gt, cfg).value > 0
    assert fsc_loss(gt, gt, cfg).value == 0


@pytest.mark.parametrize("name", sorted(LOSSES))
@pytest.mark.parametrize("cfg", [LossConfig(), LossConfig(data_range=(-1.0, 1.0)), LossConfig(window=4, stride=2)],
                         ids=["default", "ranged", "overlapping"])
def test_identity_value_and_gradient(name, cfg, rng):
    x = rng.uniform(-1, 1, (2, 16, 16))
    ev = LOSSES[name](x, x, cfg)
    assert abs(ev.value) <= 1e-10
    assert np.abs(ev.grad).max() <= 1e-10


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_gradient_matches_finite_differences(name, rng):
    cfg = LossConfig()
    size = 8 if name in ("l1", "l2") else 16
    pred, gt = rng.uniform(0, 1, (size, size)), rng.uniform(0, 1, (size, size))
    fn = LOSSES[name]
    num = finite_diff_grad(lambda p, g: fn(p, g, cfg), pred, gt)
    assert grad_rel_error(fn(pred, gt, cfg).grad, num) <= FD_TOL[name]


@pytest.mark.parametrize("name", ["ssim", "ssim_ad", "fsc"])
def test_gradient_batched_overlapping_ranged(name, rng):
    cfg = LossConfig(window=4, stride=3, data_range=(-1.0, 1.0))
    pred, gt = rng.uniform(-1, 1, (2, 10, 10)), rng.uniform(-1, 1, (2, 10, 10))
    fn = LOSSES[name]
    num = finite_diff_grad(lambda p, g: fn(p, g, cfg), pred, gt)
    assert grad_rel_error(fn(pred, gt, cfg).grad, num) <= 1e-4


def test_fd_helper_self_consistency(rng):
    pred, gt = rng.standard_normal((6, 6)), rng.standard_normal((6, 6))
    num = finite_diff_grad(l2_loss, pred, gt)
    assert grad_rel_error(l2_loss(pred, gt).grad, num) <= 1e-6
    num = finite_diff_grad(fsc_loss, rng.uniform(0, 1, (8, 8)), rng.uniform(0, 1, (8, 8)))
    assert np.all(np.isfinite(num))
    for eps in (1e-9, 1e-2):
        with pytest.raises(ValueError):
            finite_diff_grad(l2_loss, pred, gt, eps)


unit = st.floats(0.0, 1.0, allow_nan=False)


@given(arrays(np.float64, (8, 8), elements=unit), arrays(np.float64, (8, 8), elements=unit))
def test_losses_nonnegative(a, b):
    for name, fn in LOSSES.items():
        assert fn(a, b).value >= -1e-12, name


@given(arrays(np.float64, (8, 8), elements=unit), st.floats(0.1, 10), st.floats(-5, 5))
def test_structure_term_kernel_is_positive_affine(x, a, b):
    cfg = LossConfig()
    assert s_ad(patch_stats(a * x + b, x, cfg), cfg).max() <= 1e-9


def test_guards(rng):
    with pytest.raises(ShapeError):
        l1_loss(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))  # window 8 does not fit
    with pytest.raises(ConfigError):
        LossConfig(patch_combine="sum")
    with pytest.raises(ConfigError):
        LossConfig(data_range=(1.0, 1.0))
    with pytest.raises(ConfigError):
        get_loss("huber")
