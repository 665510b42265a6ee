import numpy as np
import pytest

from phasorfields import metrics


def test_psnr_identical_hits_cap():
    img = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert metrics.psnr(img, img) == pytest.approx(metrics.PSNR_CAP_DB)


def test_psnr_known_values():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert metrics.psnr(a, b) == pytest.approx(20.0)
    assert metrics.psnr(a, np.ones((4, 4))) == pytest.approx(0.0)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        metrics.psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_depth_mse():
    gt = np.array([1.0, 2.0, 3.0])
    assert metrics.depth_mse(gt, gt) == pytest.approx(0.0)
    pred = gt + 0.1
    assert metrics.depth_mse(pred, gt) == pytest.approx(0.01)
    mask = np.array([True, False, False])
    assert metrics.depth_mse(gt + np.array([0.2, 9.0, 9.0]), gt, mask) \
        == pytest.approx(0.04)


def test_depth_mse_empty_mask():
    with pytest.raises(ValueError):
        metrics.depth_mse(np.zeros(3), np.zeros(3), np.zeros(3, bool))
