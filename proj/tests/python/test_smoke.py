"""Smoke tests for the _isda extension module."""

import numpy as np
import pytest
import scipy.optimize

import isda


def test_conv2d_identity():
    x = np.random.default_rng(0).normal(size=(2, 5, 6))
    k = np.zeros((2, 2, 1, 1))
    k[0, 0, 0, 0] = 1.0
    k[1, 1, 0, 0] = 1.0
    y = isda.conv2d(x, k, padding=0)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_conv2d_matches_numpy_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 6, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    y = isda.conv2d(x, k, padding=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expect = np.zeros((4, 6, 6))
    for o in range(4):
        for yy in range(6):
            for xx in range(6):
                expect[o, yy, xx] = np.sum(xp[:, yy : yy + 3, xx : xx + 3] * k[o])
    np.testing.assert_allclose(y, expect, atol=1e-12)


def test_group_norm_statistics():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 8, 8))
    y = isda.group_norm(x, 2, np.ones(4), np.zeros(4))
    for g in range(2):
        block = y[2 * g : 2 * g + 2]
        assert abs(block.mean()) < 1e-10
        assert abs(block.var() - 1.0) < 1e-4


def test_bilinear_sample_centers():
    v = np.arange(4.0).reshape(1, 2, 2) + 1.0
    pts = np.array([[0.25, 0.25], [0.5, 0.5]])
    out = isda.bilinear_sample(v, pts)
    np.testing.assert_allclose(out[:, 0], [1.0, 2.5], atol=1e-12)


def test_upsample_constant():
    x = np.full((2, 3, 3), 1.5)
    y = isda.bilinear_upsample2x(x)
    assert y.shape == (2, 6, 6)
    np.testing.assert_allclose(y, 1.5)


def test_coord_channels():
    c = isda.coord_channels(2, 2)
    np.testing.assert_allclose(c[0], [[-1, 1], [-1, 1]])
    np.testing.assert_allclose(c[1], [[-1, -1], [1, 1]])


def test_soft_mask_iou():
    a = np.zeros((4, 4))
    a[:2, :2] = 1.0
    assert isda.soft_mask_iou(a, a) == pytest.approx(1.0)
    b = np.zeros((4, 4))
    b[2:, 2:] = 1.0
    assert isda.soft_mask_iou(a, b) == pytest.approx(0.0)


def test_hungarian_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        g = rng.integers(1, 6)
        n = rng.integers(g, 9)
        cost = rng.normal(size=(g, n))
        pairs = isda.hungarian(cost)
        rows, cols = scipy.optimize.linear_sum_assignment(cost)
        assert sum(cost[i, j] for i, j in pairs) == pytest.approx(
            cost[rows, cols].sum(), abs=1e-12
        )


def test_rle_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        mask = rng.random((rng.integers(1, 12), rng.integers(1, 12))) < 0.5
        again = isda.rle_decode(isda.rle_encode(mask), *mask.shape)
        np.testing.assert_array_equal(mask, again)
    assert isda.rle_encode(np.zeros((2, 2), dtype=bool)) == "4"
    assert isda.rle_encode(np.ones((2, 2), dtype=bool)) == "0 4"


def test_generate_scene_deterministic():
    img1, inst1 = isda.generate_scene(7, image_id=3)
    img2, inst2 = isda.generate_scene(7, image_id=3)
    np.testing.assert_array_equal(img1, img2)
    assert len(inst1) == len(inst2)
    assert 1 <= len(inst1) <= 5
    for inst in inst1:
        assert inst["class_id"] in range(isda.NUM_CLASSES)
        assert inst["mask"].sum() >= 16


def test_model_predict_contract():
    model = isda.Model(seed=5, width=8, base_width=4, num_queries=4)
    assert model.num_parameters() > 0
    img, _ = isda.generate_scene(11, image_size=64)
    preds = model.predict(img, threshold=0.0)
    assert len(preds) <= 4
    for p in preds:
        assert 0 <= p.class_id < isda.NUM_CLASSES
        assert 0.0 < p.confidence <= 1.0
        assert p.mask.shape == (64, 64)
        assert p.mask.dtype == bool
    assert model.predict(img, threshold=1.0) == []


def test_checkpoint_round_trip(tmp_path):
    a = isda.Model(seed=1, width=8, base_width=4, num_queries=4)
    path = str(tmp_path / "m.ckpt")
    a.save_checkpoint(path)
    b = isda.Model(seed=2, width=8, base_width=4, num_queries=4)
    b.load_checkpoint(path)
    img, _ = isda.generate_scene(3, image_size=32)
    pa = a.predict(img, threshold=0.0)
    pb = b.predict(img, threshold=0.0)
    assert len(pa) == len(pb)
    for x, y in zip(pa, pb):
        assert x.confidence == y.confidence
        np.testing.assert_array_equal(x.mask, y.mask)
