import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcanet import instrument
from pcanet.erase import AttentionMap, DropMask, attention_map, drop_mask, erase, erase_batch
from pcanet.errors import ConfigError
from pcanet.tensor import Tensor


def amap(values):
    return AttentionMap(Tensor(np.asarray(values, dtype=float)), 0)


def test_single_channel_is_selected(rng):
    a = attention_map(Tensor(rng.uniform(size=(1, 4, 4))), 16)
    assert a.source_channel == 0
    assert a.a.shape == (16, 16)


def test_argmax_channel_and_range():
    f = np.ones((3, 4, 4))
    f[1] = 5.0
    f[1, 0, 0] = 7.0
    a = attention_map(Tensor(f), 8)
    assert a.source_channel == 1
    assert a.a.data.min() == 0 and a.a.data.max() == 1


def test_argmax_ties_take_lowest_index():
    f = np.zeros((3, 2, 2))
    f[1] = [[1, 0], [0, 0]]
    f[2] = [[0, 0], [0, 1]]
    assert attention_map(Tensor(f), 4).source_channel == 1


def test_pixel_max_reduction():
    f = np.zeros((2, 2, 2))
    f[0, 0, 0] = 3.0
    f[1, 1, 1] = 2.0
    a = attention_map(Tensor(f), 2, reduce="pixel_max")
    assert a.source_channel == -1
    np.testing.assert_allclose(a.a.data, [[1, 0], [0, 2 / 3]], atol=1e-6)
    with pytest.raises(ConfigError):
        attention_map(Tensor(f), 2, reduce="mean")


def test_constant_channel_gives_zero_map_and_erases_nothing(rng):
    a = attention_map(Tensor(np.full((2, 3, 3), 4.0)), 12)
    assert not a.a.data.any()
    m = drop_mask(a, 0.5)
    assert (m.m.data == 1).all() and m.erased_fraction == 0.0
    img = rng.uniform(size=(3, 12, 12))
    np.testing.assert_array_equal(erase(img, m).data, img)


def test_drop_mask_example():
    m = drop_mask(amap([[0.9, 0.3], [0.6, 0.1]]), 0.5)
    assert m.m.data.tolist() == [[0, 1], [0, 1]]
    assert m.theta_used == 0.5 and m.erased_fraction == 0.5


def test_drop_mask_boundaries():
    assert (drop_mask(amap([[0.2, 0.5], [0.0, 0.4]]), 0.5).m.data == 1).all()
    assert (drop_mask(amap([[1.0, 0.2], [0.0, 0.4]]), 0.5).m.data == 0).any()
    for theta in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            drop_mask(amap([[0.5]]), theta)


def test_erase_identity_annihilation_checkerboard(rng):
    img = rng.uniform(0.1, 1, size=(3, 4, 4)).astype(np.float32)
    ones = DropMask(Tensor(np.ones((4, 4))), 0.5)
    zeros = DropMask(Tensor(np.zeros((4, 4))), 0.5)
    np.testing.assert_array_equal(erase(img, ones).data, img)
    assert not erase(img, zeros).data.any()
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
    out = erase(img, DropMask(Tensor(board), 0.5)).data
    for ch in range(3):
        assert (out[ch][board == 0] == 0).all()
        np.testing.assert_array_equal(out[ch][board == 1], img[ch][board == 1])


def test_erase_shape_mismatch():
    with pytest.raises(ValueError):
        erase(np.zeros((3, 4, 4)), DropMask(Tensor(np.ones((5, 5))), 0.5))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_mask_properties(seed, t1, t2):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((4, 3, 3))
    a = attention_map(Tensor(f), 12)
    lo, hi = sorted((t1, t2))
    m_lo, m_hi = drop_mask(a, lo), drop_mask(a, hi)
    for m in (m_lo, m_hi):
        assert set(np.unique(m.m.data)) <= {0.0, 1.0}
    # erased set at the larger threshold is contained in the erased set at the smaller
    assert not ((m_hi.m.data == 0) & (m_lo.m.data == 1)).any()
    img = rng.uniform(0.05, 1, size=(3, 12, 12))
    once = erase(img, m_lo)
    np.testing.assert_array_equal(erase(once, m_lo).data, once.data)
    assert (once.data[:, m_lo.m.data == 0] == 0).all()
    if a.a.data.max() == 1.0:
        assert m_lo.erased_fraction > 0


def test_erase_batch_matches_per_image_path(rng):
    imgs = rng.uniform(size=(4, 3, 16, 16)).astype(np.float32)
    feats = rng.standard_normal((4, 5, 4, 4)).astype(np.float32)
    for reduce in ("argmax_gap", "pixel_max"):
        out, fractions = erase_batch(Tensor(imgs), Tensor(feats), 0.5, reduce)
        for i in range(4):
            m = drop_mask(attention_map(Tensor(feats[i]), 16, reduce), 0.5)
            np.testing.assert_array_equal(out.data[i], erase(imgs[i], m).data)
            assert fractions[i] == pytest.approx(m.erased_fraction)
    assert instrument.counters["erase"] >= 8
    assert not out.requires_grad and out.node is None
