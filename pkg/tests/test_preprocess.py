import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nps

from muval.errors import ConfigError
from muval.preprocess import PreprocessConfig, augment, prepare, resize_trilinear, window_normalize
from muval.volume_io import Volume

QUIET = PreprocessConfig(max_translation=0.0, max_rotation_deg=0.0, flip_prob=0.0, noise_sigma=0.0)


def trilinear_oracle(x, target):
    """Point-by-point align-corners interpolation."""
    def coords(s, t):
        return np.full(t, (s - 1) / 2.0) if t == 1 else np.arange(t) * (s - 1) / (t - 1)
    out = np.empty(target)
    cs = [coords(s, t) for s, t in zip(x.shape, target)]
    for i, zd in enumerate(cs[0]):
        for j, zh in enumerate(cs[1]):
            for k, zw in enumerate(cs[2]):
                acc = 0.0
                for a in (0, 1):
                    for b in (0, 1):
                        for c in (0, 1):
                            idx, wt = [], 1.0
                            for z, s, bit in ((zd, x.shape[0], a), (zh, x.shape[1], b), (zw, x.shape[2], c)):
                                lo = min(int(np.floor(z)), s - 1)
                                f = z - lo
                                idx.append(min(lo + bit, s - 1))
                                wt *= f if bit else 1 - f
                            acc += wt * x[tuple(idx)]
                out[i, j, k] = acc
    return out


def test_resize_matches_pointwise_oracle():
    x = np.random.default_rng(0).random((3, 4, 5))
    got = resize_trilinear(Volume(x), (5, 3, 7)).voxels
    np.testing.assert_allclose(got, trilinear_oracle(x.astype(np.float32).astype(np.float64), (5, 3, 7)), atol=1e-6)


def test_window_examples():
    v = Volume(np.array([-1000, -100, 50, 200, 3000], dtype=np.float32).reshape(1, 1, 5))
    np.testing.assert_allclose(window_normalize(v, -100, 200).voxels.ravel(), [0, 0, 0.5, 1, 1])
    assert not window_normalize(Volume(np.full((2, 2, 2), -100.0))).voxels.any()
    assert np.all(window_normalize(Volume(np.full((2, 2, 2), 200.0))).voxels == 1)


def test_window_rejects_empty_interval():
    with pytest.raises(ConfigError):
        window_normalize(Volume(np.zeros((1, 1, 1))), 5, 5)


def test_resize_identity():
    v = Volume(np.random.default_rng(1).random((3, 4, 5)))
    assert resize_trilinear(v, (3, 4, 5)) == v


def test_resize_ramp():
    v = Volume(np.array([0.0, 1.0]).reshape(1, 1, 2))
    np.testing.assert_allclose(resize_trilinear(v, (1, 1, 3)).voxels.ravel(), [0, 0.5, 1])


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.integers(1, 6)] * 3), st.tuples(*[st.integers(1, 6)] * 3), st.floats(0, 1))
def test_resize_constant(src, dst, c):
    out = resize_trilinear(Volume(np.full(src, c)), dst).voxels
    assert out.shape == dst
    np.testing.assert_allclose(out, np.float32(c), rtol=1e-6)


@settings(max_examples=25, deadline=None)
@given(nps.arrays(np.float32, (3, 4, 4), elements=st.floats(0, 1, width=32)), st.tuples(*[st.integers(1, 7)] * 3))
def test_resize_stays_in_range(arr, dst):
    out = resize_trilinear(Volume(arr), dst).voxels
    assert out.min() >= arr.min() - 1e-6 and out.max() <= arr.max() + 1e-6


def test_augment_noop_config():
    v = Volume(np.random.default_rng(2).random((4, 6, 6)))
    assert augment(v, QUIET, 0) == v


def test_augment_deterministic():
    v = Volume(np.random.default_rng(3).random((8, 10, 10)))
    cfg = PreprocessConfig()
    assert augment(v, cfg, 11) == augment(v, cfg, 11)
    assert augment(v, cfg, 11) != augment(v, cfg, 12)


def test_forced_flip_is_involution():
    v = Volume(np.random.default_rng(4).random((4, 6, 6)))
    cfg = PreprocessConfig(max_translation=0.0, max_rotation_deg=0.0, flip_prob=1.0, flip_axes=("w",),
                           noise_sigma=0.0)
    once = augment(v, cfg, 0)
    np.testing.assert_array_equal(once.voxels, v.voxels[:, :, ::-1])
    assert augment(once, cfg, 5) == v


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_augment_output_in_unit_interval(seed):
    v = Volume(np.random.default_rng(seed).random((6, 8, 8)))
    out = augment(v, PreprocessConfig(noise_sigma=0.2), seed).voxels
    assert out.shape == (6, 8, 8) and out.min() >= 0 and out.max() <= 1


def test_config_validation():
    with pytest.raises(ConfigError):
        PreprocessConfig(window_low=10, window_high=0)
    with pytest.raises(ConfigError):
        PreprocessConfig(flip_prob=1.5)
    with pytest.raises(ConfigError):
        PreprocessConfig(target_shape=(0, 4, 4))


def test_prepare_windows_then_resizes():
    v = Volume(np.full((2, 3, 3), 50.0))
    out = prepare(v, PreprocessConfig(target_shape=(4, 4, 4)))
    assert out.shape == (4, 4, 4)
    np.testing.assert_allclose(out.voxels, 0.5)
