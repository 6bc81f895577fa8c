import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nps

from muval.errors import ConfigError, ContractError, FormatError, NumericError, ParseError
from muval.volume_io import (BlobSpec, Volume, generate_synthetic, load_manifest, load_samples, read_volume,
                             write_manifest, write_volume)


def test_round_trip_random(tmp_path):
    v = Volume(np.random.default_rng(0).random((4, 5, 6)).astype(np.float32))
    write_volume(v, tmp_path / "a.rvol")
    back = read_volume(tmp_path / "a.rvol")
    assert back.shape == (4, 5, 6)
    np.testing.assert_array_equal(back.voxels, v.voxels)


def test_round_trip_single_voxel(tmp_path):
    write_volume(Volume(np.zeros((1, 1, 1))), tmp_path / "z.rvol")
    assert read_volume(tmp_path / "z.rvol").voxels.tolist() == [[[0.0]]]


def test_file_layout(tmp_path):
    write_volume(Volume(np.arange(6, dtype=np.float32).reshape(1, 2, 3)), tmp_path / "a.rvol")
    raw = (tmp_path / "a.rvol").read_bytes()
    assert raw[:6] == b"RVOL\x00\x01"
    assert struct.unpack_from("<3I", raw, 6) == (1, 2, 3)
    assert np.frombuffer(raw[18:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_bad_magic(tmp_path):
    write_volume(Volume(np.ones((2, 2, 2))), tmp_path / "a.rvol")
    raw = bytearray((tmp_path / "a.rvol").read_bytes())
    raw[0:4] = b"XVOL"
    (tmp_path / "a.rvol").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_volume(tmp_path / "a.rvol")


def test_truncated_payload(tmp_path):
    write_volume(Volume(np.ones((2, 2, 2))), tmp_path / "a.rvol")
    (tmp_path / "a.rvol").write_bytes((tmp_path / "a.rvol").read_bytes()[:-3])
    with pytest.raises(FormatError):
        read_volume(tmp_path / "a.rvol")


def test_volume_rejects_bad_input():
    with pytest.raises(ContractError):
        Volume(np.ones((2, 2)))
    with pytest.raises(NumericError):
        Volume(np.array([[[np.nan]]]))


def test_manifest_parse(tmp_path):
    (tmp_path / "m.csv").write_text("a.rvol,1\nb.rvol,0\n")
    assert load_manifest(tmp_path / "m.csv") == [("a.rvol", 1), ("b.rvol", 0)]
    (tmp_path / "e.csv").write_text("")
    assert load_manifest(tmp_path / "e.csv") == []


def test_manifest_bad_label(tmp_path):
    (tmp_path / "m.csv").write_text("c.rvol,2\n")
    with pytest.raises(ParseError) as err:
        load_manifest(tmp_path / "m.csv")
    assert err.value.line == 1


def test_manifest_error_line_number(tmp_path):
    (tmp_path / "m.csv").write_text("a.rvol,1\nb.rvol\n")
    with pytest.raises(ParseError, match="line 2"):
        load_manifest(tmp_path / "m.csv")


def test_load_samples_relative_paths(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    write_volume(Volume(np.full((2, 2, 2), 0.25)), d / "x.rvol")
    write_manifest([("x.rvol", 1)], d / "m.csv")
    (s,) = load_samples(d / "m.csv")
    assert s.label == 1 and float(s.volume.voxels.mean()) == 0.25


def test_generator_is_deterministic():
    a = generate_synthetic(BlobSpec(), (16, 32, 32), 1, 3)
    b = generate_synthetic(BlobSpec(), (16, 32, 32), 1, 3)
    assert a.volume == b.volume and a.label == b.label == 1


@pytest.mark.parametrize("seed", range(5))
def test_positive_class_is_brighter(seed):
    pos = generate_synthetic(BlobSpec(), (16, 32, 32), 1, seed).volume.voxels.mean()
    neg = generate_synthetic(BlobSpec(), (16, 32, 32), 0, seed).volume.voxels.mean()
    assert pos > neg


def test_empty_phantom():
    spec = BlobSpec(pos_count=(0, 0), neg_count=(0, 0), noise_sigma=0.0)
    for label in (0, 1):
        assert not generate_synthetic(spec, (8, 8, 8), label, 0).volume.voxels.any()


def test_generator_rejects_tiny_shapes():
    with pytest.raises(ConfigError):
        generate_synthetic(BlobSpec(), (4, 32, 32), 0, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1), st.integers(0, 2 ** 32 - 1))
def test_generated_voxels_in_unit_interval(label, seed):
    v = generate_synthetic(BlobSpec(), (13, 16, 14), label, seed).volume
    assert v.shape == (13, 16, 14)
    assert v.voxels.dtype == np.float32
    assert 0.0 <= v.voxels.min() and v.voxels.max() <= 1.0


@settings(max_examples=25, deadline=None)
@given(nps.arrays(np.float32, nps.array_shapes(min_dims=3, max_dims=3, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_property(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("rt") / "v.rvol"
    write_volume(Volume(arr), path)
    np.testing.assert_array_equal(read_volume(path).voxels, arr)
