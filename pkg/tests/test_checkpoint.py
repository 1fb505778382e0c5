"""Binary checkpoint format: bit-exact round trips and validation."""

import numpy as np
import pytest

from renet.autodiff import Tensor
from renet.checkpoint import CheckpointError, dump_tensors, load_tensors, save_tensors


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    named = {
        "conv1.w": rng.standard_normal((4, 1, 3, 3)).astype(np.float32),
        "conv1.b": rng.standard_normal(4).astype(np.float32),
        "fc.w": rng.standard_normal((10, 3)).astype(np.float32),
        "odd/name with spaces": rng.standard_normal(7).astype(np.float32),
    }
    path = tmp_path / "params.renw"
    save_tensors(path, named)
    loaded = load_tensors(path)
    assert list(loaded) == list(named)  # order preserved
    for k in named:
        assert loaded[k].dtype == np.float32
        assert loaded[k].tobytes() == named[k].tobytes()


def test_round_trip_accepts_tensors(tmp_path):
    t = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    path = tmp_path / "t.renw"
    save_tensors(path, {"x": t})
    np.testing.assert_array_equal(load_tensors(path)["x"], t.data)


def test_double_round_trip_identical_bytes():
    named = {"a": np.linspace(-1, 1, 11, dtype=np.float32)}
    blob = dump_tensors(named)
    from renet.checkpoint import parse_tensors

    again = dump_tensors(parse_tensors(blob))
    assert blob == again


def test_unicode_names(tmp_path):
    named = {"层.权重": np.ones(3, np.float32)}
    path = tmp_path / "u.renw"
    save_tensors(path, named)
    assert "层.权重" in load_tensors(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.renw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(path)


def test_truncated_rejected(tmp_path):
    blob = dump_tensors({"x": np.ones((2, 2), np.float32)})
    path = tmp_path / "trunc.renw"
    path.write_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_tensors(path)


def test_header_layout():
    blob = dump_tensors({"ab": np.zeros((1, 2), np.float32)})
    assert blob[:4] == b"RENW"
    assert int.from_bytes(blob[4:8], "little") == 1  # version
    assert int.from_bytes(blob[8:12], "little") == 1  # count
    assert int.from_bytes(blob[12:16], "little") == 2  # name length
    assert blob[16:18] == b"ab"
    assert int.from_bytes(blob[18:22], "little") == 2  # rank


def test_empty_checkpoint_round_trips(tmp_path):
    path = tmp_path / "empty.renw"
    save_tensors(path, {})
    assert load_tensors(path) == {}


def test_float64_stored_as_f32(tmp_path):
    path = tmp_path / "f64.renw"
    save_tensors(path, {"x": np.array([1.0, 2.0], np.float64)})
    assert load_tensors(path)["x"].dtype == np.float32
