"""Checkpoint container: layout, round trips and corruption handling."""

import struct
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cocgan import checkpoint as ckpt
from cocgan.errors import LoadError
from cocgan.layers import Linear


def sample_params(rng):
    return OrderedDict(w=rng.standard_normal((3, 4)).astype(np.float32), b=np.float32(rng.standard_normal(4)),
                       s=np.array(2.5, dtype=np.float32))


class TestLayout:
    def test_header(self, rng):
        data = ckpt.dumps(sample_params(rng), meta={"a": 1})
        assert data[:4] == b"COCG"
        version, count, flags = struct.unpack("<III", data[4:16])
        assert (version, count, flags) == (1, 3, ckpt.FLAG_META)

    def test_first_entry_encoding(self):
        data = ckpt.dumps({"ab": np.array([[1.0, 2.0]], np.float32)})
        body = data[16:]
        assert struct.unpack("<I", body[:4])[0] == 2
        assert body[4:6] == b"ab"
        assert struct.unpack("<III", body[6:18]) == (2, 1, 2)
        assert np.frombuffer(body[18:26], "<f4").tolist() == [1.0, 2.0]


class TestRoundTrip:
    def test_params_meta_optimizer(self, rng, tmp_path):
        params = sample_params(rng)
        optim = {"m/w": np.ones((3, 4), np.float32)}
        path = ckpt.save(tmp_path / "x.cocg", params, {"epoch": 3}, optim)
        got, meta, opt = ckpt.load(path)
        assert list(got) == list(params)
        for k in params:
            np.testing.assert_array_equal(got[k], params[k])
        assert meta == {"epoch": 3}
        np.testing.assert_array_equal(opt["m/w"], optim["m/w"])

    @given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(width=32, allow_nan=False)))
    def test_any_array_bit_exact(self, arr):
        got, meta, opt = ckpt.loads(ckpt.dumps({"t": arr}))
        assert meta is None and opt is None
        assert got["t"].shape == arr.shape
        assert got["t"].tobytes() == arr.astype("<f4").tobytes()

    def test_load_into_module(self, rng):
        a, b = Linear(3, 2, rng), Linear(3, 2, rng)
        params, _, _ = ckpt.loads(ckpt.dumps(ckpt.module_arrays(a, "fc.")))
        ckpt.load_into(b, params, "fc.")
        np.testing.assert_array_equal(a.weight.data, b.weight.data)

    def test_atomic_write_leaves_no_tmp(self, rng, tmp_path):
        ckpt.save(tmp_path / "x.cocg", sample_params(rng))
        assert [p.name for p in tmp_path.iterdir()] == ["x.cocg"]


class TestCorruption:
    def test_bad_magic(self, rng):
        data = b"XXXX" + ckpt.dumps(sample_params(rng))[4:]
        with pytest.raises(LoadError, match="magic"):
            ckpt.loads(data)

    def test_truncation_names_tensor(self, rng):
        data = ckpt.dumps(sample_params(rng))
        with pytest.raises(LoadError, match="'b'"):
            ckpt.loads(data[:16 + 4 + 1 + 4 + 8 + 48 + 4 + 1 + 4 + 4 + 3])

    @pytest.mark.parametrize("cut", [3, 10, 17, 40])
    def test_any_truncation_fails_cleanly(self, rng, cut):
        with pytest.raises(LoadError):
            ckpt.loads(ckpt.dumps(sample_params(rng), {"k": 1})[:cut])

    def test_trailing_bytes(self, rng):
        with pytest.raises(LoadError, match="trailing"):
            ckpt.loads(ckpt.dumps(sample_params(rng)) + b"\0")

    def test_unknown_version(self, rng):
        data = bytearray(ckpt.dumps(sample_params(rng)))
        data[4] = 9
        with pytest.raises(LoadError, match="version"):
            ckpt.loads(bytes(data))

    def test_shape_mismatch_names_tensor(self, rng):
        params = {"fc.weight": np.zeros((3, 3), np.float32), "fc.bias": np.zeros(2, np.float32)}
        with pytest.raises(LoadError, match="fc.weight"):
            ckpt.load_into(Linear(3, 2, rng), params, "fc.")

    def test_missing_tensor(self, rng):
        with pytest.raises(LoadError, match="fc.bias"):
            ckpt.load_into(Linear(3, 2, rng), {"fc.weight": np.zeros((3, 2), np.float32)}, "fc.")

    def test_missing_file(self, tmp_path):
        with pytest.raises(LoadError):
            ckpt.load(tmp_path / "absent.cocg")
