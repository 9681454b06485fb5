import io

import numpy as np
import pytest

from hiflow.errors import FormatError
from hiflow.serialize import (hift_bytes, load_checkpoint, load_hift, read_hift,
                              save_checkpoint, save_hift)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_hift_header_layout():
    arr = np.zeros((2, 3), dtype=np.float32)
    blob = hift_bytes(arr)
    assert blob[:4] == b"HIFT"
    assert int.from_bytes(blob[4:8], "little") == 1          # version
    assert int.from_bytes(blob[8:12], "little") == 2         # rank
    assert int.from_bytes(blob[12:20], "little") == 2        # extent 0
    assert int.from_bytes(blob[20:28], "little") == 3        # extent 1
    assert blob[28] == 0                                     # f32 code
    assert len(blob) == 29 + 6 * 4


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_hift_roundtrip_bitwise(tmp_path, dtype):
    arr = rng(1).standard_normal((3, 4, 2)).astype(dtype)
    path = tmp_path / "t.hift"
    save_hift(path, arr)
    back = load_hift(path)
    assert back.dtype == arr.dtype
    assert np.array_equal(back.view(np.uint8), arr.view(np.uint8))


def test_hift_scalar_rank_zero():
    arr = np.array(3.5, dtype=np.float64)
    back = read_hift(io.BytesIO(hift_bytes(arr)))
    assert back.shape == () and back == 3.5


def test_hift_rejects_bad_magic():
    with pytest.raises(FormatError):
        read_hift(io.BytesIO(b"JUNK" + bytes(32)))


def test_hift_rejects_truncation():
    blob = hift_bytes(np.ones((4, 4), dtype=np.float32))
    with pytest.raises(FormatError):
        read_hift(io.BytesIO(blob[:-3]))


def test_hift_rejects_integer_dtype():
    with pytest.raises(FormatError):
        hift_bytes(np.ones((2, 2), dtype=np.int32))


def test_hift_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "x.hift"
    path.write_bytes(hift_bytes(np.ones(2, dtype=np.float32)) + b"Z")
    with pytest.raises(FormatError):
        load_hift(path)


def test_checkpoint_roundtrip_preserves_order(tmp_path):
    r = rng(2)
    named = [("stage0.layer0.wq", r.standard_normal((4, 4)).astype(np.float32)),
             ("stage0.layer0.bias", r.standard_normal(4).astype(np.float32)),
             ("head.w", r.standard_normal((3, 3, 4, 2)).astype(np.float64))]
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, named)
    back = load_checkpoint(path)
    assert list(back.keys()) == [n for n, _ in named]
    for name, arr in named:
        assert np.array_equal(back[name], arr)
        assert back[name].dtype == arr.dtype


def test_checkpoint_duplicate_names_rejected(tmp_path):
    path = tmp_path / "d.ckpt"
    arr = np.ones(2, dtype=np.float32)
    save_checkpoint(path, [("a", arr), ("a", arr)])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_truncated_entry(tmp_path):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, [("a", np.ones(2, dtype=np.float32))])
    data = path.read_bytes()
    path.write_bytes(data[:-2])
    with pytest.raises(FormatError):
        load_checkpoint(path)
