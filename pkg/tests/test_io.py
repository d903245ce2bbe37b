import struct

import numpy as np
import pytest

from cyclemlp.errors import FormatError
from cyclemlp.io import dump_cymw, load_cymw, read_cymt, read_cymw, write_cymt, write_cymw
from cyclemlp.model import model_init, variant_config
from cyclemlp.tensor import Rng


@pytest.mark.parametrize("dtype,code", [(np.float32, 0), (np.float64, 1)])
def test_cymt_layout_and_roundtrip(tmp_path, dtype, code):
    x = np.arange(2 * 3 * 4 * 5, dtype=dtype).reshape(2, 3, 4, 5) / 7
    path = tmp_path / "x.cymt"
    write_cymt(path, x)
    raw = path.read_bytes()
    assert raw[:4] == bytes([0x43, 0x59, 0x4D, 0x54])
    assert raw[4:7] == bytes([1, code, 4])
    assert struct.unpack("<4I", raw[7:23]) == (2, 3, 4, 5)
    assert len(raw) == 23 + x.nbytes
    y = read_cymt(path)
    assert y.dtype == x.dtype and np.array_equal(x, y)


def test_cymt_rejects_garbage(tmp_path):
    p = tmp_path / "bad.cymt"
    p.write_bytes(b"NOPE" + bytes(30))
    with pytest.raises(FormatError):
        read_cymt(p)
    write_cymt(p, np.zeros((1, 1, 2, 2), np.float32))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_cymt(p)


def test_cymw_layout():
    data = dump_cymw({"a.b": np.array([1.0, 2.0], np.float32)})
    assert data[:4] == bytes([0x43, 0x59, 0x4D, 0x57])
    assert data[4] == 1
    assert struct.unpack("<I", data[5:9]) == (1,)
    assert struct.unpack("<H", data[9:11]) == (3,)
    assert data[11:14] == b"a.b"
    assert data[14:16] == bytes([0, 1])
    assert struct.unpack("<I", data[16:20]) == (2,)
    assert np.frombuffer(data[20:], "<f4").tolist() == [1.0, 2.0]


def test_cymw_model_roundtrip(tmp_path):
    mp = model_init(variant_config("toy", 5), Rng(0))
    state = mp.state_dict()
    write_cymw(tmp_path / "w.cymw", state)
    back = read_cymw(tmp_path / "w.cymw")
    assert list(back) == list(state)
    for k in state:
        assert np.array_equal(back[k], state[k])
    assert dump_cymw(back) == dump_cymw(state)


def test_cymw_rejects_duplicates_and_trailing():
    data = dump_cymw({"x": np.zeros(1, np.float32)})
    with pytest.raises(FormatError):
        load_cymw(data + b"\0")
    dup = bytearray(dump_cymw({"x": np.zeros(1, np.float32), "y": np.zeros(1, np.float32)}))
    dup[dup.rindex(b"y")] = ord("x")
    with pytest.raises(FormatError):
        load_cymw(bytes(dup))
