import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from synergy_tta import fileio
from synergy_tta.errors import CheckpointFormatError, LayoutMismatch
from synergy_tta.params import ParamVector


def test_header_layout():
    p = ParamVector((("conv.w", (2, 3)), ("b", (3,))), np.arange(9, dtype=np.float32))
    raw = fileio.encode_checkpoint(p)
    assert raw[:4] == b"MOSC"
    assert struct.unpack_from("<II", raw, 4) == (1, 2)
    assert struct.unpack_from("<I", raw, 12) == (6,)
    assert raw[16:22] == b"conv.w"
    assert struct.unpack_from("<III", raw, 22) == (2, 2, 3)
    assert np.array_equal(np.frombuffer(raw[-36:], "<f4"), np.arange(9))


finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@given(st.lists(finite32, min_size=1, max_size=40), st.text(min_size=1, max_size=8))
def test_roundtrip_bit_exact(vals, name):
    p = ParamVector(((name, (len(vals),)),), np.array(vals, dtype=np.float32))
    back = fileio.decode_checkpoint(fileio.encode_checkpoint(p))
    assert back.manifest == p.manifest
    assert back.values.tobytes() == p.values.tobytes()


def test_roundtrip_special_values(tmp_path):
    vals = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 1e-45], dtype=np.float32)
    p = ParamVector((("x", (2, 3)),), vals)
    path = tmp_path / "c.mosc"
    fileio.save_checkpoint(path, p)
    assert fileio.load_checkpoint(path).values.tobytes() == vals.tobytes()


def test_corrupt_files_rejected():
    raw = fileio.encode_checkpoint(ParamVector((("x", (2,)),), [1.0, 2.0]))
    with pytest.raises(CheckpointFormatError):
        fileio.decode_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointFormatError):
        fileio.decode_checkpoint(raw[:-1])
    with pytest.raises(CheckpointFormatError):
        fileio.decode_checkpoint(raw[:10])
    bad_version = raw[:4] + struct.pack("<I", 7) + raw[8:]
    with pytest.raises(CheckpointFormatError):
        fileio.decode_checkpoint(bad_version)


def test_param_vector_layout():
    with pytest.raises(LayoutMismatch):
        ParamVector((("x", (3,)),), [1.0, 2.0])
    p = ParamVector.from_tensors({"a": np.ones((2, 2)), "b": np.zeros(3)})
    t = p.tensors()
    assert t["a"].shape == (2, 2) and t["a"].dtype == np.float64
    with pytest.raises(LayoutMismatch):
        p.check_layout(ParamVector((("a", (7,)),), np.zeros(7)))


def test_metrics_writer(tmp_path):
    path = tmp_path / "m.jsonl"
    with fileio.MetricsWriter(str(path)) as w:
        w.write({"b": np.float64(0.5), "a": np.arange(2)})
        w.write({"a": None})
    lines = path.read_text().splitlines()
    assert lines[0] == '{"a":[0,1],"b":0.5}'
    assert fileio.read_metrics(path)[1] == {"a": None}


def test_plot_csv(tmp_path):
    recs = [{"batch": 0, "running_ap": 0.5, "batch_ap": 0.5, "weights": None, "evicted_id": None},
            {"batch": 1, "running_ap": 0.25, "batch_ap": 0.0, "weights": [0.3, 0.7],
             "evicted_id": 2}]
    path = tmp_path / "p.csv"
    fileio.write_plot_csv(path, recs)
    rows = path.read_text().splitlines()
    assert rows[0] == "batch,running_ap,batch_ap,evicted,w0,w1"
    assert rows[2] == "1,0.250000,0.000000,2,0.3,0.7"
    json.dumps(recs)
