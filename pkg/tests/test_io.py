import json
import struct

import numpy as np
import pytest

from gkptrap.errors import InvalidInput
from gkptrap.fock import OscState, fock_state
from gkptrap.io import MAGIC, load_state, save_state, sha256_file, write_json, write_manifest


def test_state_roundtrip_pure(tmp_path):
    st = OscState.normalized(np.array([1, 2j, -0.5, 0.25]), (2, 2))
    path = save_state(tmp_path / "s.gkps", st, {"note": "x"})
    back, header = load_state(path)
    np.testing.assert_array_equal(back.data, st.data)
    assert back.mode_shape == (2, 2) and header["meta"] == {"note": "x"}
    assert header["kind"] == "pure"


def test_state_roundtrip_mixed_with_ancilla(tmp_path):
    rho = np.diag([0.5, 0.25, 0.125, 0.125]).astype(complex)
    st = OscState(rho, (2, 2), has_ancilla=True)
    back, header = load_state(save_state(tmp_path / "m.gkps", st))
    np.testing.assert_array_equal(back.data, rho)
    assert back.has_ancilla and header["kind"] == "mixed"


def test_container_layout(tmp_path):
    path = save_state(tmp_path / "s.gkps", fock_state(1, 3))
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    assert header["dtype"] == "<c16" and header["shape"] == [3]
    assert len(raw) == 12 + n + 3 * 16


def test_bad_files_rejected(tmp_path):
    (tmp_path / "junk").write_bytes(b"not a state file")
    with pytest.raises(InvalidInput):
        load_state(tmp_path / "junk")
    path = save_state(tmp_path / "s.gkps", fock_state(1, 3))
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(InvalidInput):
        load_state(path)


def test_json_is_sorted_and_handles_numpy(tmp_path):
    path = write_json(tmp_path / "a.json", {"b": np.float64(1.5), "a": np.arange(3), "c": 2j})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text)["c"] == {"re": 0.0, "im": 2.0}


def test_manifest_inventory(tmp_path):
    out = write_json(tmp_path / "data.json", {"x": 1})
    write_manifest(tmp_path, "params", {"k": 1}, [out], ["W: note"], "t0", "t1", "0.1.0")
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["outputs"] == {"data.json": sha256_file(out)}
    assert doc["warnings"] == ["W: note"] and doc["started"] == "t0"
    assert not list(tmp_path.glob("*.tmp"))
