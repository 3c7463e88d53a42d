import json

import pytest

from gkptrap.cli import ConfigError, build_parser, config_hash, main, resolve_config
from gkptrap.io import load_state


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_params_lattice(tmp_path, capsys):
    code, out, _ = _run(["params", "--trap", "lattice", "--depth-mK", "1.5", "--waist-um", "20",
                         "--wavelength-nm", "1040", "--out", str(tmp_path)], capsys)
    assert code == 0 and "lattice" in out
    rep = json.loads((tmp_path / "params.json").read_text())
    assert rep["omega_z_2pi_Hz"] == pytest.approx(6e3, rel=0.02)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["mass_default_used"] is True
    assert json.loads((tmp_path / "params.json").read_text())["mass_u"] == 87.906


def test_params_tweezer_warning_in_manifest(tmp_path, capsys):
    code, _, _ = _run(["params", "--trap", "tweezer", "--waist-nm", "500", "--out", str(tmp_path)],
                      capsys)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert any("PhysicsWarning" in w for w in manifest["warnings"])
    rep = json.loads((tmp_path / "params.json").read_text())
    assert rep["omega_z_2pi_Hz"] == pytest.approx(112e3, rel=0.02)


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trap": "lattice", "depht_mK": 1.0}))
    code, _, err = _run(["params", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    doc = json.loads(err)
    assert doc["exit_code"] == 2 and "depht_mK" in doc["message"]


def test_flag_overrides_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trap": "lattice", "waist_um": 20, "depth_mK": 3.0}))
    code, _, _ = _run(["params", "--config", str(cfg), "--depth-mK", "1.5", "--out", str(tmp_path / "o")],
                      capsys)
    assert code == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["depth_mK"] == 1.5 and manifest["config"]["waist_um"] == 20.0


def test_invalid_values_are_config_errors(tmp_path, capsys):
    code, _, _ = _run(["params", "--trap", "lattice", "--waist-um", "-3", "--out", str(tmp_path)], capsys)
    assert code == 2
    code, _, _ = _run(["params", "--trap", "lattice", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(["params", "--config", str(bad)], capsys)[0] == 2
    assert _run(["params", "--config", str(tmp_path / "none.json")], capsys)[0] == 4
    assert _run(["wigner", "--state", str(tmp_path / "none.gkps"), "--out", str(tmp_path / "w")],
                capsys)[0] == 4


def test_resolve_config_types():
    cfg = resolve_config("prepare-ideal", {"deltas": "1, 0.5"}, {"rounds": "2"})
    assert cfg["deltas"] == [1.0, 0.5] and cfg["rounds"] == 2
    with pytest.raises(ConfigError):
        resolve_config("prepare-ideal", {"rounds": "two"})
    with pytest.raises(ConfigError):
        resolve_config("prepare-physical", {"harmonic": "yes"})


def test_default_run_dir_is_config_hash(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GKPSIM_OUTPUT_ROOT", str(tmp_path))
    code, _, _ = _run(["params", "--trap", "lattice", "--waist-um", "20"], capsys)
    assert code == 0
    cfg = resolve_config("params", {"trap": "lattice", "waist_um": 20.0})
    assert (tmp_path / f"params-{config_hash('params', cfg)}" / "manifest.json").exists()


def test_prepare_ideal_reproducible_and_wigner(tmp_path, capsys):
    args = ["prepare-ideal", "--delta-init", "0.3", "--rounds", "3", "--dim", "100"]
    assert _run(args + ["--out", str(tmp_path / "a")], capsys)[0] == 0
    assert _run(args + ["--out", str(tmp_path / "b")], capsys)[0] == 0
    for name in ("rounds.csv", "rounds.json", "state.gkps"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    records = json.loads((tmp_path / "a" / "rounds.json").read_text())["records"]
    assert records[-1]["delta_x"] <= 0.35
    state, _ = load_state(tmp_path / "a" / "state.gkps")
    assert state.kind == "mixed"
    code, _, _ = _run(["wigner", "--state", str(tmp_path / "a" / "state.gkps"), "--points", "11",
                       "--out", str(tmp_path / "w")], capsys)
    assert code == 0
    assert (tmp_path / "w" / "wigner.csv").exists() and (tmp_path / "w" / "wigner.json").exists()


def test_prepare_ideal_postselect(tmp_path, capsys):
    code, _, _ = _run(["prepare-ideal", "--scheme", "postselect", "--rounds", "2", "--dim", "100",
                       "--out", str(tmp_path)], capsys)
    assert code == 0
    assert 0 < json.loads((tmp_path / "rounds.json").read_text())["success_prob"] < 1


def test_too_many_rounds_is_config_error(tmp_path, capsys):
    code, _, _ = _run(["prepare-ideal", "--rounds", "4", "--deltas", "1,0.5", "--out", str(tmp_path)],
                      capsys)
    assert code == 2


def test_wigner_svg(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    _run(["qec-round", "--delta", "0.35", "--dim", "80", "--out", str(tmp_path / "q")], capsys)
    code, _, _ = _run(["wigner", "--state", str(tmp_path / "q" / "state.gkps"), "--points", "21",
                       "--svg", "--out", str(tmp_path / "w")], capsys)
    assert code == 0
    assert (tmp_path / "w" / "wigner.svg").read_text().lstrip().startswith("<?xml")


def test_wigner_of_multimode_state(tmp_path, capsys):
    from gkptrap.fock import OscState, tensor, fock_state
    from gkptrap.io import save_state
    st = tensor(fock_state(0, 2), fock_state(1, 10))
    save_state(tmp_path / "mm.gkps", OscState(st.density(), (2, 10)))
    code, _, _ = _run(["wigner", "--state", str(tmp_path / "mm.gkps"), "--points", "5",
                       "--out", str(tmp_path / "w")], capsys)
    assert code == 0


def test_optimize_deltas(tmp_path, capsys):
    code, out, _ = _run(["optimize-deltas", "--rounds", "2", "--dim", "100", "--out", str(tmp_path)],
                        capsys)
    assert code == 0
    sched = json.loads((tmp_path / "schedule.json").read_text())
    assert sched["deltas"] == pytest.approx([1.0, 0.5], abs=0.01)


def test_sweep(tmp_path, capsys):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"command": "params", "base": {"trap": "lattice", "waist_um": 20},
                               "vary": {"depth_mK": [0.5, 1.5]}, "workers": 2}))
    code, _, _ = _run(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert [r["exit_code"] for r in summary] == [0, 0]
    assert (tmp_path / "s" / "run-001" / "params.json").exists()


def test_sweep_rejects_bad_point(tmp_path, capsys):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"command": "params", "vary": {"bogus": [1]}}))
    assert _run(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")], capsys)[0] == 2


def test_parser_lists_all_commands():
    parser = build_parser()
    text = parser.format_help()
    for cmd in ("params", "prepare-ideal", "optimize-deltas", "prepare-physical", "qec-round",
                "wigner", "sweep"):
        assert cmd in text


def test_prepare_physical_small_harmonic(tmp_path, capsys):
    args = ["prepare-physical", "--harmonic", "--mode", "closed", "--dims", "1,1,80",
            "--mixed-dims", "1,1,80"]
    assert _run(args + ["--out", str(tmp_path / "a")], capsys)[0] == 0
    assert _run(args + ["--out", str(tmp_path / "b")], capsys)[0] == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a.splitlines()[0] == b"time_s,delta_x,delta_z,ground_pop,leakage,stage"
    rounds = json.loads((tmp_path / "a" / "rounds.json").read_text())["records"]
    assert [r["round"] for r in rounds] == [0, 1, 2, 3]


def test_truncation_failure_is_numeric_error(tmp_path, capsys):
    code, _, err = _run(["prepare-physical", "--harmonic", "--mode", "closed", "--dims", "1,1,40",
                         "--mixed-dims", "1,1,40", "--out", str(tmp_path)], capsys)
    assert code == 3 and json.loads(err)["exit_code"] == 3


def test_corrupt_state_file_is_io_error(tmp_path, capsys):
    (tmp_path / "bad.gkps").write_bytes(b"garbage")
    code, _, _ = _run(["wigner", "--state", str(tmp_path / "bad.gkps"), "--out", str(tmp_path / "w")],
                      capsys)
    assert code == 4


def test_unknown_preset_is_config_error(tmp_path, capsys):
    code, _, err = _run(["prepare-physical", "--preset", "tweezer", "--out", str(tmp_path)], capsys)
    assert code == 2 and "preset" in json.loads(err)["message"]
