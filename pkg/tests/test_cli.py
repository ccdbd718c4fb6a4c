import csv
import json

import pytest

from fbmcsim.cli import ConfigError, ExperimentConfig, build_config, main, make_parser

SMALL = {
    "m": 64,
    "active_rbs": 2,
    "notch_subcarriers": 4,
    "cp_len": 8,
    "n_symbols": 8,
    "n_g_by_filter": {"npr1": 7, "tfl1": 9, "qmf1": 9},
    "table_ng_max": 15,
    "psd_symbols": 40,
    "timing_pct": [0, 2],
    "cfo": [0.0, 0.1],
    "ebn0": [10],
    "target_errors": 20,
    "max_bits": 20000,
}


def _run(tmp_path, command, extra=None, name="cfg.json"):
    cfg = {**SMALL, **(extra or {})}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out-{command}"
    return main([command, "--config", str(path), "--out", str(out), "--seed", "3"]), out


def _rows(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize(
    "command, files",
    [
        ("filters", ["taps_npr1.csv", "response_qmf1.csv", "truncation_sir.csv", "ng_table.csv"]),
        ("psd", ["psd.csv", "psd_levels.json"]),
        ("sir", ["sir_timing.csv", "sir_cfo.csv"]),
        ("ber", ["ber.csv"]),
        ("hw", ["complexity.json", "hw_error.json", "fs_trace.csv"]),
    ],
)
def test_commands_write_outputs_and_manifest(tmp_path, command, files):
    code, out = _run(tmp_path, command)
    assert code == 0
    for f in files:
        assert (out / f).is_file()
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["command"] == command and man["config"]["seed"] == 3
    assert set(files) <= set(man["outputs"])
    assert not [p for p in out.iterdir() if p.name.startswith(".")]


def test_filters_outputs_content(tmp_path):
    code, out = _run(tmp_path, "filters", {"filters": ["qmf1"], "m": 4})
    assert code == 0
    taps = _rows(out / "taps_qmf1.csv")
    assert [float(r["value"]) for r in taps] == pytest.approx([0, 0.5**0.5, 1, 0.5**0.5])
    assert _rows(out / "ng_table.csv")[0]["target_db"] == "50"


def test_sir_series_labels(tmp_path):
    code, out = _run(tmp_path, "sir", {"filters": ["npr1"]})
    series = {r["series"] for r in _rows(out / "sir_timing.csv")}
    assert {"NPR1-FS analytic", "NPR1-FS simulated", "NPR1-PPN analytic", "OFDM simulated"} <= series
    assert {r["series"] for r in _rows(out / "sir_cfo.csv")} >= {"OFDM analytic", "NPR1 analytic"}


def test_hw_error_within_bound(tmp_path):
    code, out = _run(tmp_path, "hw", {"filters": ["npr1"]})
    err = json.loads((out / "hw_error.json").read_text())
    assert err["within_bound"] and err["max_abs_error"] <= err["bound"]
    assert json.loads((out / "complexity.json").read_text())["npr1"]["delta"] == 3


def test_runs_are_reproducible(tmp_path):
    _, a = _run(tmp_path, "ber", {"filters": ["npr1"]}, "a.json")
    first = (a / "ber.csv").read_text()
    _, b = _run(tmp_path, "ber", {"filters": ["npr1"]}, "a.json")
    assert (b / "ber.csv").read_text() == first
    m1 = json.loads((a / "manifest.json").read_text())["input_hash"]
    assert len(m1) == 64


def test_preset_and_defaults():
    args = make_parser().parse_args(["psd", "--preset", "lte25rb"])
    cfg = build_config(args, "psd")
    assert cfg.m == 512 and cfg.ng_for("tfl1") == 31
    act = cfg.active_set(notch=True)
    assert len(act) == 300 - 12 and 0 not in act and 6 in act and 506 not in act
    assert len(cfg.active_set()) == 300


@pytest.mark.parametrize(
    "bad, field",
    [
        ({"m": 100}, "m"),
        ({"waveform": "gfdm"}, "waveform"),
        ({"n_g_by_filter": {"npr1": 8}}, "n_g_by_filter.npr1"),
        ({"active_rbs": 6}, "active_rbs"),
        ({"cfo": [0.7]}, "cfo"),
        ({"profile": "XYZ"}, "profile"),
        ({"jobs": 0}, "jobs"),
        ({"bogus": 1}, "bogus"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, bad, field):
    code, _ = _run(tmp_path, "sir", bad)
    assert code == 2
    assert f"{field}:" in capsys.readouterr().err


def test_missing_config_and_bad_json(tmp_path, capsys):
    assert main(["sir", "--config", str(tmp_path / "none.json")]) == 2
    (tmp_path / "x.json").write_text("{")
    assert main(["sir", "--config", str(tmp_path / "x.json")]) == 2
    assert main(["nope"]) == 2


def test_validate_direct():
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(seed=-1).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(n_symbols=5).validate()
    assert ExperimentConfig(filter="NPR1").validate().filter == "npr1"


def test_manifest_hash_stable_and_noiseless_ber_zero(tmp_path):
    _, a = _run(tmp_path, "psd", {"filters": ["npr1"]}, "p.json")
    h1 = json.loads((a / "manifest.json").read_text())["input_hash"]
    _, b = _run(tmp_path, "psd", {"filters": ["npr1"]}, "p.json")
    assert json.loads((b / "manifest.json").read_text())["input_hash"] == h1
    assert (a / "psd.csv").read_text() == (b / "psd.csv").read_text()
