import csv
import json

import pytest
import yaml

from pathdep.cli import main
from pathdep.config import ConfigError, config_hash, load_config, parse_config
from pathdep.reporting import ReportError, load_reports, summarize

BASE = {
    "schema_version": 1,
    "model": {"dim": 1, "horizon": 1.0, "dt": 0.0625, "preset": "constant",
              "params": {"beta": 0.1, "sigma": 0.2}, "jumps": [{"y": [1.0], "mass": 0.5}]},
    "run": {"n_paths": 2000, "seed": 3},
    "verify": {"suites": ["mp"]},
}


def _with(**blocks):
    data = json.loads(json.dumps(BASE))
    for key, val in blocks.items():
        data[key] = {**data.get(key, {}), **val}
    return data


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


@pytest.mark.parametrize("data, field", [
    ({k: v for k, v in BASE.items() if k != "run"}, "run"),
    (_with(run={"n_paths": 0}), "run.n_paths"),
    (_with(run={"bogus": 1}), "run.bogus"),
    (_with(model={"dt": 0.3}), "model"),
    (_with(verify={"suites": ["nope"]}), "verify.suites"),
    (_with(run={"s": 0.01}), "s="),
    (_with(run={"initial_path": "missing.csv"}), "run.initial_path"),
    ({**BASE, "schema_version": 2}, "schema_version"),
])
def test_config_errors_name_the_field(tmp_path, data, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(data, tmp_path)
    assert field in str(exc.value)


def test_config_hash_ignores_key_order_and_output(tmp_path):
    a = parse_config(BASE, tmp_path)
    reordered = {k: BASE[k] for k in reversed(list(BASE))}
    reordered["model"] = {k: BASE["model"][k] for k in reversed(list(BASE["model"]))}
    assert config_hash(parse_config(reordered, tmp_path), tmp_path) == config_hash(a, tmp_path)
    moved = parse_config({**BASE, "output": {"directory": "elsewhere"}}, tmp_path)
    assert config_hash(moved, tmp_path) == config_hash(a, tmp_path)
    assert config_hash(parse_config(_with(run={"seed": 4}), tmp_path), tmp_path) != config_hash(a, tmp_path)


def test_load_config_rejects_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_simulate_constant_paths_and_stable_hashes(tmp_path):
    data = _with(model={"params": {"beta": 0.0, "sigma": 0.0}, "jumps": []},
                 run={"n_paths": 2, "x0": [1.5]})
    cfg = _write(tmp_path, data)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "3"]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert len(ma["files"]) == 2
    assert [f["sha256"] for f in ma["files"]] == [f["sha256"] for f in mb["files"]]
    with open(tmp_path / "a" / ma["files"][0]["file"]) as fh:
        rows = list(csv.reader(fh))[1:]
    assert len(rows) == 17 and all(float(r[1]) == 1.5 for r in rows)


def test_verify_exit_codes_and_reports(tmp_path, capsys):
    cfg = _write(tmp_path, _with(run={"n_paths": 20000}))
    out = tmp_path / "run"
    assert main(["verify", "--config", str(cfg), "--out", str(out), "--workers", "2"]) == 0
    assert "PASS mp" in capsys.readouterr().out
    rep = json.loads((out / "report_mp.json").read_text())
    assert rep["pass"] and rep["config_hash"] and rep["seed"] == 3
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "bad"), "--sabotage"]) == 1
    assert "FAIL mp" in capsys.readouterr().out


def test_usage_errors_exit_two(tmp_path, capsys):
    bad = _write(tmp_path, _with(run={"n_paths": -1}))
    assert main(["verify", "--config", str(bad)]) == 2
    assert "run.n_paths" in capsys.readouterr().err
    assert main(["verify"]) == 2
    assert main(["verify", "--config", str(bad), "--seed", "-4"]) == 2
    unknown = _write(tmp_path, _with(model={"preset": "no_such_preset"}), "p.yaml")
    assert main(["simulate", "--config", str(unknown), "--out", str(tmp_path / "x")]) == 2
    assert main(["report", str(tmp_path / "empty")]) == 2


def test_reports_identical_across_worker_counts(tmp_path):
    cfg = _write(tmp_path, _with(run={"n_paths": 3000}, verify={"suites": ["mp", "generator"]}))
    blobs = []
    for w in (1, 4):
        out = tmp_path / f"w{w}"
        main(["verify", "--config", str(cfg), "--out", str(out), "--workers", str(w)])
        blobs.append([(out / f"report_{s}.json").read_bytes() for s in ("mp", "generator")])
    assert blobs[0] == blobs[1]


def test_report_orders_failures_first_and_writes_qv_csv(tmp_path, capsys):
    cfg = _write(tmp_path, _with(run={"n_paths": 500}, verify={"suites": ["maf"]}))
    out = tmp_path / "run"
    main(["verify", "--config", str(cfg), "--out", str(out), "--workers", "1"])
    capsys.readouterr()
    (out / "report_zz.json").write_text(json.dumps({"suite": "zz", "pass": False,
                                                    "rows": [{"test_id": "x", "pass": False}]}))
    assert main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[1].startswith("FAIL") and "zz" in lines[1]
    with open(out / "qv_convergence.csv") as fh:
        rows = list(csv.DictReader(fh))
    meshes = [float(r["mesh"]) for r in rows]
    assert meshes == sorted(meshes, reverse=True) and len(rows) > 1


def test_summarize_and_missing_reports(tmp_path):
    rows = summarize({"b": {"pass": True, "rows": [{"test_id": "1", "pass": True}]},
                      "a": {"pass": True, "rows": []},
                      "c": {"pass": False, "rows": [{"test_id": "2", "pass": False}]}})
    assert [r["suite"] for r in rows] == ["c", "a", "b"]
    assert rows[0]["failing_cells"] == ["2"]
    with pytest.raises(ReportError):
        load_reports(tmp_path)
