from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest
import yaml

from renormkit.cli import RunConfig, main
from renormkit.errors import ValidationError
from renormkit.mapcore import HenonLikeMap, MapComposition, Psi1, dumps_manifest
from renormkit.polynomial import Polynomial


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_decompose_passes_and_rows_carry_params(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"map": "shear2", "resolution": 11})
    assert main(["decompose", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "decompose.csv")
    assert rows and all(r["map"] == "shear2" and r["command"] == "decompose" for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] is True


def test_run_takes_command_from_config(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"command": "factorize", "field": "rotation", "resolution": 7})
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "factorize.csv")
    assert [int(r["N"]) for r in rows] == [8, 16, 32]


def test_invalid_parameter_exits_2_with_field(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"delta": -0.05})
    assert main(["flow-verify", "--config", cfg, "--out", str(out)]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["field"] == "delta"
    assert json.loads((out / "error.json").read_text())["field"] == "delta"


@pytest.mark.parametrize("data", [[1, 2], {"thresholds": {"distance": -1}}, {"seed": -3},
                                  {"k2": [8, 0]}])
def test_bad_configs_exit_2(tmp_path, data):
    cfg = write_config(tmp_path, data)
    assert main(["return-map", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert main(["decompose", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_unknown_command_in_config():
    with pytest.raises(ValidationError):
        RunConfig.from_dict({"command": "bake"})


def test_missed_threshold_exits_3(tmp_path):
    cfg = write_config(tmp_path, {"m": [1], "k2": [8, 16], "resolution": 5,
                                  "thresholds": {"distance": 1e-12}})
    assert main(["return-map", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_numerical_failure_exits_3(tmp_path):
    # at m = 200 the assembled orbit leaves a block strip (DomainViolation)
    cfg = write_config(tmp_path, {"target": "q11", "m": [200]})
    assert main(["flow-verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_manifest_round_trip_command(tmp_path):
    comp = MapComposition((HenonLikeMap(2, Polynomial(1, {(2,): 0.25})), Psi1(2, 0.5)), {"N": 1})
    src = tmp_path / "in.manifest"
    src.write_text(dumps_manifest(comp))
    cfg = write_config(tmp_path, {"input": str(src)})
    out = tmp_path / "o"
    assert main(["manifest", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "roundtrip.manifest").read_text() == src.read_text()


def test_bad_manifest_exits_2(tmp_path):
    src = tmp_path / "bad.manifest"
    src.write_text("renormkit-manifest 1\nfactors 1\nhenon n=2 h=oops\n")
    cfg = write_config(tmp_path, {"input": str(src)})
    assert main(["manifest", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_same_seed_gives_identical_reports(tmp_path):
    cfg = write_config(tmp_path, {"field": "nonlinear3", "N": [4, 8], "resolution": 5, "seed": 3,
                                  "thresholds": {"ratio": [0.1, 10.0]}})
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        main(["factorize", "--config", cfg, "--out", str(out)])
        outs.append((out / "factorize.csv").read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, {"m": [1], "k2": [8, 16], "resolution": 5})
    proc = subprocess.run([sys.executable, "-m", "renormkit", "return-map", "--config", cfg,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "return-map: PASS" in proc.stdout
