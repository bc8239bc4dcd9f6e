import csv
import io
import json
import os

import numpy as np
import pytest

from renormindex.cli import SCHEMA_VERSION, THREADS_ENV, build_parser, make_config, parse_geometry_file, run


def invoke(capsys, *argv):
    code = run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_index_example(capsys):
    code, out, _ = invoke(capsys, "index", "--geometry", "torus", "--twist", "3", "--t", "0.5")
    doc = json.loads(out)
    assert code == 0
    assert doc["schema_version"] == SCHEMA_VERSION
    assert doc["result"]["spectral_index"] == 3
    assert doc["passed"] is True


def test_clifford_check_example(capsys):
    code, out, _ = invoke(capsys, "clifford-check", "--dim", "4")
    assert code == 0
    assert json.loads(out)["passed"] is True


def test_heat_trace_csv_example(capsys):
    code, out, _ = invoke(capsys, "heat-trace", "--geometry", "sphere", "--fit", "3", "--format", "csv")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["t", "trace"]
    split = rows.index(["i", "a_i"])
    assert split > 10
    coeffs = {int(r[0]): float(r[1]) for r in rows[split + 1:]}
    assert sorted(coeffs) == [0, 1, 2, 3]
    # area and (1/6) * integrated scalar curvature of the unit sphere
    assert coeffs[0] == pytest.approx(4 * np.pi, rel=1e-6)
    assert coeffs[1] == pytest.approx(4 * np.pi / 3, rel=1e-4)


@pytest.mark.parametrize("argv", [
    ["lichnerowicz", "--geometry", "torus", "--twist", "1"],
    ["rescale", "--geometry", "torus", "--twist", "2"],
    ["renorm", "--geometry", "cylinder"],
    ["psc-check", "--geometry", "sphere"],
    ["index", "--geometry", "cylinder"],
])
def test_subcommands_pass(capsys, argv):
    code, out, _ = invoke(capsys, *argv)
    assert code == 0, out
    assert json.loads(out)["command"] == argv[0]


def test_failed_check_exits_one(capsys):
    code, out, _ = invoke(capsys, "index", "--geometry", "sphere", "--twist", "1", "--tol", "geometric=1e-300")
    assert code == 1
    assert json.loads(out)["passed"] is False


@pytest.mark.parametrize("argv", [
    [],
    ["no-such-command"],
    ["index", "--geometry", "klein_bottle"],
    ["index", "--tol", "geometric=-1"],
    ["index", "--tol", "bogus=1"],
    ["psc-check", "--geometry", "torus"],
    ["clifford-check", "--dim", "3"],
    ["lichnerowicz", "--format", "xml"],
])
def test_usage_errors(capsys, argv):
    code, _, err = invoke(capsys, *argv)
    assert code == 2
    assert "usage error" in err
    assert "schema_version" in err


def test_deterministic_json(capsys):
    argv = ["clifford-check", "--dim", "2,4", "--seed", "7"]
    _, a, _ = invoke(capsys, *argv)
    _, b, _ = invoke(capsys, *argv)
    assert a == b


def test_output_file(tmp_path, capsys):
    target = tmp_path / "report.json"
    code, out, _ = invoke(capsys, "index", "--geometry", "torus", "--twist", "-2", "--output", str(target))
    assert code == 0
    assert json.loads(target.read_text())["result"]["spectral_index"] == -2


def test_unwritable_output_dir(tmp_path, capsys):
    code, _, _ = invoke(capsys, "index", "--output", str(tmp_path / "missing" / "r.json"))
    assert code == 2


def test_geometry_spec_file(tmp_path, capsys):
    spec = tmp_path / "torus.geom"
    spec.write_text("# rectangular torus\nkind = flat_torus\nperiods = 6.0, 4.0\nresolution = 16\n")
    assert parse_geometry_file(spec) == {"kind": "flat_torus", "periods": [6.0, 4.0], "resolution": 16}
    code, out, _ = invoke(capsys, "index", "--geometry", str(spec), "--twist", "1")
    assert code == 0
    assert json.loads(out)["result"]["spectral_index"] == 1


def test_geometry_spec_unknown_key(tmp_path, capsys):
    spec = tmp_path / "bad.geom"
    spec.write_text("kind = round_sphere\ncolour = blue\n")
    code, _, err = invoke(capsys, "index", "--geometry", str(spec))
    assert code == 2
    assert "colour" in err


def config(*argv):
    return make_config(build_parser().parse_args(list(argv)))


def test_threads_flag_and_env(monkeypatch, capsys):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert config("index").threads is None
    assert config("index", "--threads", "3").threads == 3
    monkeypatch.setenv(THREADS_ENV, "2")
    assert config("index").threads == 2
    assert config("index", "--threads", "1").threads == 1
    monkeypatch.setenv(THREADS_ENV, "many")
    assert invoke(capsys, "index")[0] == 2
