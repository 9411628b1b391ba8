import json
import shutil

import jsonschema
import numpy as np
import pytest

from liao.cli import main, run_scenario
from liao.errors import ScenarioError
from liao.report import dumps, emit_report
from liao.scenario import bundled_scenario, load_schema, load_scenario, scenario_hash


def scenario_copy(tmp_path, name, **changes):
    doc = json.loads(bundled_scenario(name).read_text())
    for key, value in changes.items():
        if value is None:
            doc.pop(key, None)
        else:
            doc[key] = value
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(doc))
    return path


def validate(path, kind):
    jsonschema.validate(json.loads(path.read_text()), load_schema(kind))


@pytest.fixture(scope="module")
def certify_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("certify")
    code = main(["certify", "--scenario", str(bundled_scenario("saddle_certify")),
                 "--out", str(out)])
    return code, out


def test_certify_report(certify_run):
    code, out = certify_run
    assert code == 0
    rep = json.loads((out / "certify.json").read_text())
    assert rep["eta_hat"] == pytest.approx(1.0, abs=1e-6)
    assert rep["eta"] == pytest.approx(2.0, abs=1e-6)
    assert rep["xi"] == pytest.approx(2.0, abs=1e-4)
    assert rep["pass"] is True
    doc = json.loads(bundled_scenario("saddle_certify").read_text())
    assert rep["scenario_hash"] == scenario_hash(doc) and rep["seed"] == 0
    validate(out / "certify.json", "certify")


def test_certify_is_byte_stable(certify_run, tmp_path):
    _, out = certify_run
    assert main(["certify", "--scenario", str(bundled_scenario("saddle_certify")),
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "certify.json").read_bytes() == (out / "certify.json").read_bytes()


def test_seed_override_is_recorded(tmp_path):
    path = scenario_copy(tmp_path, "saddle_certify", lambda_samples=[[0.0, 0.0, 0.0]])
    assert main(["exponents", "--scenario", str(path), "--out", str(tmp_path / "o"),
                 "--seed", "7"]) == 0
    rep = json.loads((tmp_path / "o" / "exponents.json").read_text())
    assert rep["seed"] == 7
    validate(tmp_path / "o" / "exponents.json", "exponents")
    lines = (tmp_path / "o" / "omega_000.csv").read_bytes().split(b"\n")
    assert lines[0] == b"t,omega_1,omega_2"
    row = [float(v) for v in lines[1].split(b",")]
    assert row[1:] == pytest.approx([-1.0, 1.0], abs=1e-9)
    np.testing.assert_allclose(rep["mean_exponents"][0], [-1.0, 1.0], atol=1e-9)


def test_delta_outputs(tmp_path):
    assert main(["delta", "--scenario", str(bundled_scenario("dichotomy_constant")),
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "delta.json").read_text())
    validate(tmp_path / "delta.json", "delta")
    assert rep["epsilon_bound"] == pytest.approx(1.62)
    assert rep["within_bound"]
    assert rep["bounded_solution"]["x"] == pytest.approx([0.0, -0.01], abs=1e-9)
    vals = np.array(rep["continuity"]["initial_values"])
    np.testing.assert_allclose(vals[:, 1], -np.array(rep["continuity"]["values"]), atol=1e-9)
    for name in ("bounded_solution.csv", "delta_map.csv", "continuity.csv"):
        assert b"\r" not in (tmp_path / name).read_bytes()
    rows = np.loadtxt(tmp_path / "delta_map.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 3], rows[:, 1], atol=1e-9)
    np.testing.assert_allclose(rows[:, 4], rows[:, 2] + 0.01, atol=1e-9)


def test_delta_needs_dichotomy_block(tmp_path):
    code = main(["delta", "--scenario", str(bundled_scenario("saddle_certify")),
                 "--out", str(tmp_path)])
    assert code == 2


@pytest.mark.slow
def test_conjugate_bundled_constant(tmp_path):
    assert main(["conjugate", "--scenario", str(bundled_scenario("saddle_constant")),
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "conjugacy.json").read_text())
    validate(tmp_path / "conjugacy.json", "conjugate")
    assert {"samples", "offsets", "residuals", "config", "certificate_ref"} <= set(rep)
    assert rep["max_offset"] == pytest.approx(0.01, abs=1e-8)
    assert (tmp_path / "residuals.csv").read_text().startswith("sample,w_1,w_2,w_3,t,residual\n")


def test_conjugate_needs_perturbation(tmp_path):
    path = scenario_copy(tmp_path, "saddle_constant", perturbation=None)
    assert main(["conjugate", "--scenario", str(path), "--out", str(tmp_path)]) == 2


def test_p_minus_out_of_range(tmp_path, capsys):
    path = scenario_copy(tmp_path, "saddle_certify", p_minus=3)
    assert main(["certify", "--scenario", str(path), "--out", str(tmp_path)]) == 2
    assert "out of range" in capsys.readouterr().err


def test_unknown_keys_listed(tmp_path, capsys):
    path = scenario_copy(tmp_path, "saddle_certify", colour="red", shape="round")
    assert main(["certify", "--scenario", str(path)]) == 2
    err = capsys.readouterr().err
    assert "colour" in err and "shape" in err


def test_unknown_numeric_key(tmp_path):
    path = scenario_copy(tmp_path, "saddle_certify", numeric={"h": 0.01, "stepsize": 2})
    with pytest.raises(ScenarioError, match="numeric/stepsize"):
        load_scenario(path)


@pytest.mark.parametrize("changes", [
    dict(lambda_samples=[[0.0, 0.0]]),
    dict(numeric={"h": -0.1}),
    dict(numeric={"window_T": 2.0, "d_grid": [1.0, 5.0]}),
    dict(field={"variables": ["x", "y"], "components": ["1", "y"]}, lambda_samples=[[0.0, 0.0]], p_minus=0,
         perturbation={"variables": ["x", "y", "z"], "components": ["1", "y", "z"]}),
])
def test_inconsistent_scenarios(tmp_path, changes):
    path = scenario_copy(tmp_path, "saddle_certify", **changes)
    with pytest.raises(ScenarioError):
        load_scenario(path)


def test_missing_file_and_bad_json(tmp_path):
    assert main(["certify", "--scenario", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["certify", "--scenario", str(bad)]) == 2


def test_numeric_failure_exit_code(tmp_path):
    path = scenario_copy(tmp_path, "saddle_certify",
                         field={"variables": ["x", "y", "z"], "components": ["1", "0", "-z"]},
                         lambda_samples=[[0.0, 0.0, 0.0]])
    assert main(["certify", "--scenario", str(path), "--out", str(tmp_path)]) == 3
    rep = json.loads((tmp_path / "certify.json").read_text())
    assert rep["pass"] is False and rep["eta"] is None


def test_usage_errors_exit_2():
    assert main(["nonsense"]) == 2
    assert main(["certify"]) == 2


def test_scenario_hash_ignores_key_order():
    assert scenario_hash({"a": 1, "b": [1, 2]}) == scenario_hash({"b": [1, 2], "a": 1})


def test_bundled_scenarios_validate():
    for name in ("saddle_certify", "saddle_constant", "saddle_trig",
                 "dichotomy_constant", "dichotomy_trig"):
        sc = load_scenario(bundled_scenario(name))
        assert sc.name == name


def test_dumps_is_canonical(tmp_path):
    text = dumps({"b": 1.0, "a": [0.1, float("nan"), 3], "c": {"z": True, "y": None}})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "0.10000000000000001" in text and "null" in text
    emit_report({"x": 1}, tmp_path / "r.json", "json")
    emit_report((["a", "b"], [[1.5, 2]]), tmp_path / "r.csv", "csv")
    assert (tmp_path / "r.csv").read_text() == "a,b\n1.5,2\n"
    with pytest.raises(ValueError):
        emit_report({}, tmp_path / "r.txt", "txt")


def test_run_scenario_programmatic(tmp_path):
    dst = tmp_path / "s.json"
    shutil.copy(bundled_scenario("dichotomy_trig"), dst)
    rep = run_scenario(dst, "delta", out=tmp_path / "o")
    assert rep["bounded_solution"]["x"] == pytest.approx([0.0, -0.005], abs=1e-8)
