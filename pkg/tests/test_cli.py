import json

import numpy as np
import pytest
import yaml

from torusflow import cli, flow, torus

J_BASE = {
    "geometry": {"n": 2, "N": 8},
    "chi": {"chi0": "identity", "rho": {"modes": [[0.01, [1, 0, 0, 1], 0.3]]}},
    "operator": {"kind": "JQuotient", "k": 2, "ell": 1, "c_const": "auto"},
    "psi": 0,
}
MA1 = {
    "geometry": {"n": 1, "N": 16},
    "operator": {"kind": "LogMA"},
    "psi": {"modes": [[0.3, [1, 0], 0.0]], "transform": "log1p",
            "normalize": "exp_mean_one"},
}


def _write(tmp_path, data, name="cfg.yaml", **updates):
    d = dict(data)
    d.update(updates)
    d.setdefault("outputs", {"dir": "out"})
    p = tmp_path / name
    p.write_text(yaml.safe_dump(d))
    return p


def test_run_converges_and_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, MA1, tolerances={"snapshot_every": 500})
    assert cli.main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and abs(summary["c"]) < 1e-8
    assert summary["config"]["operator"]["kind"] == "LogMA"
    assert summary["config"]["tolerances"]["snapshot_every"] == 500
    assert summary["max_principle"] is True and summary["eta"] > 0
    recs = flow.read_csv(out / "diagnostics.csv")
    assert len(recs) == summary["steps"] + 1
    snaps = sorted(out.glob("snapshot_*.hfld"))
    assert snaps[0].name == "snapshot_000000.hfld"
    hdr, u = torus.read_field(out / "final_u.hfld")
    assert (hdr.n, hdr.N) == (1, 16) and abs(u.mean()) < 1e-14
    assert json.loads(capsys.readouterr().out.strip())["converged"]


def test_run_out_override(tmp_path):
    cfg = _write(tmp_path, J_BASE)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "summary.json").exists()


def test_run_inadmissible_u0_exit_1(tmp_path, capsys):
    cfg = _write(tmp_path, MA1, u0={"modes": [[0.5, [1, 0], 0.0]]})
    assert cli.main(["run", str(cfg)]) == 1
    assert "not admissible" in capsys.readouterr().err


def test_run_cone_exit_2(tmp_path):
    steep = dict(MA1, psi={"modes": [[0.8, [1, 0], 0.0]], "transform": "log1p"})
    cfg = _write(tmp_path, steep, tolerances={"cone_floor": 0.5})
    assert cli.main(["run", str(cfg)]) == 2
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["reason"] == "cone_exit"
    assert flow.read_csv(tmp_path / "out" / "diagnostics.csv")


def test_run_t_max_exit_3(tmp_path):
    cfg = _write(tmp_path, MA1, tolerances={"t_max": 0.0})
    assert cli.main(["run", str(cfg)]) == 3


def test_check_ok_and_positivity(tmp_path, capsys):
    cfg = _write(tmp_path, J_BASE)
    assert cli.main(["check", str(cfg)]) == 0
    body = json.loads((tmp_path / "out" / "check.json").read_text())
    assert body["verdict"] and body["margin"] > 0
    assert body["positivity"]["margin"] == pytest.approx(body["margin"], abs=1e-10)


def test_check_not_subsolution_exit_4(tmp_path):
    cfg = _write(tmp_path, J_BASE, psi=1.0, operator={"kind": "JQuotient", "k": 2, "ell": 1, "c_const": 1.0})
    assert cli.main(["check", str(cfg)]) == 4
    body = json.loads((tmp_path / "out" / "check.json").read_text())
    assert body["verdict"] is False and body["worst_direction"] is not None


def test_check_unbounded_note(tmp_path, capsys):
    cfg = _write(tmp_path, MA1)
    assert cli.main(["check", str(cfg)]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["margin"] is None and body["note"].startswith("unbounded case")


def test_check_inadmissible_exit_1(tmp_path):
    cfg = _write(tmp_path, MA1, u_under={"modes": [[0.5, [1, 0], 0.0]]})
    assert cli.main(["check", str(cfg)]) == 1


def test_oracle_and_flow_diff(tmp_path):
    cfg = _write(tmp_path, J_BASE)
    assert cli.main(["run", str(cfg)]) == 0
    assert cli.main(["oracle", str(cfg)]) == 0
    body = json.loads((tmp_path / "out" / "oracle.json").read_text())
    assert body["success"] and body["flow_diff_sup"] < 1e-7
    assert body["c_star"] == pytest.approx(0.0, abs=1e-10)
    hdr, _ = torus.read_field(tmp_path / "out" / "oracle_u.hfld")
    assert hdr.kind == torus.KIND_SCALAR


def test_oracle_failure_exit_5(tmp_path):
    cfg = _write(tmp_path, MA1, u0={"modes": [[0.5, [1, 0], 0.0]]})
    assert cli.main(["oracle", str(cfg)]) == 5
    assert json.loads((tmp_path / "out" / "oracle.json").read_text())["success"] is False


def test_constants(tmp_path, capsys):
    cfg = _write(tmp_path, J_BASE, chi={"chi0": 2.0})
    assert cli.main(["constants", str(cfg)]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["c"] == pytest.approx(0.5)
    np.testing.assert_allclose(body["class_integrals"], [2, 4, 8])
    cfg = _write(tmp_path, MA1, name="ma.yaml")
    assert cli.main(["constants", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["c"] == pytest.approx(0.0, abs=1e-12)


def test_plotdata(tmp_path):
    cfg = _write(tmp_path, MA1)
    assert cli.main(["run", str(cfg)]) == 0
    run_dir = tmp_path / "out"
    assert cli.main(["plotdata", str(run_dir)]) == 0
    rows = len(flow.read_csv(run_dir / "diagnostics.csv"))
    pd = run_dir / "plotdata"
    for col in flow.CSV_COLUMNS[1:]:
        assert np.loadtxt(pd / f"{col}.dat").shape == (rows, 2)
    plots = [ln for ln in (pd / "plot.gp").read_text().splitlines() if ln.startswith("plot ")]
    assert len(plots) == len(flow.CSV_COLUMNS) - 1
    for fig in ("decay.png", "monitors.png", "dtu_bounds.png"):
        assert (pd / fig).read_bytes()[:4] == b"\x89PNG"


def test_plotdata_empty(tmp_path, capsys):
    assert cli.main(["plotdata", str(tmp_path)]) == 1
    (tmp_path / "diagnostics.csv").write_text(",".join(flow.CSV_COLUMNS) + "\n")
    assert cli.main(["plotdata", str(tmp_path)]) == 1
    assert "no data rows" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    ("geometry: {n: 2, N: 8}\noperator: {kind: Ricci}\n", "unknown operator kind"),
    ("geometry: {n: 2}\noperator: {kind: LogMA}\n", "n and N are required"),
    ("geometry: {n: 2, N: 8}\noperator: {kind: LogMA}\nbogus: 1\n", "unknown sections"),
    ("geometry: {n: 2, N: 8}\n  bad: [\n", "cfg.yaml:"),
    ("geometry: {n: 1, N: 8}\noperator: {kind: LogMA}\npsi: {modes: [[1, [4, 0]]]}\n", "Nyquist"),
    ("geometry: {n: 1, N: 8}\noperator: {kind: LogMA}\ntolerances: {tol: 1}\n", "unknown keys"),
    ("geometry: {n: 2, N: 8, alpha: [[1, 2], [2, 1]]}\noperator: {kind: LogMA}\n", "positive definite"),
    ("geometry: {n: 2, N: 8}\nchi: {chi0: -1}\noperator: {kind: JQuotient, k: 2, ell: 1, c_const: auto}\n",
     "not positive"),
])
def test_config_errors(tmp_path, capsys, text, needle):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    assert cli.main(["check", str(p)]) == 1
    assert needle in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 1
    assert "no such config" in capsys.readouterr().err


def test_json_config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(dict(J_BASE, outputs={"dir": "o"})))
    assert cli.main(["check", str(p)]) == 0


def test_python_module_entry():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "torusflow", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "plotdata" in r.stdout
