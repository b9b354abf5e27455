import json

import pytest

from braggcomb.cli import DEFAULTS, load_config, main
from braggcomb.errors import ConfigError


def _cfg(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def test_defaults_validate():
    cfg = load_config()
    assert cfg["k0"] == DEFAULTS["k0"]


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="kick.shape"):
        load_config(_cfg(tmp_path, {"kick": {"shape": 1}}))


def test_bad_json_reports_line(tmp_path, capsys):
    code = main(["bloch", "--config", _cfg(tmp_path, '{\n "k0": 1,\n}'), "--out", str(tmp_path)])
    assert code == 2
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("bad,field", [({"n_traj": 0}, "n_traj"), ({"law": "warp"}, "law"),
                                       ({"comb": {"alpha": -1}}, "comb.alpha"),
                                       ({"quantum": {"mode": "x"}}, "quantum.mode")])
def test_invalid_fields(tmp_path, capsys, bad, field):
    assert main(["simulate", "--config", _cfg(tmp_path, bad), "--out", str(tmp_path)]) == 2
    assert field in capsys.readouterr().err


def test_bloch_deterministic(tmp_path):
    cfg = _cfg(tmp_path, {"bloch": {"k_min": 0.05, "k_max": 3.0, "step": 0.05, "gaps": [1, 2]}})
    for d in ("a", "b"):
        assert main(["bloch", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "spectrum.csv").read_bytes()
    assert a == (tmp_path / "b" / "spectrum.csv").read_bytes()
    assert a.splitlines()[0] == b"k,q,energy,n,theta,r_minus,big_r_minus"
    # the grid crosses half-integers, which are nudged
    assert len(a.splitlines()) == 61


def test_simulate_independent_of_jobs(tmp_path):
    cfg = _cfg(tmp_path, {"n_traj": 12, "horizons": [5.0, 20.0], "flip_cap": 8, "law": "band"})
    for j in ("1", "2"):
        assert main(["simulate", "--config", cfg, "--seed", "7", "--jobs", j,
                     "--out", str(tmp_path / j)]) == 0
    for f in ("snapshots.csv", "flips.csv"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes()


def test_simulate_json(tmp_path):
    cfg = _cfg(tmp_path, {"n_traj": 3, "horizons": [2.0]})
    assert main(["simulate", "--config", cfg, "--format", "json", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "snapshots.json").read_text())
    assert len(d["snapshots"]) == 3


def test_verify_and_report(tmp_path):
    cfg = _cfg(tmp_path, {"verify": {"criteria": [1, 10]}, "outputs": {"dir": str(tmp_path)}})
    assert main(["verify", "--config", cfg]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["pass"] and [c["criterion"] for c in rep["criteria"]] == [1, 10]
    assert main(["report", "--config", cfg]) == 0
    assert "| 1 |" in (tmp_path / "report.md").read_text()


def test_report_without_verify(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_quantum_outputs(tmp_path):
    cfg = _cfg(tmp_path, {"lambda": [0.2, 0.1], "quantum": {"t": 1.0, "n": 10}})
    assert main(["quantum", "--config", cfg, "--out", str(tmp_path)]) == 0
    q = json.loads((tmp_path / "quantum.json").read_text())
    assert len(q["l1"]) == 2
    assert (tmp_path / "histogram_lambda_0.1.csv").read_text().startswith("bin_center,quantum_mass,classical_mass")
