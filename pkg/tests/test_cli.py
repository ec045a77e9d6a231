import io
import json
import math
from pathlib import Path

import pytest

from parisi_lab.cli import config_hash, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def _cfg(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_at_line(tmp_path):
    code, out, err = _run(["at-line", "--config", _cfg(tmp_path, {"mixture": {"sk_beta": 1.5}})])
    assert code == 0
    res = json.loads(out)["result"]
    assert res["rs_consistent"] is False
    assert res["lhs_ineq"] == pytest.approx(2.25, abs=1e-9)
    echoed = json.loads(err.splitlines()[0])
    assert echoed["config_hash"] == config_hash(echoed["config"])


def test_functional_and_hash(tmp_path):
    cfg = {"mixture": {"sk_beta": 0.8}, "measure": {"atoms": [0.0], "weights": [1.0]}}
    code, out, _ = _run(["parisi", "functional", "--config", _cfg(tmp_path, cfg)])
    assert code == 0
    payload = json.loads(out)
    assert payload["result"]["value"] == pytest.approx(math.log(2) + 0.16, abs=1e-10)
    assert payload["config_hash"] == config_hash(payload["config"])
    assert payload["seed"] == 0


def test_seed_override(tmp_path):
    code, out, _ = _run(["at-line", "--seed", 17])
    assert code == 0 and json.loads(out)["seed"] == 17


def test_outputs_deterministic(tmp_path):
    cfg = _cfg(tmp_path, {"mixture": {"coeffs": {"2": 0.36, "3": 0.072}},
                          "xi0": {"coeffs": {"2": 0.36, "3": 0.036}}, "h": 0.3,
                          "oracle": {"N": 5, "n_disorder": 6}})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _run(["oracle", "overlap", "--config", cfg, "--out", a])[0] == 0
    assert _run(["oracle", "overlap", "--config", cfg, "--out", b])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    ca, cb = a.with_suffix(".csv"), b.with_suffix(".csv")
    assert ca.read_bytes() == cb.read_bytes()
    first = ca.read_text().splitlines()[0]
    assert first.startswith("# config_hash=") and json.loads(a.read_text())["config_hash"] in first
    assert ca.read_text().splitlines()[1] == "q,probability,std_err"


def test_csv_only_output(tmp_path):
    cfg = _cfg(tmp_path, {"mixture": {"sk_beta": 0.5}, "grid": {"dx": 0.1}})
    out = tmp_path / "phi.csv"
    assert _run(["parisi", "solve", "--config", cfg, "--out", out])[0] == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "s,x,phi,dphi,ddphi"


def test_csv_refused_without_table(tmp_path):
    assert _run(["at-line", "--out", tmp_path / "x.csv"])[0] == 1


def test_refusal_exit_code(tmp_path):
    cfg = _cfg(tmp_path, {"mixture": {"coeffs": {"2": 0.1, "3": 1.0}}, "h": 0.3,
                          "scan": {"mode": "positivity"}})
    out = tmp_path / "r.json"
    code, text, _ = _run(["gt", "scan", "--config", cfg, "--out", out])
    assert code == 2
    payload = json.loads(text)
    assert payload["refused"] and payload["hypothesis"] == "convexity"
    assert json.loads(out.read_text())["hypothesis"] == "convexity"


def test_mode_override_refuses(tmp_path):
    code, text, _ = _run(["gt", "scan", "--config", CONFIGS / "positivity_sk.json",
                          "--mode", "nonnegativity"])
    assert code == 2 and json.loads(text)["hypothesis"] == "field"


@pytest.mark.parametrize("argv", [
    ["nosuch"],
    ["parisi", "nosuch"],
    ["at-line", "extra"],
    ["at-line", "--threads", "0"],
])
def test_usage_errors(argv):
    assert _run(argv)[0] == 1


def test_unknown_config_key(tmp_path):
    assert _run(["at-line", "--config", _cfg(tmp_path, {"bogus": 1})])[0] == 1


def test_bad_mixture(tmp_path):
    cfg = _cfg(tmp_path, {"mixture": {"coeffs": {"2": -1.0}}})
    assert _run(["at-line", "--config", cfg])[0] == 1


def test_gt_bound_lambda(tmp_path):
    cfg = _cfg(tmp_path, {"mixture": {"sk_beta": 0.8}, "q": 0.0, "lambda": 0.0,
                          "measure": {"atoms": [0.0], "weights": [1.0]}})
    code, out, _ = _run(["gt", "bound", "--config", cfg])
    assert code == 0
    assert json.loads(out)["result"]["Lambda"] == pytest.approx(2 * (math.log(2) + 0.16), abs=1e-6)


def test_oracle_constrained_point(tmp_path):
    cfg = _cfg(tmp_path, {"mixture": {"sk_beta": 1.0}, "oracle": {"N": 4, "n_disorder": 4, "q": 0.5}})
    code, out, _ = _run(["oracle", "constrained", "--config", cfg])
    res = json.loads(out)["result"]
    assert code == 0 and res["pair_count"] == 16 * 4


def test_threads_env(monkeypatch):
    monkeypatch.setenv("PARISI_LAB_THREADS", "abc")
    assert _run(["at-line"])[0] == 1
