import json
import os

import pytest

from thinlab.cli import main

EXAMPLE = {"generators": [[[2, 3], [1, 2]], [[6, 35], [1, 6]]]}


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "G.json"
    path.write_text(json.dumps(EXAMPLE))
    return str(path)


def _artifacts(out_dir, prefix):
    return sorted(p for p in os.listdir(out_dir) if p.startswith(prefix))


def test_validate_ok(config, capsys):
    assert main(["validate", "--config", config]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["ok"]


def test_validate_rejects_overlap(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"generators": [[[2, 3], [1, 2]], [[2, 3], [1, 2]]]}))
    assert main(["validate", "--config", str(path)]) == 2


def test_delta_json(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["delta", "--config", config, "--out", out]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert 0.32 < payload["delta"] < 0.33
    assert payload["residual"] < 1e-10
    assert _artifacts(out, "delta")


def test_rpf_artifact(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["rpf", "--config", config, "--a", "0.02", "--out", out]) == 0
    (name,) = _artifacts(out, "rpf")
    body = open(os.path.join(out, name)).read()
    assert body.splitlines()[0] == "symbol,node,x,h,nu"


def test_decay_rejects_non_squarefree(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    code = main(["decay", "--config", config, "--q", "4", "--out", out])
    assert code == 2
    assert "NotSquareFree" in capsys.readouterr().err


def test_cayley_deterministic(config, tmp_path, capsys):
    out1 = str(tmp_path / "o1")
    out2 = str(tmp_path / "o2")
    assert main(["cayley", "--config", config, "--q", "5,7", "--p", "3", "--out", out1]) == 0
    assert main(["cayley", "--config", config, "--q", "5,7", "--p", "3", "--out", out2]) == 0
    b1 = open(os.path.join(out1, _artifacts(out1, "cayley")[0])).read()
    b2 = open(os.path.join(out2, _artifacts(out2, "cayley")[0])).read()
    assert b1 == b2
    assert b1.splitlines()[0] == "q,degree,lambda2,epsilon"


def test_decay_and_report(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["decay", "--config", config, "--q", "5", "--p", "3", "--a", "0.0",
                 "--b", "0.3", "--seed", "7", "--depth", "4", "--out", out]) == 0
    assert main(["cayley", "--config", config, "--q", "5", "--p", "3", "--out", out]) == 0
    assert main(["report", "--out", out]) == 0
    payload = json.loads(open(os.path.join(out, _artifacts(out, "report")[0])).read())
    assert "uniformity" in payload
    assert payload["uniformity"]["decay_below_bound"]["5"] is True
    assert float(payload["uniformity"]["epsilon_min"]) > 0


def test_twist_csv(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["twist", "--config", config, "--b", "5", "--out", out]) == 0
    body = open(os.path.join(out, _artifacts(out, "twist")[0])).read()
    lines = body.splitlines()
    assert lines[0] == "b,radius"
    assert 0.0 < float(lines[1].split(",")[1]) < 1.0


def test_flatten_json(config, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["flatten", "--config", config, "--q", "5", "--r", "8", "--l", "4",
                 "--p", "3", "--out", out]) == 0
    payload = json.loads(open(os.path.join(out, _artifacts(out, "flatten")[0])).read())
    assert payload["passed"] is True
    assert payload["q"] == 5 and payload["r"] == 8


def test_thread_cap_env(monkeypatch):
    from thinlab.cli import n_workers
    monkeypatch.setenv("THINLAB_THREADS", "2")
    assert n_workers() == 2
