import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from ddbst.cli import main
from ddbst.io import dump_observable, dump_state


@pytest.fixture
def obs_file(tmp_path):
    p = tmp_path / "obs.json"
    dump_observable(np.diag([1.0, 0.0, 0.0, 0.0]), p)
    return p


def _manifest(out):
    m = json.loads((out / "run_manifest.json").read_text())
    for item in m["outputs"]:
        digest = hashlib.sha256((out / item["path"]).read_bytes()).hexdigest()
        assert digest == item["sha256"]
    return m


def test_estimate_identity(tmp_path):
    obs = tmp_path / "id.json"
    dump_observable(np.eye(4), obs)
    out = tmp_path / "run"
    assert main(["estimate", "--observable", str(obs), "--shots", "100", "--seed", "1",
                 "--out", str(out)]) == 0
    rep = json.loads((out / "estimate.json").read_text())
    assert rep["estimate"] == 1.0
    m = _manifest(out)
    assert m["seed"] == 1 and m["command"] == "estimate"


def test_estimate_deterministic(tmp_path, obs_file):
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["estimate", "--observable", str(obs_file), "--state", "haar", "--shots",
                     "2000", "--seed", "7", "--oracle", "--shadow-log", "--out", str(out)]) == 0
        blobs.append(((out / "estimate.json").read_bytes(), (out / "shadow.bin").read_bytes()))
    assert blobs[0] == blobs[1]
    rep = json.loads(blobs[0][0])
    assert rep["abs_error"] < 5 * rep["std_error"] + 1e-12


def test_seed_from_env(tmp_path, obs_file, monkeypatch):
    monkeypatch.setenv("DDB_SHADOW_SEED", "13")
    out = tmp_path / "r"
    assert main(["estimate", "--observable", str(obs_file), "--shots", "10",
                 "--out", str(out)]) == 0
    assert _manifest(out)["seed"] == 13


def test_variance_audit(tmp_path):
    out = tmp_path / "v"
    assert main(["variance", "--dim", "8", "--worst-case", "--states", "3", "--seed", "2",
                 "--out", str(out)]) == 0
    lines = (out / "variance_audit.csv").read_text().splitlines()
    assert lines[0] == "# ddbst 0.1.0 seed=2"
    ids = [ln.split(",")[0] for ln in lines[2:]]
    assert ids == ["p01_plus", "maximally_mixed", "0", "1", "2"]
    _manifest(out)


def test_proportions(tmp_path):
    out = tmp_path / "p"
    assert main(["proportions", "--n-range", "2..3", "--trials", "20", "--out", str(out)]) == 0
    assert (out / "proportions.csv").read_text().startswith("# ddbst")
    assert set(json.loads((out / "proportions.json").read_text())) == {"4", "2n", "n^2"}
    _manifest(out)


def test_stabilizer(tmp_path):
    out = tmp_path / "s"
    assert main(["stabilizer", "--n", "5", "--r", "3", "--seed", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "stabilizer_estimate.json").read_text())
    assert rep["report"]["method"] == "direct"
    assert rep["abs_error"] < 1e-12


def test_bench_small(tmp_path):
    out = tmp_path / "b"
    assert main(["bench", "--dims", "16,32", "--shots", "1000", "--repeats", "1",
                 "--n-range", "8,16", "--out", str(out)]) == 0
    summary = json.loads((out / "bench_summary.json").read_text())
    assert "per_shot_ratio_max_over_min_dim" in summary and "reduction_loglog_slope" in summary


def test_exit_codes(tmp_path):
    assert main(["proportions", "--trials", "0", "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["estimate", "--observable", str(bad), "--out", str(tmp_path / "y")]) == 3
    st = tmp_path / "st.json"
    st.write_text(json.dumps({"dim": 2, "real": [[1, 0], [0, 1]], "imag": [[0, 0], [0, 0]]}))
    obs = tmp_path / "o.json"
    dump_observable(np.eye(2), obs)
    assert main(["estimate", "--observable", str(obs), "--state", "file", "--state-file",
                 str(st), "--out", str(tmp_path / "z")]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--no-such-flag"])
    assert exc.value.code == 2


def test_state_file(tmp_path):
    st, obs = tmp_path / "st.json", tmp_path / "o.json"
    dump_state(np.diag([1.0, 0.0]), st)
    dump_observable(np.eye(2), obs)
    assert main(["estimate", "--observable", str(obs), "--state", "file", "--state-file",
                 str(st), "--out", str(tmp_path / "z")]) == 0


def test_console_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ddbst.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
