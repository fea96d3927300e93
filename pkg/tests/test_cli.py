import json
import subprocess
import sys

import numpy as np
import pytest

from collabls import transport as tp
from collabls.cli import main

CONFIG = {
    "model": {"kind": "synthetic", "d": 4, "noise_var": 1.0},
    "masks": {"kind": "explicit", "views": [[0, 1, 2, 3], [0, 1], [2, 3]]},
    "methods": ["collab", "naive-collab"],
    "n_grid": [60],
    "trials": 3,
    "seed": 5,
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return path


def test_run_csv_and_json(config_path, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(config_path), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,n,mean_risk,ci_low,ci_high,reals_sent_mean,reals_received_mean,trials"
    assert len(lines) == 3
    out_json = tmp_path / "r.json"
    assert main(["run", "--config", str(config_path), "--format", "json", "--out", str(out_json)]) == 0
    doc = json.loads(out_json.read_text())
    assert doc["config"]["seed"] == 5 and len(doc["records"]) == 2


def test_seed_override_and_threads(config_path, tmp_path):
    paths = [tmp_path / f"{k}.csv" for k in range(3)]
    main(["run", "--config", str(config_path), "--out", str(paths[0])])
    main(["run", "--config", str(config_path), "--out", str(paths[1]), "--threads", "3"])
    main(["run", "--config", str(config_path), "--out", str(paths[2]), "--seed", "6"])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_bytes() != paths[2].read_bytes()


def test_dump_frames(config_path, tmp_path):
    dump = tmp_path / "frames"
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path / "r.csv"), "--dump-frames", str(dump)]) == 0
    frames = sorted((dump / "collab" / "n60" / "trial0000").iterdir())
    assert [f.name for f in frames][:3] == ["000000_up_0.bin", "000001_up_1.bin", "000002_up_2.bin"]
    msg = tp.decode_message(frames[1].read_bytes())
    assert msg.kind == tp.MessageKind.SUMMARY and msg.real_count == 2 * 2 + 2 + 1


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(CONFIG, trials=0)))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    assert main(["run"]) == 2
    assert main(["theory", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_all_trials_failed_exit_code(tmp_path, capsys):
    path = tmp_path / "fail.json"
    path.write_text(json.dumps(dict(CONFIG, masks={"kind": "explicit", "views": [[0, 1], [1, 2]]})))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "r.csv")]) == 3
    assert "failed in every trial" in capsys.readouterr().err


def test_theory_dump(config_path, tmp_path):
    out = tmp_path / "t.json"
    assert main(["theory", "--config", str(config_path), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    cg = np.array(doc["c_gaussian"])
    np.testing.assert_allclose(cg, np.array(doc["c_imp_glb_oracle"]), atol=1e-10)
    assert doc["trace_sigma_c_gaussian"] == pytest.approx(np.trace(np.array(doc["sigma"]) @ cg))
    assert [a["observed"] for a in doc["agents"]] == CONFIG["masks"]["views"]
    assert doc["agents"][0]["irreducible_risk"] == 0.0


def test_check_subset(capsys):
    assert main(["check", "--only", "1", "3", "8"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 3 and "3/3 criteria passed" in out
    assert main(["check", "--only", "99"]) == 2


def test_module_entry_point(config_path):
    proc = subprocess.run(
        [sys.executable, "-m", "collabls", "run", "--config", str(config_path), "--format", "csv"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("method,n,mean_risk")
