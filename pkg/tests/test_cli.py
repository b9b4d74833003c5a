import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from laenet.cli import main, sweep_resources
from laenet.ppo import GeometricHeuristic
from laenet.scenario import default_scenario, dump_scenario, load_scenario_file

FIXTURE = Path(__file__).parent / "fixtures" / "mock_design.json"


def run(argv, out):
    code = main(argv + ["--out", str(out), "--quiet"])
    index = json.loads((out / "index.json").read_text())
    return code, index


def run_dir(out, command):
    index = json.loads((out / "index.json").read_text())
    ids = [k for k, v in index.items() if v["command"] == command]
    assert len(ids) == 1
    return out / ids[0]


def read_csv(p):
    with open(p) as fh:
        return list(csv.reader(fh))


def outputs(d):
    # record.json carries wall-clock time; everything else must be byte-stable
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "record.json"}


def test_config_prints_yaml(capsys, tmp_path):
    assert main(["config"]) == 0
    text = capsys.readouterr().out
    p = tmp_path / "s.yaml"
    p.write_text(text)
    assert load_scenario_file(str(p)) == default_scenario()


def test_arpo_zeta_zero_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["arpo", "--zeta", "0"], a)[0] == 0
    assert run(["arpo", "--zeta", "0"], b)[0] == 0
    da, db = run_dir(a, "arpo"), run_dir(b, "arpo")
    assert da.name == db.name and outputs(da) == outputs(db)
    sol = json.loads((da / "arpo_solution.json").read_text())
    assert sol["power_per_user_w"] == [0.1] * 4
    rec = json.loads((da / "record.json").read_text())
    assert set(rec["outputs"]) == {"arpo_solution.json"} and rec["run_id"] == da.name


def test_arpo_zeta_sweep_monotone(tmp_path):
    assert run(["arpo", "--bandwidth-hz", "2e6", "--sweep-zeta", "100:1000:4"], tmp_path)[0] == 0
    rows = read_csv(run_dir(tmp_path, "arpo") / "zeta_sweep.csv")
    assert rows[0] == ["zeta", "total_power_w", "max_latency_s"]
    vals = np.array(rows[1:], float)
    assert list(vals[:, 0]) == [100, 400, 700, 1000]
    assert np.all(np.diff(vals[:, 1]) <= 0) and np.all(np.diff(vals[:, 2]) >= 0)


def test_arpo_infeasible_reports(tmp_path, capsys):
    sc = default_scenario()
    users = tuple(u.__class__(u.id, u.pos_m, u.n_queries, 0.99) for u in sc.users)
    p = tmp_path / "bad.yaml"
    p.write_text(dump_scenario(sc.replace(users=users)))
    assert main(["arpo", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    err = capsys.readouterr().err
    assert "error" in err and "0" in err


def test_train_baseline_and_short_training(tmp_path):
    assert run(["train", "--baseline", "rp", "--seeds", "2"], tmp_path)[0] == 0
    d = run_dir(tmp_path, "train")
    m = json.loads((d / "metrics.json").read_text())
    assert m["policy"] == "rp" and len(m["final_max_latency_s"]) == 2
    assert not any(p.name.endswith(".ckpt") for p in d.iterdir())
    out2 = tmp_path / "t"
    assert run(["train", "--reward", "risk", "--episodes", "3", "--seeds", "1"], out2)[0] == 0
    d2 = run_dir(out2, "train")
    curve = read_csv(d2 / "curve.csv")
    assert curve[0] == ["episode", "mean_max_latency_s", "var_max_latency_s"] and len(curve) == 4
    assert (d2 / "seed0_policy.ckpt").exists()
    # the saved checkpoint drives the sweep and batch commands
    assert run(["sweep-resources", "--policy", str(d2 / "seed0_policy.ckpt"), "--bandwidth-list", "1e6",
                "--pmax-list", "0.1"], tmp_path / "s")[0] == 0


def test_train_reward_file(tmp_path):
    prog = tmp_path / "r.dsl"
    prog.write_text("-max(next_backlog) / max(init_backlog)\n")
    assert run(["train", "--reward", str(prog), "--episodes", "2", "--seeds", "1"], tmp_path)[0] == 0


def test_design_mock_replay_and_rounds(tmp_path):
    args = ["design", "--client", f"mock:{FIXTURE}", "--k", "4", "--rounds", "3", "--train-episodes", "5"]
    assert run(args, tmp_path / "a")[0] == 0
    assert run(args, tmp_path / "b")[0] == 0
    da, db = run_dir(tmp_path / "a", "design"), run_dir(tmp_path / "b", "design")
    assert outputs(da) == outputs(db)
    tr = json.loads((da / "transcript.json").read_text())
    assert len(tr["rounds"]) == 3
    code, _ = run(["design", "--replay", str(da / "transcript.json")], tmp_path / "r")
    assert code == 0
    replayed = run_dir(tmp_path / "r", "design-replay")
    assert (replayed / "best_program.dsl").read_text() == (da / "best_program.dsl").read_text()
    assert run(["design", "--client", f"mock:{FIXTURE}", "--rounds", "1", "--train-episodes", "3"],
               tmp_path / "one")[0] == 0
    one = json.loads((run_dir(tmp_path / "one", "design") / "transcript.json").read_text())
    assert len(one["rounds"]) == 1 and len(one["rounds"][0]["responses"]) == 1


def test_design_abort_keeps_transcript(tmp_path, capsys):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"responses": ["junk", "junk"]}))
    code = main(["design", "--client", f"mock:{f}", "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 3
    tr = json.loads((run_dir(tmp_path / "o", "design") / "transcript.json").read_text())
    assert tr["rounds"][0]["responses"] == ["junk", "junk"]


def test_sweep_resources_monotone(tmp_path):
    assert run(["sweep-resources"], tmp_path)[0] == 0
    rows = read_csv(run_dir(tmp_path, "sweep-resources") / "latency_matrix.csv")
    assert rows[0] == ["p_max_w", "B=1e+06", "B=2e+06", "B=3e+06"]
    m = np.array([r[1:] for r in rows[1:]], float)
    assert np.all(np.diff(m, axis=1) <= 0) and np.all(np.diff(m, axis=0) <= 0)
    sc = default_scenario()
    again = sweep_resources(sc, [1e6, 2e6, 3e6], [0.1, 0.3, 0.5], GeometricHeuristic(sc.phys, 150.0))
    assert np.array_equal(again, m)


def test_batches_continuity_and_accounting(tmp_path):
    sc = default_scenario()
    paths = []
    for k, sign in enumerate((1, -1, 1)):
        users = tuple(u.__class__(u.id, (sign * u.pos_m[0], sign * u.pos_m[1], 0.0), u.n_queries, u.acc_min)
                      for u in sc.users)
        p = tmp_path / f"b{k}.yaml"
        p.write_text(dump_scenario(sc.replace(users=users)))
        paths.append(str(p))
    assert run(["batches", *paths], tmp_path / "o")[0] == 0
    d = run_dir(tmp_path / "o", "batches")
    ends = []
    for k in range(3):
        rows = read_csv(d / f"batch{k}_trajectory.csv")
        ends.append((rows[1][2:5], rows[-1][2:5]))
    assert ends[1][0] == ends[0][1] and ends[2][0] == ends[1][1]
    rec = json.loads((d / "record.json").read_text())
    total = sum(json.loads((d / f"batch{k}_summary.json").read_text())["elapsed_s"] for k in range(3))
    assert rec["metrics"]["mission_time_s"] == pytest.approx(total, rel=1e-12)
    mission = read_csv(d / "mission_trajectory.csv")
    assert float(mission[-1][3]) == pytest.approx(total, rel=1e-9)


def test_single_batch_matches_train_baseline(tmp_path):
    assert run(["batches", "--policy", "gh"], tmp_path / "b")[0] == 0
    assert run(["train", "--baseline", "gh", "--seeds", "1"], tmp_path / "t")[0] == 0
    b = (run_dir(tmp_path / "b", "batches") / "batch0_trajectory.csv").read_text()
    t = (run_dir(tmp_path / "t", "train") / "seed0_trajectory.csv").read_text()
    assert b == t


def test_seed_env(monkeypatch, tmp_path):
    monkeypatch.setenv("LAENET_SEED", "7")
    assert run(["train", "--baseline", "hover", "--seeds", "1"], tmp_path)[0] == 0
    assert (run_dir(tmp_path, "train") / "seed7_trajectory.csv").exists()
