"""Command-line experiment runner.

Every command writes into ``<out>/<hash>/`` where the hash covers the command,
its arguments, the scenario and the seed, and registers the run in
``<out>/index.json``. Tabular outputs are CSV; summaries are JSON.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__, dsl
from .arpo import solve_scenario, zeta_sweep
from .designer import Budget, DesignAborted, DesignTranscript, HttpChatClient, MockClient, design, reselect
from .env import EpisodeLog, UavEnv, check_waypoints, concat_waypoints, run_batches, run_episode
from .ppo import (FixedPolicy, GeometricHeuristic, PpoAgent, RandomPolicy, TrainConfig, desk_config,
                  evaluate_policy, load_checkpoint, save_checkpoint, train)
from .rewards import default_risk_params, manual_bottleneck_reward, risk_reward
from .scenario import (ConfigError, Scenario, default_scenario, load_scenario_file, resolve_seed,
                       scenario_hash, scenario_to_dict, dump_scenario)
from .vlm_profile import InfeasibleAccuracy


# --------------------------------------------------------------------------
# Run records
# --------------------------------------------------------------------------

@dataclass
class RunRecord:
    command: str
    config: dict
    seed: int
    scenario_hash: str
    outputs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = __version__

    @property
    def run_id(self) -> str:
        key = json.dumps({"command": self.command, "config": self.config, "seed": self.seed,
                          "scenario": self.scenario_hash}, sort_keys=True)
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "command": self.command, "config": self.config, "seed": self.seed,
                "scenario_hash": self.scenario_hash, "outputs": list(self.outputs), "metrics": self.metrics,
                "wall_clock_s": self.wall_clock_s, "version": self.version}


class RunDir:
    def __init__(self, root: str, record: RunRecord):
        self.root = root
        self.record = record
        self.path = os.path.join(root, record.run_id)
        os.makedirs(self.path, exist_ok=True)
        self._t0 = time.perf_counter()

    def write(self, name: str, text: str) -> str:
        p = os.path.join(self.path, name)
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(text)
        if name not in self.record.outputs:
            self.record.outputs.append(name)
        return p

    def write_json(self, name: str, doc) -> str:
        return self.write(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def close(self) -> None:
        self.record.wall_clock_s = round(time.perf_counter() - self._t0, 3)
        with open(os.path.join(self.path, "record.json"), "w") as fh:
            json.dump(self.record.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        index_path = os.path.join(self.root, "index.json")
        index = {}
        if os.path.exists(index_path):
            with open(index_path) as fh:
                index = json.load(fh)
        index[self.record.run_id] = {"command": self.record.command, "seed": self.record.seed,
                                     "scenario_hash": self.record.scenario_hash}
        with open(index_path, "w") as fh:
            json.dump(index, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def _scenario(args) -> Scenario:
    sc = load_scenario_file(args.config) if getattr(args, "config", None) else default_scenario()
    if getattr(args, "bandwidth_hz", None) is not None:
        sc = sc.with_users(bandwidth_hz=float(args.bandwidth_hz))
    if getattr(args, "pmax_w", None) is not None:
        sc = sc.with_users(p_max_w=float(args.pmax_w))
    if getattr(args, "zeta", None) is not None:
        sc = sc.replace(zeta=float(args.zeta))
    return sc


def _pose(text: str | None):
    if text is None:
        return None
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("pose must be x,y,z")
    return tuple(parts)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _sweep_range(text: str) -> list[float]:
    lo, hi, steps = text.split(":")
    n = int(steps)
    if n < 1:
        raise argparse.ArgumentTypeError("steps must be >= 1")
    return [float(v) for v in np.linspace(float(lo), float(hi), n)] if n > 1 else [float(lo)]


def _reward_fn(name: str, scenario: Scenario, solution):
    env = UavEnv(scenario, solution)
    params = default_risk_params(env.init_backlog, scenario.phys.area_diagonal_m)
    if name == "risk":
        return (lambda ctx: risk_reward(ctx, params)), "risk"
    if name == "manual":
        return manual_bottleneck_reward, "manual"
    with open(name) as fh:
        text = fh.read()
    prog = dsl.parse(text)
    return dsl.reward_fn(prog, params.as_dict()), dsl.print_canonical(prog)


def _policy(name: str, scenario: Scenario, seed: int):
    if name == "gh":
        return GeometricHeuristic(scenario.phys, scenario.uav_start[2])
    if name == "rp":
        return RandomPolicy(scenario.phys, seed)
    if name == "hover":
        return FixedPolicy()
    return PpoAgent(load_checkpoint(name))


def _log_outputs(run: RunDir, prefix: str, log: EpisodeLog, scenario: Scenario) -> None:
    check_waypoints(log.waypoints, scenario.phys)
    run.write(f"{prefix}_trajectory.csv", log.to_csv())
    run.write_json(f"{prefix}_summary.json", log.summary())


def _base_config(args, scenario: Scenario) -> dict:
    skip = {"func", "out", "quiet"}
    d = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    d["scenario"] = scenario_to_dict(scenario)
    return d


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_config(args) -> int:
    sys.stdout.write(dump_scenario(_scenario(args)))
    return 0


def cmd_arpo(args) -> int:
    sc = _scenario(args)
    pose = _pose(args.pose)
    rec = RunRecord("arpo", _base_config(args, sc), 0, scenario_hash(sc))
    run = RunDir(args.out, rec)
    try:
        if args.sweep_zeta:
            rows = zeta_sweep(sc, _sweep_range(args.sweep_zeta), pose)
            run.write("zeta_sweep.csv", _csv(["zeta", "total_power_w", "max_latency_s"], rows))
            for z, p, lat in rows:
                _say(args, f"zeta={z:g}  sum P={p:.6g} W  max latency={lat:.6g} s")
        sol = solve_scenario(sc, pose, clamp_rule=args.clamp_rule)
    except InfeasibleAccuracy as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run.write_json("arpo_solution.json", sol.to_dict())
    rec.metrics = {"max_latency_s": sol.max_latency, "total_power_w": sol.total_power}
    run.close()
    _say(args, json.dumps(sol.to_dict(), indent=2))
    _say(args, f"run: {run.path}")
    return 0


def cmd_train(args) -> int:
    sc = _scenario(args)
    seed0 = resolve_seed(args.seed)
    sol = solve_scenario(sc)
    rec = RunRecord("train", _base_config(args, sc), seed0, scenario_hash(sc))
    run = RunDir(args.out, rec)
    run.write_json("arpo_solution.json", sol.to_dict())
    seeds = [seed0 + i for i in range(args.seeds)]
    finals = []
    if args.baseline:
        for s in seeds:
            pol = _policy(args.baseline, sc, s)
            log = evaluate_policy(sc, sol, pol, seeds=[s])[0]
            _log_outputs(run, f"seed{s}", log, sc)
            finals.append(log.max_latency)
        label = args.baseline
    else:
        reward, label = _reward_fn(args.reward, sc, sol)
        curves = []
        for s in seeds:
            cfg = desk_config(seed=s, episodes=args.episodes) if args.preset == "desk" else \
                TrainConfig(seed=s, episodes=args.episodes)
            res = train(sc, sol, reward, cfg)
            curves.append(res.curve)
            save_checkpoint(res.policy, os.path.join(run.path, f"seed{s}_policy.ckpt"),
                            meta={"seed": s, "reward": label, "episodes": args.episodes})
            run.record.outputs.append(f"seed{s}_policy.ckpt")
            log = evaluate_policy(sc, sol, res.agent(), seeds=[s])[0]
            _log_outputs(run, f"seed{s}", log, sc)
            finals.append(log.max_latency)
        arr = np.array(curves)
        run.write("curve.csv", _csv(["episode", "mean_max_latency_s", "var_max_latency_s"],
                                    [(i, float(m), float(v)) for i, (m, v) in
                                     enumerate(zip(arr.mean(axis=0), arr.var(axis=0)))]))
    rec.metrics = {"policy": label, "final_max_latency_s": finals, "mean_final_max_latency_s": float(np.mean(finals))}
    run.write_json("metrics.json", rec.metrics)
    run.close()
    _say(args, f"{label}: mean final max latency {np.mean(finals):.6g} s over {len(seeds)} seed(s)")
    _say(args, f"run: {run.path}")
    return 0


def cmd_design(args) -> int:
    sc = _scenario(args)
    seed = resolve_seed(args.seed)
    if args.replay:
        tr = DesignTranscript.load(args.replay)
        best = reselect(tr)
        rec = RunRecord("design-replay", _base_config(args, sc), seed, scenario_hash(sc))
        run = RunDir(args.out, rec)
        run.write("best_program.dsl", best.program_text + "\n")
        rec.metrics = {"selected_id": best.id, "matches_recorded": best.id == tr.selected_id}
        run.close()
        _say(args, f"replayed selection: {best.id}: {best.program_text}")
        return 0 if best.id == tr.selected_id else 1
    if args.client.startswith("mock:"):
        client = MockClient.from_file(args.client[5:])
    elif args.client == "http":
        client = HttpChatClient()
    else:
        print("error: --client must be mock:FILE or http", file=sys.stderr)
        return 2
    notes = None
    if args.insights:
        with open(args.insights) as fh:
            notes = fh.read()
    budget = Budget(train_episodes=args.train_episodes, eval_episodes=1, seeds=(seed,))
    rec = RunRecord("design", _base_config(args, sc), seed, scenario_hash(sc))
    run = RunDir(args.out, rec)
    try:
        best, tr = design(sc, client, k=args.k, rounds=args.rounds, budget=budget, human_notes=notes)
    except DesignAborted as exc:
        run.write("transcript.json", exc.transcript.dumps())
        rec.metrics = {"aborted": str(exc)}
        run.close()
        print(f"error: {exc} (partial transcript in {run.path})", file=sys.stderr)
        return 3
    run.write("transcript.json", tr.dumps())
    run.write("best_program.dsl", best.program_text + "\n")
    rec.metrics = {"selected_id": best.id, "client_calls": client.calls}
    run.close()
    _say(args, f"selected {best.id}: {best.program_text}")
    _say(args, f"run: {run.path}")
    return 0


class _ReplayActions:
    """Replays a recorded action sequence; hovers once it runs out."""

    def __init__(self, actions):
        self.actions = [np.asarray(a, float) for a in actions]
        self.k = 0

    def act(self, state) -> np.ndarray:
        a = self.actions[self.k] if self.k < len(self.actions) else np.zeros(3)
        self.k += 1
        return a


def _recorded_actions(log: EpisodeLog, horizon: int) -> list:
    w = np.asarray([p[:3] for p in log.waypoints])
    acts = list(np.diff(w, axis=0))
    return acts + [np.zeros(3)] * (horizon - len(acts))


def sweep_resources(sc: Scenario, bandwidths: Sequence[float], pmaxes: Sequence[float], policy,
                    seed: int = 0, frozen: bool = True) -> np.ndarray:
    """Max latency per (P_max row, bandwidth column).

    In frozen mode the policy flies once on the base scenario and every cell
    replays that trajectory; otherwise the policy runs in each cell.
    """
    if frozen:
        base = run_episode(UavEnv(sc, solve_scenario(sc)), policy, seed=seed)
        actions = _recorded_actions(base, sc.phys.horizon_slots)
    out = np.zeros((len(pmaxes), len(bandwidths)))
    for i, p in enumerate(pmaxes):
        for j, b in enumerate(bandwidths):
            cell = sc.with_users(bandwidth_hz=float(b), p_max_w=float(p))
            pol = _ReplayActions(actions) if frozen else policy
            out[i, j] = run_episode(UavEnv(cell, solve_scenario(cell)), pol, seed=seed).max_latency
    return out


def cmd_sweep_resources(args) -> int:
    sc = _scenario(args)
    seed = resolve_seed(args.seed)
    bws, pms = _floats(args.bandwidth_list), _floats(args.pmax_list)
    if not bws or not pms:
        print("error: bandwidth and P_max lists must be non-empty", file=sys.stderr)
        return 2
    mat = sweep_resources(sc, bws, pms, _policy(args.policy, sc, seed), seed, frozen=not args.closed_loop)
    rec = RunRecord("sweep-resources", _base_config(args, sc), seed, scenario_hash(sc))
    run = RunDir(args.out, rec)
    run.write("latency_matrix.csv", _csv(["p_max_w"] + [f"B={b:g}" for b in bws],
                                         [[p] + [float(v) for v in row] for p, row in zip(pms, mat)]))
    rec.metrics = {"min_s": float(mat.min()), "max_s": float(mat.max())}
    run.close()
    for p, row in zip(pms, mat):
        _say(args, f"P_max={p:g} W: " + "  ".join(f"{v:.4f}" for v in row))
    _say(args, f"run: {run.path}")
    return 0


def cmd_batches(args) -> int:
    scs = [load_scenario_file(p) for p in args.configs] if args.configs else [default_scenario()]
    seed = resolve_seed(args.seed)
    policy = _policy(args.policy, scs[0], seed)
    logs = run_batches(scs, policy, seed)
    rec = RunRecord("batches", {"configs": [scenario_to_dict(s) for s in scs], "policy": args.policy},
                    seed, scenario_hash(scs[0]))
    run = RunDir(args.out, rec)
    for k, log in enumerate(logs):
        _log_outputs(run, f"batch{k}", log, scs[k])
        if k > 0 and log.start_pose != logs[k - 1].end_pose:
            raise RuntimeError(f"batch {k} does not start where batch {k - 1} ended")
    path = concat_waypoints(logs)
    check_waypoints(path, scs[0].phys)
    run.write("mission_trajectory.csv", _csv(["x", "y", "z", "time_s"], path))
    total = float(sum(log.elapsed_s for log in logs))
    rec.metrics = {"mission_time_s": total, "batch_max_latency_s": [log.max_latency for log in logs]}
    run.close()
    _say(args, f"{len(logs)} batch(es), mission time {total:.6g} s")
    _say(args, f"run: {run.path}")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="laenet", description="UAV vision-language service simulator and optimizer")
    p.add_argument("--version", action="version", version=f"laenet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--config", help="scenario YAML (default: built-in scenario)")
        sp.add_argument("--out", default="runs", help="output root (default: runs)")
        sp.add_argument("--seed", type=int, default=None, help="seed (default: $LAENET_SEED or 0)")
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("config", help="print the scenario as YAML")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_config)

    sp = sub.add_parser("arpo", help="solve resolution and power allocation")
    common(sp)
    sp.add_argument("--zeta", type=float)
    sp.add_argument("--pose", help="UAV pose x,y,z (default: scenario start)")
    sp.add_argument("--bandwidth-hz", type=float, help="override every user's bandwidth")
    sp.add_argument("--pmax-w", type=float, help="override every user's power cap")
    sp.add_argument("--clamp-rule", choices=("project", "min"), default="project")
    sp.add_argument("--sweep-zeta", metavar="LO:HI:STEPS", help="also write a zeta sweep CSV")
    sp.set_defaults(func=cmd_arpo)

    sp = sub.add_parser("train", help="train a trajectory policy or evaluate a baseline")
    common(sp)
    sp.add_argument("--reward", default="risk", help="risk | manual | path to a reward program file")
    sp.add_argument("--baseline", choices=("rp", "gh", "hover"), help="evaluate a baseline instead of training")
    sp.add_argument("--episodes", type=int, default=300)
    sp.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    sp.add_argument("--preset", choices=("desk", "standard"), default="desk")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("design", help="run the reward-design loop")
    common(sp)
    sp.add_argument("--client", default="http", help="mock:FILE or http")
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--rounds", type=int, default=3)
    sp.add_argument("--insights", help="text file with designer notes")
    sp.add_argument("--train-episodes", type=int, default=100)
    sp.add_argument("--replay", metavar="TRANSCRIPT", help="re-select from a saved transcript")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("sweep-resources", help="latency over bandwidth x power cap")
    common(sp)
    sp.add_argument("--bandwidth-list", default="1e6,2e6,3e6")
    sp.add_argument("--pmax-list", default="0.1,0.3,0.5")
    sp.add_argument("--policy", default="gh", help="gh | rp | hover | checkpoint path")
    sp.add_argument("--closed-loop", action="store_true", help="run the policy in each cell")
    sp.set_defaults(func=cmd_sweep_resources)

    sp = sub.add_parser("batches", help="serve several user batches back to back")
    common(sp, scenario=False)
    sp.add_argument("configs", nargs="*", help="scenario YAML per batch (default: one built-in batch)")
    sp.add_argument("--policy", default="gh", help="gh | rp | hover | checkpoint path")
    sp.set_defaults(func=cmd_batches)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except (ConfigError, dsl.DslError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
