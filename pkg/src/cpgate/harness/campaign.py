"""Training campaigns, paired-seed evaluation sweeps, channel probes and scenario previews."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..protocols import BaselinePolicy, LearnedPolicy, Policy, parse_policy
from ..rl.dqn import DQNLearner
from ..rl.network import QNetwork
from ..v2x import ChannelConfig, reception_probability
from ..world import Kind, count_overlaps, generate_scenario, run_ground_truth, write_trajectory_csv
from .config import ExperimentConfig
from .episode import run_episode
from .metrics import MetricsRecord, summarize, write_metrics_csv, write_metrics_json

TRAIN_SALT = 1
EVAL_SALT = 2
CURVE_COLUMNS = ("step", "epsilon", "mean_loss", "mean_reward")


def checkpoint_name(step: int) -> str:
    return f"checkpoint_{step:08d}.npz"


@dataclass
class TrainingResult:
    checkpoints: dict[int, Path]
    curve: list[tuple[int, float, float, float]]
    episodes: int
    ticks: int
    learner: DQNLearner = field(repr=False)


def run_training(config: ExperimentConfig, out_dir, log_every: int = 100,
                 progress: Callable[[str], None] | None = None) -> TrainingResult:
    """Train one shared Q-network on the training-map sweep.

    Episodes cycle through (scenario index, density) pairs until the step
    budget is spent. A checkpoint is written at every milestone (step 0 is the
    initialization) and at the final step; the training curve is written as
    ``training_curve.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = config.train
    state_dim = config.window * 15 + 1
    net = QNetwork.create(config.window, seed=tc.rng_seed)
    learner = DQNLearner(net, tc, state_dim)
    milestones = sorted({m for m in config.milestones if m <= tc.total_steps} | {0, tc.total_steps})
    saved: dict[int, Path] = {}
    meta = {"experiment": config.to_dict()}

    def save_due():
        for m in milestones:
            if m not in saved and learner.updates >= m:
                path = out / checkpoint_name(m)
                learner.q_net.save(path, tc.to_dict(), {**meta, "step": m})
                saved[m] = path

    curve: list[tuple[int, float, float, float]] = []
    rewards: list[float] = []
    state = {"loss_mark": 0, "next_row": log_every, "reward_mark": 0}

    def on_tick(world, delivery, ep_log):
        new = ep_log.rewards[state["reward_mark"]:]
        rewards.extend(new)
        state["reward_mark"] = len(ep_log.rewards)
        while learner.updates >= state["next_row"]:
            losses = learner.losses[state["loss_mark"]:]
            curve.append((learner.updates, learner.epsilon,
                          float(np.mean(losses)) if losses else float("nan"),
                          float(np.mean(rewards)) if rewards else float("nan")))
            state["loss_mark"] = len(learner.losses)
            rewards.clear()
            state["next_row"] += log_every
        save_due()

    save_due()
    sim = config.sim()
    episodes = ticks = 0
    cycle = 0
    while not learner.done:
        before = learner.updates
        for e in range(config.scenarios_per_density):
            for density in config.densities:
                if learner.done:
                    break
                sc = config.scenario_for(config.train_map, density, cycle * config.scenarios_per_density + e, TRAIN_SALT)
                state["reward_mark"] = 0
                ep = run_episode(sc, sim=sim, learner=learner, on_tick=on_tick, stop_when_trained=True)
                episodes += 1
                ticks += ep.ticks
                if progress:
                    progress(f"episode {episodes}: map={sc.map_id} density={density} updates={learner.updates} "
                             f"eps={learner.epsilon:.3f}")
        if learner.updates == before:
            raise RuntimeError("a full training cycle produced no updates; scenarios yield no decisions")
        cycle += 1
    save_due()
    _write_curve(curve, out / "training_curve.csv")
    return TrainingResult(saved, curve, episodes, ticks, learner)


def _write_curve(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for step, eps, loss, rew in rows:
            w.writerow([step, repr(eps), repr(loss), repr(rew)])


def checkpoint_step(meta: dict) -> int | None:
    step = meta.get("extra", {}).get("step")
    return int(step) if step is not None else None


def evaluate_policies(config: ExperimentConfig, policies: list[tuple[Policy, int | None]],
                      progress: Callable[[str], None] | None = None) -> list[MetricsRecord]:
    """Paired-seed sweep: every policy sees the same worlds and channel draws."""
    sim = config.sim()
    records = []
    for density in config.densities:
        for e in range(config.scenarios_per_density):
            sc = config.scenario_for(config.eval_map, density, e, EVAL_SALT)
            wr = generate_scenario(sc)
            for policy, steps in policies:
                ep = run_episode(sc, policy, sim, world_and_routes=wr)
                records.append(MetricsRecord.from_log(ep, e, steps, config.channel.per_record_bits,
                                                      config.channel.header_bits))
                if progress:
                    r = records[-1]
                    progress(f"density={density} episode={e} policy={policy.name} records/veh="
                             f"{r.cpm_records_per_vehicle:.1f} dr={r.detection_ratio} prr={r.packet_reception_ratio}")
    return records


def load_learned(checkpoint, config: ExperimentConfig) -> tuple[LearnedPolicy, int | None]:
    net, meta = QNetwork.load(checkpoint, window=config.window)
    return LearnedPolicy(net, epsilon=0.0, name="learned"), checkpoint_step(meta)


def run_evaluation(config: ExperimentConfig, checkpoint=None, out_dir=None,
                   progress: Callable[[str], None] | None = None) -> list[MetricsRecord]:
    """Evaluate a checkpoint (or ``config.policy``) and the baseline on the evaluation map.

    Writes ``metrics.csv`` and ``metrics.json`` when ``out_dir`` is given.
    """
    if checkpoint is not None:
        policy, steps = load_learned(checkpoint, config)
    else:
        policy, steps = parse_policy(config.policy, config.scenario.rng_seed), None
    pairs: list[tuple[Policy, int | None]] = [(policy, steps)]
    if not isinstance(policy, BaselinePolicy):
        pairs.append((BaselinePolicy(), None))
    records = evaluate_policies(config, pairs, progress)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(records, out / "metrics.csv")
        write_metrics_json(records, out / "metrics.json")
    return records


SWEEP_COLUMNS = ("training_steps", "density", "policy", "episodes", "cpm_records_per_vehicle",
                 "detection_ratio", "packet_reception_ratio")


def run_sweep(config: ExperimentConfig, checkpoints, out_dir=None,
              progress: Callable[[str], None] | None = None) -> list[tuple]:
    """Training-time x density table: one evaluation per checkpoint plus the baseline."""
    policies: list[tuple[Policy, int | None]] = [(BaselinePolicy(), None)]
    for path in checkpoints:
        pol, steps = load_learned(path, config)
        pol.name = f"learned@{steps}"
        policies.append((pol, steps))
    records = evaluate_policies(config, policies, progress)
    rows = []
    steps_of = {p.name: s for p, s in policies}
    for s in summarize(records):
        rows.append((steps_of[s.policy], s.density, s.policy, s.episodes, s.cpm_records_per_vehicle,
                     s.detection_ratio, s.packet_reception_ratio))
    rows.sort(key=lambda r: (-1 if r[0] is None else r[0], r[1]))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(records, out / "sweep_metrics.csv")
        with open(out / "sweep_table.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in rows:
                w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return rows


def channel_probe(cfg: ChannelConfig = ChannelConfig(), lambdas=(0, 1, 5, 10, 25, 50, 100, 200),
                  records=(0, 1, 5, 10, 20, 40)) -> list[tuple[int, int, int, float]]:
    """Reception-probability curve rows: (lambda, records, size_bits, probability)."""
    rows = []
    for n_rec in records:
        s = cfg.header_bits + cfg.per_record_bits * n_rec
        for lam in lambdas:
            rows.append((lam, n_rec, s, float(reception_probability(lam, s, cfg))))
    return rows


def write_channel_probe(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("lambda", "records", "size_bits", "probability"))
        for lam, n_rec, s, p in rows:
            w.writerow((lam, n_rec, s, repr(p)))


def scenario_preview(config: ExperimentConfig, out_dir, ticks: int | None = None) -> dict:
    """Write the trajectory CSV and a JSON summary of one generated scenario."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = config.scenario
    world, routes = generate_scenario(sc)
    n_ticks = sc.episode_ticks if ticks is None else ticks
    kinds = {k.name.lower(): int(np.sum(world.kind == k)) for k in Kind}
    overlaps = 0

    def audited():
        nonlocal overlaps
        for w in run_ground_truth(world, routes, n_ticks):
            overlaps += count_overlaps(w)
            yield w

    rows = write_trajectory_csv(audited(), out / "trajectory.csv")
    summary = {
        "map_id": sc.map_id,
        "rng_seed": sc.rng_seed,
        "ticks": n_ticks,
        "entities": int(world.n),
        "connected": int(world.connected.sum()),
        "kinds": kinds,
        "trajectory_rows": rows,
        "overlap_events": overlaps,
    }
    (out / "scenario.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


__all__ = [
    "CURVE_COLUMNS", "SWEEP_COLUMNS", "TrainingResult", "channel_probe", "checkpoint_name",
    "evaluate_policies", "load_learned", "run_evaluation", "run_sweep", "run_training", "scenario_preview",
    "write_channel_probe",
]
