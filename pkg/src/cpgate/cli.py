"""Command-line entry point: ``cpgate generate|train|eval|sweep|channel-probe``.

Outputs go to ``--out``; otherwise to ``$CPGATE_OUTPUT_ROOT/<command>`` or,
failing that, to ``<config.output>/<command>``. Failures exit non-zero and
print one JSON line ``{"error": <category>, "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .harness.campaign import (
    channel_probe,
    run_evaluation,
    run_sweep,
    run_training,
    scenario_preview,
    write_channel_probe,
)
from .harness.config import ConfigError, ExperimentConfig, load_config
from .harness.metrics import summarize
from .rl.network import CheckpointError
from .world import CapacityError

OUTPUT_ROOT_ENV = "CPGATE_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CODES = {"internal": 1, "config": 2, "checkpoint": 3, "io": 4, "capacity": 5}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpgate", description="Learned CPM gating simulator.")
    p.add_argument("--config", help="JSON experiment config (see experiment.schema.json)")
    p.add_argument("--full-scale", action="store_true",
                   help="start from the long-running densities 50..200, 9 x 1600-tick campaign")
    p.add_argument("--out", help="output directory")
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="scenario preview and trajectory CSV")
    g.add_argument("--map", dest="map_id")
    g.add_argument("--vehicles", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--ticks", type=int)

    t = sub.add_parser("train", help="train the gate; writes checkpoints and training_curve.csv")
    t.add_argument("--steps", type=int, help="total gradient steps")
    t.add_argument("--seed", type=int, help="training RNG seed")

    e = sub.add_parser("eval", help="paired-seed evaluation against the baseline")
    e.add_argument("--checkpoint", help="trained network; defaults to the config policy")
    e.add_argument("--policy", help="baseline | learned(<path>) | random(<p>)")
    e.add_argument("--seed", type=int)

    s = sub.add_parser("sweep", help="training-steps x density table over several checkpoints")
    s.add_argument("checkpoints", nargs="+")
    s.add_argument("--seed", type=int)

    c = sub.add_parser("channel-probe", help="reception probability over (lambda, CPM size)")
    c.add_argument("--lambdas", type=int, nargs="+", default=[0, 1, 5, 10, 25, 50, 100, 200])
    c.add_argument("--records", type=int, nargs="+", default=[0, 1, 5, 10, 20, 40])
    return p


def _config(args) -> ExperimentConfig:
    if args.full_scale:
        base = ExperimentConfig(milestones=(0, 1_000, 10_000, 20_000))
    else:
        base = ExperimentConfig.desk_scale()
    cfg = load_config(args.config, base) if args.config else base
    seed = getattr(args, "seed", None)
    if seed is not None and args.command != "train":
        cfg = replace(cfg, scenario=replace(cfg.scenario, rng_seed=seed))
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV) or cfg.output
    return Path(root) / args.command


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def _run(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    progress = None if args.quiet else (lambda m: _say(args, m))

    if args.command == "generate":
        sc = cfg.scenario
        sc = replace(sc, map_id=args.map_id or sc.map_id,
                     vehicle_count=args.vehicles or sc.vehicle_count,
                     rng_seed=sc.rng_seed if args.seed is None else args.seed)
        summary = scenario_preview(replace(cfg, scenario=sc), out, args.ticks)
        print(json.dumps(summary, sort_keys=True))
    elif args.command == "train":
        tc = cfg.train
        if args.steps is not None:
            tc = replace(tc, total_steps=args.steps)
        if args.seed is not None:
            tc = replace(tc, rng_seed=args.seed)
        res = run_training(replace(cfg, train=tc), out, progress=progress)
        print(json.dumps({"checkpoints": {str(k): str(v) for k, v in sorted(res.checkpoints.items())},
                          "episodes": res.episodes, "ticks": res.ticks}, sort_keys=True))
    elif args.command == "eval":
        if args.policy:
            cfg = replace(cfg, policy=args.policy)
        records = run_evaluation(cfg, args.checkpoint, out, progress)
        for s in summarize(records):
            print(json.dumps(s.__dict__, sort_keys=True))
    elif args.command == "sweep":
        rows = run_sweep(cfg, args.checkpoints, out, progress)
        print(f"wrote {len(rows)} rows to {out / 'sweep_table.csv'}")
    elif args.command == "channel-probe":
        rows = channel_probe(cfg.channel, args.lambdas, args.records)
        out.mkdir(parents=True, exist_ok=True)
        write_channel_probe(rows, out / "channel_probe.csv")
        for lam, n_rec, s, prob in rows:
            print(f"{lam:5d} {n_rec:4d} {s:7d} {prob:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, ValueError) as exc:
        category = ("checkpoint" if isinstance(exc, CheckpointError)
                    else "capacity" if isinstance(exc, CapacityError) else "config")
        return _fail(category, exc)
    except OSError as exc:
        return _fail("io", exc)
    except Exception as exc:  # surfaced with a category rather than a bare traceback
        return _fail("internal", exc)


def _fail(category: str, exc: BaseException) -> int:
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
