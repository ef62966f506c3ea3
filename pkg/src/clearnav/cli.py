"""Command-line harness: dataset generation, training, episodes, benchmarks."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import (
    DESK_NOISE,
    METHODS,
    EpisodeConfig,
    SuiteConfig,
    emit_traces,
    model_from_checkpoint,
    replay_trajectory,
    run_benchmark,
    run_episode,
    suite_worlds,
)
from .data import ClearanceDataset, generate_dataset
from .model import save_checkpoint
from .planner import PlannerConfig
from .training import TrainConfig, train
from .world import NoiseModel, SensorConfig, load_scenario, sensor_from_dict


def _default_sensor(noisy: bool = True) -> SensorConfig:
    return SensorConfig(noise=DESK_NOISE if noisy else NoiseModel())


def _planner_from_json(path) -> PlannerConfig:
    if path is None:
        return PlannerConfig()
    with open(path) as f:
        return PlannerConfig(**json.load(f))


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    worlds = suite_worlds(args.worlds, args.seed, SuiteConfig())
    sensor = _default_sensor()
    dataset = generate_dataset(
        worlds,
        args.snapshots_per_world,
        rng,
        sensor,
        d_o=args.d_o,
        seed=args.seed,
    )
    dataset.save(args.out)
    print(f"wrote {len(dataset)} samples ({dataset.n_snapshots} snapshots) to {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = ClearanceDataset.load(args.data)
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs, d_o=dataset.d_o)
    result = train(dataset, cfg, args.mode)
    save_checkpoint(args.out, result.params, result.risk_head, result.meta)
    log_path = os.path.splitext(args.out)[0] + "_log.csv"
    result.log.to_csv(log_path)
    last = result.log.rows[-1]
    print(
        f"trained {args.mode} for {cfg.epochs} epochs: "
        f"nll={last.nll:.4f} ce={last.ce:.4f} holdout_acc={last.holdout_accuracy:.3f} "
        f"median_sigma={last.median_sigma:.4f}"
    )
    print(f"checkpoint: {args.out}  log: {log_path}")
    return 0


def _load_models(args) -> dict:
    models = {}
    if getattr(args, "checkpoint", None):
        models["augmented"] = model_from_checkpoint(args.checkpoint)
    if getattr(args, "baseline_checkpoint", None):
        models["baseline_nll"] = model_from_checkpoint(args.baseline_checkpoint)
    return models


def cmd_episode(args) -> int:
    world, sensor, seed, _ = load_scenario(args.scenario)
    if args.seed is not None:
        seed = args.seed
    out = run_episode(
        world,
        args.method,
        seed,
        sensor,
        _planner_from_json(args.planner_config),
        EpisodeConfig(),
        _load_models(args),
    )
    csv_path, replay_path = emit_traces(out, args.out, stem=f"{args.method}")
    print(
        f"{args.method}: {out.result} in {out.duration:.1f}s, "
        f"avg v={out.avg_speed:.2f} m/s, min clearance={out.min_true_clearance:.3f} m"
    )
    print(f"trace: {csv_path}\nreplay: {replay_path}")
    return 0


def cmd_bench(args) -> int:
    methods = args.methods.split(",")
    for m in methods:
        if m not in METHODS:
            raise SystemExit(f"unknown method {m!r}; choose from {METHODS}")
    sensor = _default_sensor(noisy=not args.no_noise)
    model_paths = {}
    if args.checkpoint:
        model_paths["augmented"] = args.checkpoint
    if args.baseline_checkpoint:
        model_paths["baseline_nll"] = args.baseline_checkpoint
    models = {k: model_from_checkpoint(p) for k, p in model_paths.items()}
    report = run_benchmark(
        methods,
        args.episodes,
        args.seed,
        sensor,
        _planner_from_json(args.planner_config),
        EpisodeConfig(),
        models=models,
        workers=args.workers,
        model_paths=model_paths or None,
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "report.json")
    report.save(path)
    print(report.format_table())
    print(f"report: {path}")
    return 0


def cmd_replay(args) -> int:
    world, states = replay_trajectory(args.replay)
    end = states[-1]
    print(f"replayed {states.shape[0] - 1} steps; final pose ({end[0]:.3f}, {end[1]:.3f}, {end[2]:.3f})")
    if args.out:
        np.savetxt(args.out, states, delimiter=",", header="x,y,psi,v,omega", comments="")
        print(f"states: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clearnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a labeled clearance dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--worlds", type=int, default=40)
    g.add_argument("--snapshots-per-world", type=int, default=10)
    g.add_argument("--d-o", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the clearance model")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=("baseline", "augmented", "nll_sigma_penalty"), default="augmented")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("episode", help="run one scenario episode and emit traces")
    e.add_argument("--scenario", required=True, help="scenario JSON (world + sensor + seed)")
    e.add_argument("--method", choices=METHODS, default="oracle")
    e.add_argument("--checkpoint", help="augmented-model checkpoint (npz)")
    e.add_argument("--baseline-checkpoint", help="baseline-model checkpoint (npz)")
    e.add_argument("--planner-config", help="PlannerConfig overrides (JSON)")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", default="traces")
    e.set_defaults(func=cmd_episode)

    b = sub.add_parser("bench", help="run the seeded benchmark suite")
    b.add_argument("--methods", default="oracle,raw_costmap")
    b.add_argument("--episodes", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--checkpoint", help="augmented-model checkpoint (npz)")
    b.add_argument("--baseline-checkpoint", help="baseline-model checkpoint (npz)")
    b.add_argument("--planner-config", help="PlannerConfig overrides (JSON)")
    b.add_argument("--no-noise", action="store_true", help="disable sensor noise")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="re-simulate a recorded episode")
    r.add_argument("--replay", required=True, help="replay JSON from emit-traces")
    r.add_argument("--out", help="optional CSV of re-simulated states")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
