"""Experiment harness: train, eval and sweep commands.

Runs are laid out as one directory per (algorithm, scenario, seed):

    <output_dir>/<algorithm>/<scenario tag>/seed<k>/
        config.json      resolved experiment config
        metrics.jsonl    one record per training episode
        checkpoints/     parameter snapshots (policy + mixer namespaces)
        trajectories/    greedy-rollout CSV exports

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 shape mismatch.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import env, trainer
from .encoder import EncoderConfig, PolicyNetwork
from .errors import ConfigError, ContractViolation, ShapeMismatch
from .mixer import MixerConfig
from .nn import load_checkpoint, restore_parameters, save_checkpoint

ALGORITHM_VARIANTS = {
    "qmix": "none-baseline",
    "qedgix": "edgeconv",
    "agg-gnn": "agg-baseline",
}

SWEEP_KEYS = ("detection_range_xi", "num_uavs_x_num_users")


@dataclass
class ExperimentConfig:
    scenario: dict
    algorithm: str
    train: trainer.TrainConfig
    output_dir: str
    seeds: list[int] = field(default_factory=lambda: [0])
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mixer: MixerConfig = field(default_factory=MixerConfig)

    def world_config(self) -> env.WorldConfig:
        return env.config_from_scenario(self.scenario)

    def to_dict(self) -> dict:
        return {
            "scenario": dict(self.scenario),
            "algorithm": self.algorithm,
            "train": dataclasses.asdict(self.train),
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
            "encoder": {
                "feature_width": self.encoder.feature_width,
                "recurrent_width": self.encoder.recurrent_width,
                "num_graph_layers": self.encoder.num_graph_layers,
                "graph_hidden_width": self.encoder.graph_hidden_width,
            },
            "mixer": {
                "embedding_width": self.mixer.embedding_width,
                "hypernet_hidden_width": self.mixer.hypernet_hidden_width,
            },
        }


def _check_keys(data: dict, allowed, context: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"{context} has unknown key: {sorted(unknown)[0]}")


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    _check_keys(
        data,
        ("scenario", "algorithm", "train", "output_dir", "seeds", "encoder", "mixer"),
        "experiment config",
    )
    for key in ("scenario", "algorithm", "output_dir"):
        if key not in data:
            raise ConfigError(f"experiment config missing key: {key}")
    algorithm = data["algorithm"]
    if algorithm not in ALGORITHM_VARIANTS:
        raise ConfigError(
            f"algorithm must be one of {sorted(ALGORITHM_VARIANTS)}, got {algorithm!r}"
        )
    env.config_from_scenario(data["scenario"])  # validates now, fails early

    train_data = dict(data.get("train", {}))
    train_fields = {f.name for f in dataclasses.fields(trainer.TrainConfig)}
    _check_keys(train_data, train_fields, "train config")
    try:
        train_config = trainer.TrainConfig(**train_data)
    except ContractViolation as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc

    encoder_data = dict(data.get("encoder", {}))
    _check_keys(
        encoder_data,
        ("feature_width", "recurrent_width", "num_graph_layers", "graph_hidden_width"),
        "encoder config",
    )
    mixer_data = dict(data.get("mixer", {}))
    _check_keys(mixer_data, ("embedding_width", "hypernet_hidden_width"), "mixer config")
    try:
        encoder_config = EncoderConfig(variant=ALGORITHM_VARIANTS[algorithm], **encoder_data)
        mixer_config = MixerConfig(**mixer_data)
    except ContractViolation as exc:
        raise ConfigError(f"invalid network config: {exc}") from exc

    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) for s in seeds
    ):
        raise ConfigError("experiment config key seeds must be a non-empty int list")
    return ExperimentConfig(
        scenario=dict(data["scenario"]),
        algorithm=algorithm,
        train=train_config,
        output_dir=data["output_dir"],
        seeds=list(seeds),
        encoder=encoder_config,
        mixer=mixer_config,
    )


def load_experiment_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return experiment_config_from_dict(data)


def scenario_tag(world: env.WorldConfig) -> str:
    detection_xi = round(world.detection_range / world.xi, 9)
    return (
        f"m{world.num_uavs}-n{world.num_users}-d{detection_xi:g}xi"
        f"-k{world.horizon}-s{world.user_placement_seed}"
    )


def run_dir(config: ExperimentConfig, seed: int) -> Path:
    world = config.world_config()
    return Path(config.output_dir) / config.algorithm / scenario_tag(world) / f"seed{seed}"


def checkpoint_meta(config: ExperimentConfig, world: env.WorldConfig, seed: int) -> dict:
    return {
        "algorithm": config.algorithm,
        "variant": config.encoder.variant,
        "num_uavs": world.num_uavs,
        "num_users": world.num_users,
        "horizon": world.horizon,
        "encoder": {
            "feature_width": config.encoder.feature_width,
            "recurrent_width": config.encoder.recurrent_width,
            "num_graph_layers": config.encoder.num_graph_layers,
            "graph_hidden_width": config.encoder.graph_hidden_width,
        },
        "mixer": {
            "embedding_width": config.mixer.embedding_width,
            "hypernet_hidden_width": config.mixer.hypernet_hidden_width,
        },
        "scenario": dict(config.scenario),
        "master_seed": seed,
    }


def train_one_seed(config: ExperimentConfig, seed: int) -> dict:
    """Train one run, write its artifacts, return a small summary."""
    world = config.world_config()
    directory = run_dir(config, seed)
    (directory / "checkpoints").mkdir(parents=True, exist_ok=True)
    (directory / "trajectories").mkdir(parents=True, exist_ok=True)
    with open(directory / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)

    meta = checkpoint_meta(config, world, seed)

    def checkpoint_hook(episode, policy, mixer):
        save_checkpoint(
            directory / "checkpoints" / f"ep{episode + 1}.json",
            policy.parameters() + mixer.parameters(),
            meta=meta,
        )

    result = trainer.run_training(
        world, config.encoder, config.mixer, config.train, seed,
        checkpoint_hook=checkpoint_hook,
    )
    with open(directory / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in result.metrics:
            fh.write(json.dumps(record) + "\n")
    # the shipped artifact is the best-evaluated checkpoint of the run;
    # final.json keeps the last-episode parameters for resumption
    save_checkpoint(
        directory / "checkpoints" / "final.json",
        result.policy.parameters() + result.mixer.parameters(),
        meta=meta,
    )
    result.restore_best()
    save_checkpoint(
        directory / "checkpoints" / "best.json",
        result.policy.parameters() + result.mixer.parameters(),
        meta=meta,
    )
    final_eval = trainer.evaluate_policy(world, result.policy)
    for e, rows in enumerate(final_eval.trajectories):
        env.write_trajectory(directory / "trajectories" / f"episode_{e:03d}.csv", rows)
    return {
        "seed": seed,
        "run_dir": str(directory),
        "mean_aoi": final_eval.mean_aoi,
        "return": final_eval.mean_return,
    }


def cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    seeds = [args.seed] if args.seed is not None else config.seeds
    for seed in seeds:
        summary = train_one_seed(config, seed)
        print(
            f"trained {config.algorithm} seed={seed} "
            f"mean_aoi={summary['mean_aoi']:.3f} -> {summary['run_dir']}"
        )
    return 0


def build_policy_from_checkpoint(checkpoint_path, world: env.WorldConfig) -> PolicyNetwork:
    """Reconstruct the greedy policy; the mixer namespace stays untouched."""
    arrays, meta = load_checkpoint(checkpoint_path)
    for key in ("num_uavs", "num_users", "horizon", "variant", "encoder"):
        if key not in meta:
            raise ConfigError(f"checkpoint meta missing key: {key}")
    if meta["num_uavs"] != world.num_uavs or meta["num_users"] != world.num_users:
        raise ShapeMismatch(
            f"checkpoint was trained for {meta['num_uavs']} UAVs / "
            f"{meta['num_users']} users, scenario has {world.num_uavs} / "
            f"{world.num_users}"
        )
    encoder_config = EncoderConfig(variant=meta["variant"], **meta["encoder"])
    policy = PolicyNetwork(
        world.num_uavs, world.num_users, meta["horizon"], encoder_config,
        np.random.default_rng(0),
    )
    restore_parameters(policy.parameters(), arrays)
    return policy


def cmd_eval(args) -> int:
    world = env.load_scenario(args.scenario)
    policy = build_policy_from_checkpoint(args.checkpoint, world)
    seeds = [args.seed] if args.seed is not None else None
    result = trainer.evaluate_policy(world, policy, episodes=args.episodes, seeds=seeds)
    baseline = trainer.evaluate_random_policy(
        world, episodes=args.episodes, seeds=seeds, action_seed=0
    )
    out = Path(args.out)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    for e, rows in enumerate(result.trajectories):
        env.write_trajectory(traj_dir / f"episode_{e:03d}.csv", rows)
    summary = {
        "episodes": args.episodes,
        "mean_aoi": result.mean_aoi,
        "mean_return": result.mean_return,
        "per_episode": result.per_episode,
        "random_baseline_mean_aoi": baseline.mean_aoi,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(
        f"eval mean_aoi={result.mean_aoi:.3f} "
        f"(random baseline {baseline.mean_aoi:.3f}) -> {out}"
    )
    return 0


# -- sweeps --------------------------------------------------------------


@dataclass
class SweepSpec:
    key: str
    values: list
    repetitions: int = 3


def load_sweep_spec(path) -> SweepSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"sweep spec not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep spec is not valid JSON: {exc}") from exc
    _check_keys(data, ("key", "values", "repetitions"), "sweep spec")
    for key in ("key", "values"):
        if key not in data:
            raise ConfigError(f"sweep spec missing key: {key}")
    if data["key"] not in SWEEP_KEYS:
        raise ConfigError(f"sweep key must be one of {SWEEP_KEYS}, got {data['key']!r}")
    values = data["values"]
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep spec key values must be a non-empty list")
    repetitions = data.get("repetitions", 3)
    if not isinstance(repetitions, int) or repetitions < 1:
        raise ConfigError("sweep spec key repetitions must be a positive int")
    return SweepSpec(key=data["key"], values=values, repetitions=repetitions)


def sweep_cells(config: ExperimentConfig, spec: SweepSpec):
    """Yield (value label, scenario dict, seed) for every cell."""
    seeds = list(config.seeds)
    while len(seeds) < spec.repetitions:
        seeds.append(seeds[-1] + 1 if seeds else 0)
    seeds = seeds[: spec.repetitions]
    for value in spec.values:
        scenario = dict(config.scenario)
        if spec.key == "detection_range_xi":
            scenario["detection_range_xi"] = float(value)
            label = f"{float(value):g}"
        else:
            num_uavs, num_users = value
            scenario["num_uavs"] = int(num_uavs)
            scenario["num_users"] = int(num_users)
            label = f"{int(num_uavs)}x{int(num_users)}"
        for seed in seeds:
            cell_scenario = dict(scenario)
            cell_scenario["seed"] = seed
            yield label, cell_scenario, seed


SWEEP_HEADER = ["swept_value", "algorithm", "seed", "mean_aoi", "return"]


def read_completed_cells(results_path: Path) -> set[tuple]:
    completed = set()
    if results_path.exists():
        with open(results_path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                completed.add((row["swept_value"], row["algorithm"], int(row["seed"])))
    return completed


def write_sweep_summary(results_path: Path, summary_path: Path) -> None:
    """Aggregate mean and std per (swept value, algorithm) cell."""
    groups: dict[tuple, list[dict]] = {}
    with open(results_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault((row["swept_value"], row["algorithm"]), []).append(row)
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["swept_value", "algorithm", "cells", "mean_aoi_mean", "mean_aoi_std",
             "return_mean", "return_std"]
        )
        for (value, algorithm), rows in groups.items():
            aoi = np.array([float(r["mean_aoi"]) for r in rows])
            ret = np.array([float(r["return"]) for r in rows])
            writer.writerow(
                [value, algorithm, len(rows), repr(aoi.mean()), repr(float(aoi.std())),
                 repr(ret.mean()), repr(float(ret.std()))]
            )


def cmd_sweep(args) -> int:
    config = load_experiment_config(args.config)
    spec = load_sweep_spec(args.sweep)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "sweep_results.csv"
    failures_path = out / "sweep_failures.csv"

    completed = read_completed_cells(results_path) if args.resume else set()
    if not args.resume and results_path.exists():
        results_path.unlink()

    new_file = not results_path.exists()
    attempted = succeeded = 0
    with open(results_path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
        if new_file:
            writer.writeheader()
        for label, scenario, seed in sweep_cells(config, spec):
            if (label, config.algorithm, seed) in completed:
                continue
            attempted += 1
            cell_config = dataclasses.replace(config, scenario=scenario)
            try:
                summary = train_one_seed(cell_config, seed)
            except Exception as exc:  # record the cell failure, keep sweeping
                exists = failures_path.exists()
                with open(failures_path, "a", encoding="utf-8", newline="") as ffh:
                    fwriter = csv.writer(ffh)
                    if not exists:
                        fwriter.writerow(["swept_value", "algorithm", "seed", "error"])
                    fwriter.writerow([label, config.algorithm, seed, repr(exc)])
                print(f"cell failed: {label} seed={seed}: {exc}", file=sys.stderr)
                continue
            succeeded += 1
            writer.writerow(
                {
                    "swept_value": label,
                    "algorithm": config.algorithm,
                    "seed": seed,
                    "mean_aoi": repr(summary["mean_aoi"]),
                    "return": repr(summary["return"]),
                }
            )
            fh.flush()
            print(f"cell done: {label} seed={seed} mean_aoi={summary['mean_aoi']:.3f}")
    write_sweep_summary(results_path, out / "sweep_summary.csv")
    if attempted and not succeeded:
        print("all sweep cells failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoi-marl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training for each configured seed")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--scenario", required=True)
    p_eval.add_argument("--episodes", type=int, default=1)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default="eval_out")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train+eval over a swept scenario key")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--sweep", required=True)
    p_sweep.add_argument("--resume", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ShapeMismatch as exc:
        print(f"shape mismatch: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
