"""Command-line runner: simulate, train, evaluate, ablate, decompose.

Every command writes its outputs plus a manifest.json recording the resolved
configuration, the seed, and a content hash per artifact, so identical
invocations produce identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import shutil
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attack import DecomposedGreedyAttack, GreedyAttack, NullAttack
from .decompose import Partition, kmeans_cluster, partition_to_text
from .network import load_network, load_trips
from .neural import load_params, save_params
from .rl import (
    AgentBundle,
    FlatDdpgPolicy,
    HmarlAttackPolicy,
    HmarlBundles,
    HmarlConfig,
    LOG_COLUMNS,
    train_hmarl,
    train_network_ddpg,
)
from .seeding import derive_int_seed
from .simulator import run_episode

STRATEGIES = (
    "none",
    "greedy",
    "ddpg",
    "decomposed-greedy",
    "ablation-low",
    "ablation-high",
    "hmarl",
)

TRAINED = ("ddpg", "ablation-low", "ablation-high", "hmarl")

_HMARL_MODES = {
    "hmarl": ("rl", "rl"),
    "ablation-low": ("proportional", "rl"),
    "ablation-high": ("rl", "greedy"),
}


@dataclass
class ExperimentConfig:
    """Everything one run depends on; flattened into the manifest."""

    net: str = ""
    trips: str = ""
    attacker: str = "none"
    budget: float = 30.0
    components: int = 4
    seed: int = 0
    horizon: int = 200
    gamma_eval: float = 0.99
    episodes: int = 300
    gamma_high: float = 0.90
    gamma_low: float = 0.99
    lr_actor_high: float = 1e-3
    lr_critic_high: float = 1e-3
    lr_actor_low: float = 1e-4
    lr_critic_low: float = 1e-3
    tau: float = 0.01
    buffer_capacity: int = 100_000
    batch_size: int = 128
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    hidden: str = "64,64"
    normalize_head: str = "softmax"
    critic_head: str = "relu"
    high_level_noise: bool = True
    full_low_critics: bool = False
    demand_jitter: float = 0.05
    local_greedy_denominator: str = "component"

    def hmarl_config(self) -> HmarlConfig:
        return HmarlConfig(
            gamma_high=self.gamma_high,
            gamma_low=self.gamma_low,
            lr_actor_high=self.lr_actor_high,
            lr_critic_high=self.lr_critic_high,
            lr_actor_low=self.lr_actor_low,
            lr_critic_low=self.lr_critic_low,
            tau=self.tau,
            buffer_capacity=self.buffer_capacity,
            batch_size=self.batch_size,
            ou_theta=self.ou_theta,
            ou_sigma=self.ou_sigma,
            episodes=self.episodes,
            horizon=self.horizon,
            hidden=tuple(int(h) for h in self.hidden.split(",") if h),
            normalize_head=self.normalize_head,
            critic_head=self.critic_head,
            high_level_noise=self.high_level_noise,
            full_low_critics=self.full_low_critics,
            demand_jitter=self.demand_jitter,
            gamma_eval=self.gamma_eval,
        )


def _add_common(parser: argparse.ArgumentParser, *, trips: bool = True) -> None:
    parser.add_argument("--config", help="JSON file of config defaults; flags win")
    parser.add_argument("--net", default=argparse.SUPPRESS, help="TNTP network file")
    if trips:
        parser.add_argument("--trips", default=argparse.SUPPRESS, help="TNTP trip table")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--out", required=True, help="output directory")


def _add_hyper(parser: argparse.ArgumentParser) -> None:
    # defaults come from ExperimentConfig (possibly via --config); only flags
    # the user actually passed land in the namespace, so flags always win
    sup = argparse.SUPPRESS
    parser.add_argument("--budget", type=float, default=sup)
    parser.add_argument("--components", type=int, default=sup)
    parser.add_argument("--horizon", type=int, default=sup)
    parser.add_argument("--gamma-eval", type=float, default=sup, dest="gamma_eval")
    parser.add_argument("--episodes", type=int, default=sup)
    parser.add_argument("--gamma-high", type=float, default=sup, dest="gamma_high")
    parser.add_argument("--gamma-low", type=float, default=sup, dest="gamma_low")
    parser.add_argument("--lr-actor-high", type=float, default=sup, dest="lr_actor_high")
    parser.add_argument("--lr-critic-high", type=float, default=sup, dest="lr_critic_high")
    parser.add_argument("--lr-actor-low", type=float, default=sup, dest="lr_actor_low")
    parser.add_argument("--lr-critic-low", type=float, default=sup, dest="lr_critic_low")
    parser.add_argument("--tau", type=float, default=sup)
    parser.add_argument("--buffer-capacity", type=int, default=sup, dest="buffer_capacity")
    parser.add_argument("--batch-size", type=int, default=sup, dest="batch_size")
    parser.add_argument("--ou-theta", type=float, default=sup, dest="ou_theta")
    parser.add_argument("--ou-sigma", type=float, default=sup, dest="ou_sigma")
    parser.add_argument("--hidden", default=sup, help="comma-separated layer widths")
    parser.add_argument("--normalize-head", choices=("softmax", "l1relu"), default=sup, dest="normalize_head")
    parser.add_argument("--critic-head", choices=("linear", "relu"), default=sup, dest="critic_head")
    parser.add_argument("--no-high-noise", action="store_false", default=sup, dest="high_level_noise")
    parser.add_argument("--full-low-critics", action="store_true", default=sup, dest="full_low_critics")
    parser.add_argument("--demand-jitter", type=float, default=sup, dest="demand_jitter")
    parser.add_argument(
        "--local-greedy-denominator",
        choices=("component", "network"),
        default=sup,
        dest="local_greedy_denominator",
    )


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Dataclass defaults, overridden by the --config file, overridden by flags."""
    cfg = ExperimentConfig()
    names = {f.name for f in fields(ExperimentConfig)}
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(loaded) - names
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        for key, value in loaded.items():
            setattr(cfg, key, value)
    for name in names:
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    return cfg


def _require_inputs(cfg: ExperimentConfig, *, trips: bool = True) -> None:
    if not cfg.net:
        raise SystemExit("no network file: pass --net or set \"net\" in --config")
    if trips and not cfg.trips:
        raise SystemExit("no trip table: pass --trips or set \"trips\" in --config")


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, artifacts: list[str]) -> None:
    hashes = {}
    for name in sorted(artifacts):
        digest = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        hashes[name] = f"sha256:{digest}"
    manifest = {
        "tool": f"misroute {__version__}",
        "command": command,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "artifacts": hashes,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _clustering_seed(seed: int) -> int:
    return derive_int_seed(seed, "clustering")


def _render_figure(out_dir: Path, kind: str, csv_name: str, image_name: str) -> list[str]:
    """Render a figure from a written CSV via the standalone `plot` tool.

    The tool only communicates through files, so a missing or failing
    renderer never affects the numeric outputs; the run just notes it.
    """
    exe = shutil.which("plot")
    if exe is None:
        print(f"figure skipped: no `plot` tool on PATH for {image_name}")
        return []
    proc = subprocess.run(
        [exe, kind, str(out_dir / csv_name), str(out_dir / image_name)],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        print(f"figure skipped: plot {kind} failed: {proc.stderr.strip()}")
        return []
    return [image_name]


def _build_heuristic(cfg: ExperimentConfig, network, attacker: str):
    if attacker == "none":
        return NullAttack()
    if attacker == "greedy":
        return GreedyAttack(cfg.budget)
    if attacker == "decomposed-greedy":
        partition = kmeans_cluster(network, cfg.components, _clustering_seed(cfg.seed))
        return DecomposedGreedyAttack(
            partition, cfg.budget, denominator=cfg.local_greedy_denominator
        )
    raise ValueError(f"unknown non-learning attacker {attacker!r}")


def _eval_episode(network, trips, policy, cfg: ExperimentConfig):
    return run_episode(network, trips, policy, horizon=cfg.horizon, gamma=cfg.gamma_eval)


def _write_episode_outputs(out_dir: Path, cfg: ExperimentConfig, policy_name: str, result) -> list[str]:
    rows = [
        [i, rem, cfg.gamma_eval**i * rem]
        for i, rem in enumerate(result.remaining_per_step)
    ]
    _write_csv(out_dir / "steps.csv", ["step", "remaining", "objective_contribution"], rows)
    summary = {
        "attacker": policy_name,
        "budget": cfg.budget,
        "gamma": cfg.gamma_eval,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "discounted_objective": result.discounted_objective,
        "undiscounted_objective": float(np.sum(result.remaining_per_step)),
        "steps_run": result.steps_run,
        "all_arrived": result.all_arrived,
        "any_unreachable": result.any_unreachable,
    }
    (out_dir / "result.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return ["steps.csv", "result.json"]


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    cfg.attacker = args.attacker
    _require_inputs(cfg)
    network = load_network(cfg.net)
    trips = load_trips(cfg.trips)
    policy = _build_heuristic(cfg, network, cfg.attacker)
    result = _eval_episode(network, trips, policy, cfg)
    out_dir = Path(cfg_out(args))
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = _write_episode_outputs(out_dir, cfg, policy.name, result)
    _write_manifest(out_dir, "simulate", cfg, artifacts)
    print(
        f"simulate attacker={policy.name} objective={result.discounted_objective!r} "
        f"steps={result.steps_run} all_arrived={result.all_arrived}"
    )
    return 0


def cfg_out(args: argparse.Namespace) -> str:
    return args.out


def _save_checkpoint(out_dir: Path, cfg: ExperimentConfig, train_result, partition) -> list[str]:
    ck = out_dir / "checkpoint"
    ck.mkdir(parents=True, exist_ok=True)
    meta = {
        "attacker": cfg.attacker,
        "budget": cfg.budget,
        "components": cfg.components,
        "normalize_head": cfg.normalize_head,
        "seed": cfg.seed,
        "nets": [],
        "node_component": None,
    }
    artifacts = []

    def save(net, stem):
        save_params(net, ck / stem)
        meta["nets"].append(stem)
        artifacts.extend([f"checkpoint/{stem}.bin", f"checkpoint/{stem}.json"])

    if train_result.flat_bundle is not None:
        save(train_result.flat_bundle.actor, "flat_actor")
        save(train_result.flat_bundle.critic, "flat_critic")
    if train_result.bundles is not None:
        meta["node_component"] = [int(c) for c in partition.node_component]
        if train_result.bundles.high is not None:
            save(train_result.bundles.high.actor, "high_actor")
            save(train_result.bundles.high.critic, "high_critic")
        if train_result.bundles.low is not None:
            for k, bundle in enumerate(train_result.bundles.low):
                save(bundle.actor, f"low{k}_actor")
                save(bundle.critic, f"low{k}_critic")
    (ck / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts.append("checkpoint/meta.json")
    return artifacts


def _train(cfg: ExperimentConfig, network, trips):
    hyper = cfg.hmarl_config()
    if cfg.attacker == "ddpg":
        return train_network_ddpg(network, trips, cfg.budget, hyper, cfg.seed), None
    high_mode, low_mode = _HMARL_MODES[cfg.attacker]
    partition = kmeans_cluster(network, cfg.components, _clustering_seed(cfg.seed))
    result = train_hmarl(
        network,
        trips,
        partition,
        cfg.budget,
        hyper,
        cfg.seed,
        high_mode=high_mode,
        low_mode=low_mode,
    )
    return result, partition


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    cfg.attacker = args.attacker
    _require_inputs(cfg)
    if cfg.attacker not in TRAINED:
        raise SystemExit(f"train expects one of {TRAINED}, got {cfg.attacker!r}")
    network = load_network(cfg.net)
    trips = load_trips(cfg.trips)
    train_result, partition = _train(cfg, network, trips)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [[row[c] for c in LOG_COLUMNS] for row in train_result.log_rows]
    _write_csv(out_dir / "training_log.csv", list(LOG_COLUMNS), rows)
    artifacts = ["training_log.csv"]
    if rows:
        artifacts += _render_figure(out_dir, "training", "training_log.csv", "training.png")
    if partition is not None:
        (out_dir / "partition.txt").write_text(partition_to_text(partition), encoding="utf-8")
        artifacts.append("partition.txt")
    artifacts += _save_checkpoint(out_dir, cfg, train_result, partition)
    eval_result = _eval_episode(network, trips, train_result.policy, cfg)
    artifacts += _write_episode_outputs(out_dir, cfg, train_result.policy.name, eval_result)
    _write_manifest(out_dir, "train", cfg, artifacts)
    print(
        f"train attacker={cfg.attacker} episodes={cfg.episodes} "
        f"final_objective={eval_result.discounted_objective!r}"
    )
    return 0


def _load_checkpoint_policy(ck_dir: Path, network, cfg: ExperimentConfig):
    meta = json.loads((ck_dir / "meta.json").read_text(encoding="utf-8"))
    attacker = meta["attacker"]
    budget = float(meta["budget"])
    head = meta["normalize_head"]
    cfg.attacker = attacker
    cfg.budget = budget

    def load_bundle(actor_stem, critic_stem):
        actor = load_params(ck_dir / actor_stem)
        critic = load_params(ck_dir / critic_stem)
        return AgentBundle(
            actor=actor,
            critic=critic,
            actor_target=actor,
            critic_target=critic,
            gamma=0.99,
            lr_actor=0.0,
            lr_critic=0.0,
            tau=0.0,
            action_head=head,
            action_total=1.0,
        )

    if attacker == "ddpg":
        return FlatDdpgPolicy(load_bundle("flat_actor", "flat_critic"), budget)
    partition = Partition.from_labels(network, np.array(meta["node_component"], dtype=np.int64))
    high_mode, low_mode = _HMARL_MODES[attacker]
    high = load_bundle("high_actor", "high_critic") if high_mode == "rl" else None
    low = None
    if low_mode == "rl":
        low = [
            load_bundle(f"low{k}_actor", f"low{k}_critic")
            for k in range(partition.count)
        ]
    bundles = HmarlBundles(
        high=high, low=low, edge_index=partition.edges_by_component, head=head, high_noise=False
    )
    return HmarlAttackPolicy(
        partition,
        budget,
        bundles=bundles,
        high_mode=high_mode,
        low_mode=low_mode,
        explore=False,
        name=attacker,
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    _require_inputs(cfg)
    network = load_network(cfg.net)
    trips = load_trips(cfg.trips)
    # accept either the checkpoint directory itself or the train --out
    # directory that contains it
    ckpt = Path(args.checkpoint)
    if not (ckpt / "meta.json").exists() and (ckpt / "checkpoint" / "meta.json").exists():
        ckpt = ckpt / "checkpoint"
    if not (ckpt / "meta.json").exists():
        raise SystemExit(f"no checkpoint at {args.checkpoint}: missing meta.json")
    policy = _load_checkpoint_policy(ckpt, network, cfg)
    result = _eval_episode(network, trips, policy, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = _write_episode_outputs(out_dir, cfg, policy.name, result)
    _write_manifest(out_dir, "evaluate", cfg, artifacts)
    print(
        f"evaluate attacker={policy.name} objective={result.discounted_objective!r} "
        f"steps={result.steps_run}"
    )
    return 0


def _ablate_cell(payload: dict):
    cfg = ExperimentConfig(**payload["config"])
    network = load_network(cfg.net)
    trips = load_trips(cfg.trips)
    strategy = payload["strategy"]
    cfg.attacker = strategy
    cfg.budget = payload["budget"]
    cell_seed = payload["cell_seed"]
    if strategy in TRAINED:
        cfg.seed = cell_seed
        train_result, _ = _train(cfg, network, trips)
        policy = train_result.policy
    else:
        cfg.seed = cell_seed
        policy = _build_heuristic(cfg, network, strategy)
    result = _eval_episode(network, trips, policy, cfg)
    return payload["budget"], strategy, result.discounted_objective


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    _require_inputs(cfg)
    budgets = [float(tok) for tok in args.budgets.split(",") if tok]
    if not budgets:
        raise SystemExit("need at least one budget")
    strategies = [tok for tok in args.strategies.split(",") if tok]
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise SystemExit(f"unknown strategies: {unknown}")
    cells = []
    for budget in budgets:
        for strategy in strategies:
            cells.append(
                {
                    "config": asdict(cfg),
                    "strategy": strategy,
                    "budget": budget,
                    "cell_seed": derive_int_seed(cfg.seed, f"ablate/{strategy}/{budget!r}"),
                }
            )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_ablate_cell, cells))
    else:
        outcomes = [_ablate_cell(c) for c in cells]
    order = {(c["budget"], c["strategy"]): i for i, c in enumerate(cells)}
    outcomes.sort(key=lambda row: order[(row[0], row[1])])
    rows = [[b, s, obj, cfg.seed] for b, s, obj in outcomes]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "results.csv", ["budget", "strategy", "objective", "seed"], rows)
    artifacts = ["results.csv"]
    artifacts += _render_figure(out_dir, "ablation", "results.csv", "ablation.png")
    _write_manifest(out_dir, "ablate", cfg, artifacts)
    print(f"ablate wrote {len(rows)} rows over {len(budgets)} budgets")
    return 0


def cmd_decompose(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    _require_inputs(cfg, trips=False)
    network = load_network(cfg.net)
    partition = kmeans_cluster(network, cfg.components, _clustering_seed(cfg.seed))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "partition.txt").write_text(partition_to_text(partition), encoding="utf-8")
    _write_manifest(out_dir, "decompose", cfg, ["partition.txt"])
    sizes = [len(nodes) for nodes in partition.nodes_by_component]
    print(f"decompose components={partition.count} sizes={sizes} medoids={list(partition.medoids)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misroute",
        description="Travel-time falsification attacks on shortest-path road routing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one episode under a non-learning attacker")
    _add_common(p_sim)
    _add_hyper(p_sim)
    p_sim.add_argument(
        "--attacker", choices=("none", "greedy", "decomposed-greedy"), default="none"
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="train a learning attacker and evaluate it")
    _add_common(p_train)
    _add_hyper(p_train)
    p_train.add_argument("--attacker", choices=TRAINED, required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    _add_common(p_eval)
    _add_hyper(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory from train")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="objective across budgets and attack strategies")
    _add_common(p_abl)
    _add_hyper(p_abl)
    p_abl.add_argument("--budgets", default="5,10,15,30", help="comma-separated budgets")
    p_abl.add_argument("--strategies", default=",".join(STRATEGIES))
    p_abl.add_argument("--jobs", type=int, default=1)
    p_abl.set_defaults(func=cmd_ablate)

    p_dec = sub.add_parser("decompose", help="cluster the network into components")
    _add_common(p_dec, trips=False)
    p_dec.add_argument("--components", type=int, default=argparse.SUPPRESS)
    p_dec.set_defaults(func=cmd_decompose)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
