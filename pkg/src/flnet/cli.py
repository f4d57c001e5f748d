"""Command-line entry point: ``flnet {train,evaluate,sweep,oracle,report}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import build_exact_mdp, save_q_csv, value_iteration
from .config import load_config, parse_values
from .ddqn import DDQNAgent, TrainerConfig
from .env import write_trajectory
from .harness import (AGENT_KINDS, DDQNPolicy, ExperimentSpec, QTablePolicy, evaluate_policy,
                      factored_q, final_rewards, policy_histogram, read_summary,
                      reward_ordering_report, run_experiment, smooth, train_agent,
                      write_histogram, write_metrics)
from .qlearning import load_qtable, save_qtable


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML parameter file (default: packaged reference setting)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--steps", type=int, default=100, help="steps per episode")


def _trainer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target-sync", type=int, default=TrainerConfig.target_sync)
    p.add_argument("--batch-size", type=int, default=TrainerConfig.batch_size)
    p.add_argument("--replay-capacity", type=int, default=TrainerConfig.replay_capacity)
    p.add_argument("--gamma", type=float, default=TrainerConfig.discount)


def _trainer(args) -> TrainerConfig:
    return TrainerConfig(episodes=args.episodes, steps_per_episode=args.steps, seed=args.seed,
                         target_sync=args.target_sync, batch_size=args.batch_size,
                         replay_capacity=args.replay_capacity, discount=args.gamma)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent and save it with its training curve")
    _common(p)
    _trainer_args(p)
    p.add_argument("--agent", choices=("dql", "ql"), default="dql")

    p = sub.add_parser("evaluate", help="greedy rollouts of an agent; optional trajectory dump")
    _common(p)
    _trainer_args(p)
    p.add_argument("--agent", choices=AGENT_KINDS, default="greedy")
    p.add_argument("--checkpoint", type=Path, help="trained dql checkpoint (.npz) or ql table (.csv)")
    p.add_argument("--trajectory", action="store_true", help="also write trajectory.csv")
    p.add_argument("--histogram", action="store_true", help="also write channel-policy histogram")

    p = sub.add_parser("sweep", help="train and evaluate agents across parameter values")
    _common(p)
    _trainer_args(p)
    p.add_argument("--agents", default="dql,ql,greedy,random")
    p.add_argument("--param", help="q_mo, p_en, L, or any config field; omit for a single cell")
    p.add_argument("--values", default="", help="comma list or start:stop:step")
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--window", type=int, default=100, help="smoothing window")
    p.add_argument("--common-random-numbers", action="store_true",
                   help="run every sweep cell on the master seed instead of seed + cell index")

    p = sub.add_parser("oracle", help="exact Q* by value iteration, written as CSV")
    p.add_argument("--config", type=Path)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--factored", action="store_true",
                   help="per-worker tables instead of the joint MDP (works for any L)")

    p = sub.add_parser("report", help="ordering verdict from a summary.csv; exit 1 on FAIL")
    p.add_argument("summary", type=Path)
    p.add_argument("--margin", type=float, default=0.10)
    p.add_argument("--sweep-value", help="restrict to one sweep cell")
    return parser


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    policy, records = train_agent(args.agent, cfg, _trainer(args), args.seed)
    write_metrics(args.out / f"train_{args.agent}.csv", records, cfg.num_channels)
    if args.agent == "dql":
        policy.agent.save(args.out / "dql.npz")
    else:
        save_qtable(policy.table, args.out / "ql.csv")
    final = smooth([r.reward for r in records], 100)[-1] if records else float("nan")
    print(f"trained {args.agent}: final smoothed training reward {final:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint is not None:
        if args.agent == "dql":
            policy = DDQNPolicy(DDQNAgent.load(args.checkpoint, cfg, _trainer(args)))
        elif args.agent == "ql":
            policy = QTablePolicy(load_qtable(args.checkpoint, discount=args.gamma), cfg)
        else:
            raise SystemExit("--checkpoint only applies to dql and ql agents")
    else:
        policy, _ = train_agent(args.agent, cfg, _trainer(args), args.seed)
    traj = [] if args.trajectory else None
    records = evaluate_policy(policy, cfg, args.episodes, args.steps, args.seed, traj)
    write_metrics(args.out / f"eval_{args.agent}.csv", records, cfg.num_channels)
    if traj is not None:
        write_trajectory(args.out / "trajectory.csv", traj, cfg.num_workers)
    if args.histogram:
        write_histogram(args.out / f"histogram_{args.agent}.csv",
                        policy_histogram(policy, cfg, args.episodes, args.steps, args.seed))
    print(f"{args.agent}: mean episode reward {np.mean([r.reward for r in records]):.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    values = parse_values(args.values) if args.values else ()
    spec = ExperimentSpec(config=cfg, agents=tuple(a for a in args.agents.split(",") if a),
                          trainer=_trainer(args), sweep_param=args.param, sweep_values=values,
                          out_dir=args.out, seed=args.seed, smoothing_window=args.window,
                          eval_episodes=args.eval_episodes,
                          common_random_numbers=args.common_random_numbers)
    for row in run_experiment(spec):
        print(f"{row['sweep_param']}={row['sweep_value']} {row['agent']}: {row['final_reward']:.4f}")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.factored:
        for l, q in enumerate(factored_q(cfg, args.gamma, args.tol)):
            save_q_csv(q, args.out / f"oracle_q_worker{l + 1}.csv")
        print(f"wrote {cfg.num_workers} per-worker Q* tables")
        return 0
    result = value_iteration(build_exact_mdp(cfg), args.gamma, args.tol)
    save_q_csv(result.q, args.out / "oracle_q.csv")
    print(f"value iteration: {result.sweeps} sweeps, final residual {result.residual:.3g}")
    return 0


def cmd_report(args) -> int:
    rows = read_summary(args.summary)
    report = reward_ordering_report(final_rewards(rows, args.sweep_value), args.margin)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "oracle": cmd_oracle, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
