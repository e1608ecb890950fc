"""
Slicing transfer-learning experiments from the command line.

Subcommands: train-expert, deploy, oracle, sweep, report.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

from ai.oracle import oracle_best_reward
from ai.transfer import TransferMode
from constants import CONFIG_PATH, TOP_K
from harness.config import load_run_config
from harness.runner import deploy_run, load_traces, train_expert
from harness.sweep import sweep, write_report
from slicing.types import SlicingError

logger = logging.getLogger("slicing")


def _policy_dir(args) -> Path:
    return Path(args.policies) if args.policies else Path(args.out) / "policies"


def cmd_train_expert(args):
    config = load_run_config(args.config, args.pattern, transfer_overrides={"mode": TransferMode.NONE},
                             seed=args.seed, expert_keys=(),
                             **({"total_steps": args.steps} if args.steps else {}))
    record, result = train_expert(config, _policy_dir(args), args.out, args.key, args.overwrite)
    logger.info("expert %s: final average reward %.4f", record.context_key,
                record.metadata["final_avg_reward"])


def cmd_deploy(args):
    transfer = {"mode": TransferMode(args.mode)}
    for name in ("theta", "nu", "gamma"):
        if getattr(args, name) is not None:
            transfer[name] = getattr(args, name)
    explore = {"decay": args.eps_decay} if args.eps_decay is not None else {}
    overrides = {"seed": args.seed, "expert_keys": tuple(args.expert or ()),
                 "learner_init_key": args.learner_init, "save_learner_key": args.save_learner}
    if args.steps:
        overrides["total_steps"] = args.steps
    config = load_run_config(args.config, args.pattern, transfer_overrides=transfer,
                             explore_overrides=explore, **overrides)
    result = deploy_run(config, _policy_dir(args), args.out, run_id=args.run_id, overwrite=args.overwrite)
    m = result.metrics
    logger.info("initial reward %.4f, variance %.5f, converged %s (step %s), normalized reward %.4f",
                m.initial_reward, m.reward_variance, m.converged, m.steps_to_converge, m.avg_normalized_reward)
    logger.info("action sources: %s", m.action_source_counts)


def cmd_oracle(args):
    config = load_run_config(args.config, args.pattern, transfer_overrides={"mode": TransferMode.NONE},
                             seed=args.seed, expert_keys=())
    result = oracle_best_reward(config.env, config.seed, args.windows, load_traces(config.env))
    print(f"oracle average reward over {args.windows} windows: {result.average:.6f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window", "action_id", "reward"])
            for w, (action, reward) in enumerate(zip(result.actions, result.rewards)):
                writer.writerow([w, int(action), float(reward)])


def cmd_sweep(args):
    sweep(args.config, args.out, args.jobs, args.preset)


def cmd_report(args):
    write_report(getattr(args, "in"), args.top_k, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=CONFIG_PATH, help="YAML run configuration")
        p.add_argument("--pattern", help="traffic pattern id (default: run.traffic_pattern)")
        p.add_argument("--seed", type=int, default=0)
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--policies", help="policy directory (default: OUT/policies)")
            p.add_argument("--steps", type=int, help="override run.total_steps")
            p.add_argument("--overwrite", action="store_true", help="replace existing policy files")

    p = sub.add_parser("train-expert", help="train a policy without transfer and store it")
    common(p)
    p.add_argument("--key", help="context key (default: <S>slice/<pattern>/seed<N>)")
    p.set_defaults(func=cmd_train_expert)

    p = sub.add_parser("deploy", help="transfer-aided deployment run")
    common(p)
    p.add_argument("--mode", choices=[m.value for m in TransferMode], default="none")
    p.add_argument("--expert", action="append", help="expert context key (repeatable)")
    p.add_argument("--theta", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps-decay", type=float)
    p.add_argument("--learner-init", help="start the learner from this stored policy")
    p.add_argument("--save-learner", help="store the fine-tuned learner under this key")
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("oracle", help="exhaustive-search reward per window")
    common(p, out_required=False)
    p.add_argument("--windows", type=int, required=True)
    p.add_argument("--out", help="optional per-window CSV")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="run the configured grid")
    p.add_argument("--config", default=CONFIG_PATH)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--preset", help="named entry of sweep_presets, e.g. reduced")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate a sweep's metrics")
    p.add_argument("--in", required=True, help="sweep output directory")
    p.add_argument("--top-k", type=int, default=TOP_K)
    p.add_argument("--out", required=True, help="summary CSV; sibling files get _gamma/_curves/_deltas")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SlicingError as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
