"""Command line entry points: train, eval, ablate, calibrate."""

import argparse
import sys
from pathlib import Path

import numpy as np

from .body import default_body
from .config import ConfigError
from .envs import HandRegardEnv
from .evaluate import (evaluate_handregard, evaluate_selftouch, load_policy,
                       run_ablation, write_ablation_csv)
from .training import RunConfig, Trainer, load_run_config, run_babble
from .vision import calibrate_hand_model, seed_hand_model


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--behavior", choices=("selftouch", "handregard"),
                   required=True)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--divisor", type=int, default=None,
                   help="schedule scale divisor")
    p.add_argument("--pose-schedule", default=None,
                   choices=("curriculum", "fixed", "random"))
    p.add_argument("--resume", default=None, help="checkpoint to resume from")


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--stochastic", action="store_true",
                   help="sample actions instead of using the mean")
    p.add_argument("--dump-frames", default=None,
                   help="directory for rendered eye frames")


def _add_ablate(sub) -> None:
    p = sub.add_parser("ablate", help="pose-schedule ablation")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="1,2,3", help="comma separated")
    p.add_argument("--out", required=True)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--divisor", type=int, default=None)
    p.add_argument("--eval-episodes", type=int, default=100)


def _add_calibrate(sub) -> None:
    p = sub.add_parser("calibrate", help="fit the hand appearance model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--out", required=True, help="model kv path")


def _train(args) -> int:
    overrides = {"behavior": args.behavior, "seed": args.seed,
                 "out_dir": args.out}
    if args.total_steps is not None:
        overrides["total_steps"] = args.total_steps
    if args.divisor is not None:
        overrides["divisor"] = args.divisor
    if args.pose_schedule is not None:
        overrides["pose_schedule"] = args.pose_schedule
    config = load_run_config(args.config, **overrides)
    Trainer(config, resume_path=args.resume).train()
    return 0


def _eval(args) -> int:
    policy, meta, model = load_policy(args.checkpoint)
    spec = default_body(sensor_count=int(meta["sensor_count"]))
    behavior = meta["behavior"]
    dump = args.dump_frames
    if dump is not None:
        Path(dump).mkdir(parents=True, exist_ok=True)
    if behavior == "selftouch":
        episodes = 100 if args.episodes is None else args.episodes
        report = evaluate_selftouch(
            policy, spec, episodes=episodes,
            episode_length=int(meta["episode_length"]), seed=args.seed,
            stochastic=args.stochastic, dump_dir=dump)
        report.write_csv(args.out)
        print(f"episodes {episodes}  mean_unique {report.mean_unique:.3f}  "
              f"coverage_68 {report.coverage_68:.3f}  "
              f"coverage_34 {report.coverage_34:.3f}")
    else:
        episodes = 10 if args.episodes is None else args.episodes
        report = evaluate_handregard(
            policy, model, spec, episodes=episodes,
            steps=int(meta["episode_length"]), seed=args.seed,
            stochastic=args.stochastic, dump_dir=dump)
        report.write_csv(args.out)
        print(f"episodes {episodes}  best_pair {report.best_pair:.2f}%  "
              f"average {report.average:.2f}%")
    return 0


def _ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s]
    overrides = {"behavior": "selftouch", "out_dir": args.out}
    if args.total_steps is not None:
        overrides["total_steps"] = args.total_steps
    if args.divisor is not None:
        overrides["divisor"] = args.divisor
    config = load_run_config(args.config, **overrides)
    rows, aggregates = run_ablation(config, seeds,
                                    eval_episodes=args.eval_episodes)
    out = Path(args.out) / "ablation.csv"
    write_ablation_csv(out, rows, aggregates)
    for variant in ("curriculum", "fixed", "random"):
        print(f"{variant}: aggregate coverage_34 "
              f"{aggregates[variant]:.3f}")
    return 0


def _calibrate(args) -> int:
    spec = default_body()
    env = HandRegardEnv(spec)
    rng = np.random.default_rng([args.seed, 2])
    dataset = run_babble(env, args.steps, rng)
    result = calibrate_hand_model(dataset.blobs, dataset.proprio,
                                  seed_hand_model())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.model.to_kv(), encoding="utf-8")
    result.write_audit_csv(out.with_name(out.stem + "_audit.csv"))
    for report in result.reports:
        print(f"track {report.track_id} eye {report.eye} "
              f"rho {report.rho:+.3f} "
              f"{'kept' if report.kept else 'rejected'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="crib-lab",
        description="intrinsically motivated sensorimotor learning testbed")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_eval(sub)
    _add_ablate(sub)
    _add_calibrate(sub)
    args = parser.parse_args(argv)
    handlers = {"train": _train, "eval": _eval, "ablate": _ablate,
                "calibrate": _calibrate}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
