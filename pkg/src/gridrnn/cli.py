"""Command-line entry points.

Subcommands: simulate, train, evaluate, sweep-alpha, sweep-noise, sweep-env,
topology. Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, NumericError


def _add_common(parser):
    parser.add_argument("--config", default=None, help="TOML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override train.seed")
    parser.add_argument("--out", default=None, help="override output_dir")
    parser.add_argument(
        "--profile", choices=("desk", "paper"), default=None, help="scale profile"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridrnn",
        description="Leaky-RNN path integration: simulation, training, analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a trajectory and write it as CSV")
    _add_common(p)
    p.add_argument("--steps", type=int, default=1000, help="trajectory length T")

    p = sub.add_parser("train", help="one training run from the config")
    _add_common(p)
    p.add_argument("--alpha", type=float, default=None, help="override train.alpha")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint (per-T MSE, grid stats)")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-list", default="20,50", help="comma-separated sequence lengths")

    for name, help_text in (
        ("sweep-alpha", "seed-matched leak-rate sweep"),
        ("sweep-noise", "alpha x noise-intensity grid sweep"),
        ("sweep-env", "environment-length sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p = sub.add_parser("topology", help="persistence + torus analysis of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shuffles", type=int, default=3)
    return parser


def _run(args) -> int:
    # experiment imports numba-backed modules; keep import inside so that
    # `gridrnn --help` stays instant
    from . import experiment
    from .trainer import train as train_run
    from .network import init_params
    from .trajectory import generate_trajectory, write_trajectory_csv

    config = experiment.load_config(
        args.config, profile=args.profile, seed=args.seed, output_dir=args.out
    )
    os.makedirs(config.output_dir, exist_ok=True)

    if args.command == "simulate":
        traj = generate_trajectory(
            config.arena, config.motion, args.steps, rng_seed=config.train.seed
        )
        path = os.path.join(config.output_dir, "trajectory.csv")
        write_trajectory_csv(traj, path)
        print(path)
        return 0

    if args.command == "train":
        train_cfg = config.train
        if args.alpha is not None:
            from dataclasses import replace

            train_cfg = replace(train_cfg, alpha=args.alpha)
        ensemble = experiment.make_ensemble(config)
        params0 = init_params(
            train_cfg.n_rec,
            ensemble.n_cells,
            alpha=train_cfg.alpha,
            seed=train_cfg.seed,
            rec_init=train_cfg.rec_init,
        )
        noise = None if config.noise.kind == "none" else config.noise
        stem = os.path.join(config.output_dir, f"train_alpha{train_cfg.alpha:g}")
        _, report = train_run(
            train_cfg,
            config.arena,
            config.motion,
            ensemble,
            params0,
            noise=noise,
            checkpoint_path=stem + ".ckpt",
        )
        from .trainer import write_loss_curve_csv

        write_loss_curve_csv(report, stem + ".loss.csv")
        print(stem + ".ckpt")
        print(f"final_loss={report.final_loss!r} final_mse={report.final_mse!r}")
        return 3 if report.diverged else 0

    if args.command == "evaluate":
        t_list = [int(x) for x in args.t_list.split(",") if x.strip()]
        per_t, ev = experiment.evaluate_checkpoint(
            config,
            args.checkpoint,
            t_list=t_list,
            export_dir=os.path.join(config.output_dir, "evaluation"),
        )
        for T, mse in sorted(per_t.items()):
            print(f"T={T} mse={mse!r}")
        print(f"mean_gs={ev.mean_gs!r} defined_fraction={ev.defined_fraction!r}")
        return 0

    if args.command == "sweep-alpha":
        result = experiment.run_alpha_sweep(config)
    elif args.command == "sweep-noise":
        result = experiment.run_noise_sweep(config)
    elif args.command == "sweep-env":
        result = experiment.run_env_length_sweep(config)
    elif args.command == "topology":
        experiment.run_topology(
            config,
            args.checkpoint,
            os.path.join(config.output_dir, "topology"),
            n_shuffles=args.shuffles,
        )
        print(os.path.join(config.output_dir, "topology"))
        return 0
    else:  # pragma: no cover
        raise ConfigError(f"unknown command {args.command}")
    print(result.output_dir)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
