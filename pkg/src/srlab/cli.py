"""Command-line front end.

Subcommands::

    srlab design                     print gains, metric, certificates
    srlab run    --policy NAME ...   one mission, trace CSV + summary
    srlab train  [--steps N] ...     train the learned governor
    srlab eval   --model PATH ...    paired comparison vs. the baseline

Exit status: 0 on success, 1 on configuration or usage errors, 2 on runtime
failures (an unstable or timed-out mission, a failed design).
"""

import argparse
import os
import sys

import numpy as np

from . import harness
from .governor import AlphaPolicy, ModelNotLoaded, conservative_alpha
from .harness import ConfigError
from .numkit import NoConvergence, NonFinite, hurwitz_certificate
from .plant import GimbalLock
from .sac import SacAgent, SchemaMismatch

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="srlab",
        description="Rejuvenation-protected tracking laboratory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")

    sub.add_parser("design", parents=[common], help="print the designed system")

    p_run = sub.add_parser("run", parents=[common], help="run one mission")
    p_run.add_argument(
        "--policy",
        choices=AlphaPolicy.KINDS,
        help="governor to use (default from config)",
    )
    p_run.add_argument("--model", help="model file (required for --policy rl)")
    p_run.add_argument("--out-dir", help="output directory (default from config)")

    p_train = sub.add_parser("train", parents=[common], help="train the governor")
    p_train.add_argument("--steps", type=int, help="override total environment steps")
    p_train.add_argument("--out", help="model file path (default OUT_DIR/model.bin)")

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    p_eval.add_argument("--model", required=True, help="model file to evaluate")
    p_eval.add_argument("--episodes", type=int, default=20, help="paired episodes")
    p_eval.add_argument("--out-dir", help="output directory (default from config)")
    return parser


def _load_config(args, **overrides):
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return harness.load_config(path=args.config, overrides=overrides)


def _matrix_lines(name, m):
    body = np.array2string(
        np.asarray(m), precision=6, suppress_small=True, max_line_width=120
    )
    return [f"{name} ="] + ["  " + line for line in body.splitlines()]


def _cmd_design(args):
    cfg = _load_config(args)
    bundle = harness.build_bundle(cfg)
    sysm = bundle.system
    lines = []
    lines += _matrix_lines("K", sysm.gains.k)
    lines += _matrix_lines("L", sysm.gains.l)
    lines += _matrix_lines("P", sysm.metric.p.m)
    a_cl = sysm.a - sysm.b @ sysm.gains.k
    a_obs = sysm.a - sysm.gains.l @ sysm.c
    lines.append(f"regulator loop stable: {hurwitz_certificate(a_cl)}")
    lines.append(f"observer loop stable: {hurwitz_certificate(a_obs)}")
    lines.append(f"recovery level rho_s: {sysm.metric.rho_s}")
    lines.append(f"monitoring level rho_m: {sysm.metric.rho_m}")
    lines.append(f"conservative alpha: {conservative_alpha(sysm.metric):.6f}")
    print("\n".join(lines))
    return EXIT_OK


def _cmd_run(args):
    cfg = _load_config(args, policy=args.policy, out_dir=args.out_dir)
    bundle = harness.build_bundle(cfg)
    agent = None
    alpha_max = cfg.alpha_max
    if cfg.policy == "rl":
        if not args.model:
            raise ConfigError("--policy rl needs --model PATH")
        agent, stored = SacAgent.load(args.model)
        if stored is not None:
            alpha_max = float(stored)
    policy = AlphaPolicy(kind=cfg.policy, agent=agent, alpha_max=alpha_max)
    noise_rng, policy_rng, _ = harness.spawn_rngs(cfg.seed)
    result, traces = harness.run_episode(
        bundle,
        policy,
        noise_rng,
        policy_rng=policy_rng,
        deterministic=True,
        cycle_cap=cfg.cycle_cap,
        record_every=cfg.record_every,
        keep_traces=True,
    )
    summary = [
        f"policy: {cfg.policy}",
        f"seed: {cfg.seed}",
        f"success: {result.success}",
        f"failure: {result.failure or 'none'}",
        f"mission time: {result.mission_time:.3f} s",
        f"cycles: {result.cycles}",
        f"final position error: {result.final_pos_error:.6f} m",
        f"mean alpha: {float(np.mean(result.alpha)):.6f}",
        f"max MC-peak est norm^2: {float(np.max(result.mc_peak_est)):.6f}",
        f"monitored bound rho_m: {bundle.system.metric.rho_m}",
        "",
    ] + harness.config_echo_lines(cfg)
    csv_path, summary_path = harness.export_traces(
        traces, cfg.out_dir, prefix=f"trace_{cfg.policy}", summary_lines=summary
    )
    outcome = "success" if result.success else f"failure ({result.failure})"
    print(
        f"{cfg.policy} mission {outcome}: {result.mission_time:.3f} s, "
        f"{result.cycles} cycles -> {csv_path}"
    )
    if not result.success:
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_train(args):
    cfg = _load_config(args, total_steps=args.steps)
    model_path = args.out or os.path.join(cfg.out_dir, "model.bin")

    def progress(episode, steps_done, row):
        print(
            f"episode {episode}: steps {row[1]}, return {row[2]:.3f}, "
            f"time {row[3]:.1f} s, failure '{row[4]}', beta {row[5]:.4f} "
            f"({steps_done}/{cfg.total_steps})",
            flush=True,
        )

    model_path, log_path, rows = harness.train(
        cfg, model_path=model_path, progress=progress
    )
    print(f"trained {sum(r[1] for r in rows)} steps over {len(rows)} episodes")
    print(f"model: {model_path}")
    print(f"log: {log_path}")
    return EXIT_OK


def _cmd_eval(args):
    cfg = _load_config(args, out_dir=args.out_dir)
    summary = harness.evaluate(
        cfg, args.model, episodes=args.episodes, seed=cfg.seed
    )
    txt, series = harness.write_eval_outputs(summary, cfg.out_dir)
    sys.stdout.write(harness.format_eval_summary(summary))
    print(f"summary: {txt}")
    print(f"cycles: {series}")
    failures = (
        summary["rl"]["episodes"]
        - summary["rl"]["successes"]
        + summary["baseline"]["episodes"]
        - summary["baseline"]["successes"]
    )
    if failures:
        return EXIT_RUNTIME
    return EXIT_OK


_COMMANDS = {
    "design": _cmd_design,
    "run": _cmd_run,
    "train": _cmd_train,
    "eval": _cmd_eval,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, SchemaMismatch, ModelNotLoaded) as exc:
        print(f"srlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"srlab: missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergence, NonFinite, GimbalLock) as exc:
        print(f"srlab: runtime failure: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
