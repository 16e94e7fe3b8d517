"""Command-line front end: training runs, the exact resampling
certificate, bias-contraction measurement, the resampling walkthrough,
gradient integrity checks, and the benchmark matrix runner.

Exit codes: 0 success, 1 check-suite failure, 2 configuration or usage
error.
"""

from __future__ import annotations

import os

# keep linear algebra single-threaded: the nets are small, thread fan-out
# only adds overhead, and benchmark workers each own a core
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
import multiprocessing as mp

import numpy as np

from .config import RunConfig, apply_overrides, load_config, serialize_config
from .errors import ConfigError, ParseError


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.steps is not None:
        overrides.append(f"run.steps={args.steps}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    return apply_overrides(config, overrides)


def cmd_train(args) -> int:
    from .agents import make_agent, train

    config = _load_run_config(args)
    if config.agent["id"] == "sac-naive":
        print(
            "warning: sac-naive ignores the action buffer and delays; its "
            "observations are not Markov in delayed settings",
            file=sys.stderr,
        )
    task = config.build_task()
    hp = config.hyperparams()
    seed = config.run["seed"]
    agent = make_agent(config.agent["id"], task,
                       hp, np.random.default_rng(np.random.SeedSequence([seed, 0xA9])))
    out = config.run["out"] or None
    rows = train(task.channel_factory(), agent, hp, config.run["steps"], seed,
                 metrics_path=out)
    if rows:
        last = rows[-1]
        print(f"final eval return after {last[0]} steps: {last[1]:.4f}")
    if out:
        print(f"metrics written to {out}")
    return 0


def cmd_oracle_check(args) -> int:
    from .fixtures import run_theorem1_matrix

    rows = run_theorem1_matrix()
    lines = ["fixture,max_abs_error,pass"]
    ok = True
    for name, err, passed in rows:
        ok &= passed
        lines.append(f"{name},{float(err)!r},{'pass' if passed else 'fail'}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    print(text, end="")
    return 0 if ok else 1


def cmd_bias_check(args) -> int:
    from .core_mdp import TabularPolicy
    from .delay_channel import DelayProcess
    from .estimators import BiasFixture, measure_bias_reduction
    from .fixtures import base_mdp
    from .oracle import build_augmented

    gamma = 0.99
    base = base_mdp(3)
    aug = build_augmented(base, DelayProcess.constant(2), DelayProcess.constant(3), 2, 3)
    pi = TabularPolicy([[0.4, 0.6], [0.7, 0.3], [0.5, 0.5]])
    mu = TabularPolicy([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    x0 = aug.initial_state_index()
    lines = ["n,gamma,measured_ratio,expected_ratio"]
    ok = True
    for mode_mu in (None, mu):
        fixture = BiasFixture(aug, pi, x0, mu=mode_mu)
        for n in (1, 2, 3, 5):
            ratio = measure_bias_reduction(fixture, 1.0, n, gamma)
            expected = gamma**n
            ok &= abs(ratio - expected) <= 1e-10
            lines.append(f"{n},{gamma},{float(ratio)!r},{float(expected)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    print(text, end="")
    return 0 if ok else 1


def cmd_resample_demo(args) -> int:
    from .fixtures import fig4_walkthrough

    table = fig4_walkthrough()
    print("1D-world walkthrough: K=3, behavior 'always left', current "
          "policy 'always right'")
    print(f"validity length n = {table['n']}")
    header = f"{'t':>2} {'obs':>4} {'alpha':>5} {'beta':>4} {'reward':>6} " \
             f"{'stored buffer':>16} {'resampled buffer':>18}"
    print(header)
    names = {0: "L", 1: "R"}
    for row in table["rows"]:
        stored = "(" + ",".join(names[a] for a in row["stored"]) + ")"
        resampled = "(" + ",".join(names[a] for a in row["resampled"]) + ")"
        print(f"{row['t']:>2} {row['obs']:>4} {row['alpha']:>5} {row['beta']:>4} "
              f"{row['reward']:>6.1f} {stored:>16} {resampled:>18}")
    return 0


def cmd_gradient_check(args) -> int:
    from .gradcheck import run_gradient_checks

    ok = True
    for name, err, passed in run_gradient_checks():
        ok &= passed
        print(f"{name}: max relative error {err:.3e} "
              f"{'pass' if passed else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Benchmark matrix
# ---------------------------------------------------------------------------

def _run_cell(payload):
    """One (agent, seed) training cell; runs in a worker process."""
    config, final_window = payload
    from .agents import make_agent, train

    task = config.build_task()
    hp = config.hyperparams()
    seed = config.run["seed"]
    agent = make_agent(config.agent["id"], task, hp,
                       np.random.default_rng(np.random.SeedSequence([seed, 0xA9])))
    rows = train(task.channel_factory(), agent, hp, config.run["steps"], seed)
    returns = [r[1] for r in rows[-final_window:]] if rows else [0.0]
    key = (config.env["id"], config.delay_label(), config.agent["id"], seed)
    return key, returns


def bootstrap_interval(values, rng, resamples=1000, level=0.90):
    """Percentile bootstrap interval for the mean."""
    values = np.asarray(values, dtype=float)
    means = np.empty(resamples)
    for k in range(resamples):
        means[k] = values[rng.integers(0, values.size, values.size)].mean()
    lo = float(np.percentile(means, 100 * (1 - level) / 2))
    hi = float(np.percentile(means, 100 * (1 + level) / 2))
    return lo, hi


def run_benchmark_suite(base_config: RunConfig, agents, seeds, workers=None,
                        final_window=10, out_path=None):
    """Run each (agent, seed) cell of the matrix and aggregate the
    final-window eval returns with a percentile-bootstrap 90% interval.

    Returns {(env, delay, agent): (mean, lo90, hi90, returns)} and writes
    the summary CSV when a path is given. Cells run in a spawn-based
    worker pool with single-threaded linear algebra; per-cell results
    depend only on (config, seed), never on the worker count.
    """
    cells = []
    for agent_id in agents:
        for seed in seeds:
            overrides = [f"agent.id={agent_id}", f"run.seed={seed}"]
            cells.append((apply_overrides(base_config, overrides), final_window))
    if workers is None:
        workers = min(len(cells), os.cpu_count() or 1)
    if workers > 1:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(cell) for cell in cells]

    pooled: dict = {}
    for (env_id, delay, agent_id, _seed), returns in sorted(results, key=lambda r: r[0]):
        pooled.setdefault((env_id, delay, agent_id), []).extend(returns)
    summary = {}
    for key in sorted(pooled):
        values = pooled[key]
        tag = zlib.crc32("/".join(str(k) for k in key).encode())
        rng = np.random.default_rng(np.random.SeedSequence([0xB007, tag]))
        lo, hi = bootstrap_interval(values, rng)
        summary[key] = (float(np.mean(values)), lo, hi, values)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("env,delay,agent,mean,lo90,hi90\n")
            for (env_id, delay, agent_id), (mean, lo, hi, _v) in summary.items():
                fh.write(f"{env_id},{delay},{agent_id},{mean!r},{lo!r},{hi!r}\n")
    return summary


def cmd_benchmark(args) -> int:
    config = _load_run_config(args)
    agents = [a.strip() for a in args.agents.split(",") if a.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    out = config.run["out"] or "benchmark_summary.csv"
    summary = run_benchmark_suite(config, agents, seeds, workers=args.workers,
                                  final_window=args.final_window, out_path=out)
    for (env_id, delay, agent_id), (mean, lo, hi, _v) in summary.items():
        print(f"{env_id} {delay} {agent_id}: mean {mean:.4f} [{lo:.4f}, {hi:.4f}]")
    print(f"summary written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayrl",
        description="Random-delay MDP simulation, resampled multi-step value "
                    "estimation, and the delay-correcting actor-critic.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--steps", type=int, help="override run.steps")
        p.add_argument("--out", help="override run.out (output path)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="override section.key (repeatable)")

    p = sub.add_parser("train", help="train one agent on one delayed task")
    add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("oracle-check",
                       help="exact resampling certificate over the fixture matrix")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=cmd_oracle_check)

    p = sub.add_parser("bias-check", help="bias-contraction ratios vs gamma^n")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=cmd_bias_check)

    p = sub.add_parser("resample-demo",
                       help="print the 1D-world resampling walkthrough")
    p.set_defaults(fn=cmd_resample_demo)

    p = sub.add_parser("gradient-check",
                       help="finite-difference checks of all training losses")
    p.set_defaults(fn=cmd_gradient_check)

    p = sub.add_parser("benchmark", help="run the (agent x seed) matrix")
    add_common(p)
    p.add_argument("--agents", default="dcac,sac", help="comma-separated agent ids")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--final-window", type=int, default=10,
                   help="evaluation rows per run in the final window")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("show-config", help="print the canonical config form")
    add_common(p)
    p.set_defaults(fn=lambda args: print(serialize_config(_load_run_config(args))) or 0)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
