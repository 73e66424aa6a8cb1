"""Command-line entry point: ``laber {train,variance-study,tv-study,bench}``.

Exit codes: 0 success, 1 assertion/acceptance failure, 2 usage or
configuration error. ``LABER_LOG`` sets the log level.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .agents import SAMPLERS, Agent
from .config import load_config, make_env, tv_bin_edges
from .diagnostics import TVStudyConfig, export, tv_study
from .errors import ConfigError
from .network import L2, Network, batch_gradient, forward
from .sampling import PriorityVector, expected_squared_norm, normalize_priorities, optimal_distribution, uniform

log = logging.getLogger("laber")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# Two-sample instance: gradient norms (10, 5), absolute TD errors (1, 4).
COUNTER_EXAMPLE_GRAD_NORMS = (10.0, 5.0)
COUNTER_EXAMPLE_TD_ERRORS = (1.0, 4.0)
COUNTER_EXAMPLE_EXPECTED = {"uniform": 62.5, "optimal": 56.25, "td_error": 132.8125}


def _overrides(args):
    out = {}
    if getattr(args, "seed", None) is not None:
        out["run.seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        out["run.steps"] = args.steps
    if getattr(args, "out", None) is not None:
        out["run.out"] = args.out
    if getattr(args, "sampler", None) is not None:
        out["agent.sampler"] = args.sampler
    if getattr(args, "m", None) is not None:
        out["agent.m"] = args.m
    if getattr(args, "batch_size", None) is not None:
        out["agent.batch_size"] = args.batch_size
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}", key=item)
        out[key.strip()] = value
    return out


def _parse_seeds(text):
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            return [int(lo)]
        return list(range(int(lo), int(hi) + 1))
    except ValueError:
        raise ConfigError(f"--seeds expects a..b, got {text!r}", key="--seeds") from None


# -- train ---------------------------------------------------------------------


def run_training(cfg, out_dir):
    """Run one configured experiment and write its artifacts into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "command": "train",
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "files": [],
    }
    env = make_env(cfg)
    agent = Agent(env, cfg.agent, seed=cfg.seed)
    if cfg.steps > 0:
        records = agent.run(cfg.steps)
        fmt = cfg.diagnostics["format"]
        curve = out / f"curve.{fmt}"
        export(records, curve, fmt)
        manifest["files"].append(curve.name)
        if cfg.run["checkpoint"]:
            agent.save(out / "checkpoint.bin")
            manifest["files"].append("checkpoint.bin")
        returns = [r.episode_return for r in records if r.episode_return is not None]
        manifest["episodes"] = len(returns)
        manifest["mean_return_last10"] = float(np.mean(returns[-10:])) if returns else None
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s", out)
    return manifest


def _train_one(args):
    cfg, out_dir = args
    run_training(cfg, out_dir)
    return out_dir


def cmd_train(args):
    overrides = _overrides(args)
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
        base = load_config(args.config, overrides)
        jobs = []
        for s in seeds:
            cfg = load_config(args.config, {**overrides, "run.seed": s})
            jobs.append((cfg, str(Path(base.run["out"]) / f"seed_{s}")))
        workers = max(1, min(args.workers or os.cpu_count() or 1, len(jobs)))
        if workers == 1:
            for job in jobs:
                print(_train_one(job))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for done in pool.map(_train_one, jobs):
                    print(done)
        return EXIT_OK
    cfg = load_config(args.config, overrides)
    run_training(cfg, cfg.run["out"])
    print(cfg.run["out"])
    return EXIT_OK


# -- variance study -------------------------------------------------------------


def variance_study():
    """Variances of the importance-weighted gradient on the two-sample counter-example."""
    g = np.array(COUNTER_EXAMPLE_GRAD_NORMS)
    p_td = normalize_priorities(PriorityVector(COUNTER_EXAMPLE_TD_ERRORS, alpha=1.0, c=0.0))
    p_star = optimal_distribution(g)
    return {
        "uniform": (uniform(2), expected_squared_norm(uniform(2), g)),
        "optimal": (p_star, expected_squared_norm(p_star, g)),
        "td_error": (p_td, expected_squared_norm(p_td, g)),
    }


def cmd_variance_study(args):
    results = variance_study()
    ok = True
    rows = []
    for name, (p, value) in results.items():
        expected = COUNTER_EXAMPLE_EXPECTED[name]
        passed = abs(value - expected) <= 1e-12
        ok &= passed
        status = "PASS" if passed else "FAIL"
        rows.append([name, repr(float(p[0])), repr(float(p[1])), repr(float(value)), repr(expected), status])
    worse = results["td_error"][1] > results["uniform"][1]
    ok &= worse
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["scheme", "p1", "p2", "variance", "expected", "status"])
    writer.writerows(rows)
    print(f"td_error_variance_exceeds_uniform,{worse},{'PASS' if worse else 'FAIL'}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "p1", "p2", "variance", "expected", "status"])
            w.writerows(rows)
    return EXIT_OK if ok else EXIT_FAIL


# -- tv study -------------------------------------------------------------------


def cmd_tv_study(args):
    base = {"env.name": "gridworld", "agent.sampler": "laber-mean", "diagnostics.record_tv": "true"}
    cfg = load_config(args.config, _overrides(args), base=base)
    if not cfg.agent.uses_large_batch:
        raise ConfigError("agent.sampler: the TV study needs a LaBER sampler", key="agent.sampler")
    if not cfg.agent.record_tv:
        raise ConfigError("agent.record_tv: the TV study needs TV recording", key="agent.record_tv")
    out = Path(cfg.run["out"])
    out.mkdir(parents=True, exist_ok=True)
    agent = Agent(make_env(cfg), cfg.agent, seed=cfg.seed)
    records = agent.run(cfg.steps)
    export(records, out / "tv_records.csv")
    study = tv_study(records, TVStudyConfig(tv_bin_edges(cfg), cfg.diagnostics["window_fraction"]))
    with open(out / "tv_histograms.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["window", "bin_lo", "bin_hi", "surrogate", "uniform"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(study.table_rows())
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["window", "n", "mean_tv_surrogate", "mean_tv_uniform", "p_value", "status"])
    ok = True
    for w in study.windows.values():
        passed = w.n > 0 and w.mean_surrogate < w.mean_uniform and w.p_value < args.alpha
        ok &= passed
        writer.writerow([w.name, w.n, repr(w.mean_surrogate), repr(w.mean_uniform), repr(w.p_value),
                         "PASS" if passed else "FAIL"])
    with open(out / "manifest.json", "w") as fh:
        json.dump({"version": __version__, "command": "tv-study", "seed": cfg.seed, "config": cfg.to_dict(),
                   "files": ["tv_records.csv", "tv_histograms.csv"]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.check and not ok:
        return EXIT_FAIL
    return EXIT_OK


# -- bench -----------------------------------------------------------------------


def bench(sizes, batch_sizes, passes, seed=0):
    """Mean and std (ms) of forward-only and forward+backward passes per batch size."""
    rng = np.random.default_rng(seed)
    acts = ["relu"] * (len(sizes) - 2) + ["identity"]
    net = Network.init(sizes, acts, rng)
    table = {"forward": [], "backward": []}
    for b in batch_sizes:
        x = rng.normal(size=(b, sizes[0]))
        y = rng.normal(size=b)
        fwd, bwd = [], []
        for _ in range(passes):
            t0 = time.perf_counter()
            forward(net, x)
            fwd.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            cache = forward(net, x)
            batch_gradient(net, cache, y, L2)
            bwd.append(time.perf_counter() - t0)
        table["forward"].append((1e3 * np.mean(fwd), 1e3 * np.std(fwd)))
        table["backward"].append((1e3 * np.mean(bwd), 1e3 * np.std(bwd)))
    return table


def cmd_bench(args):
    try:
        sizes = [int(v) for v in args.sizes.split(",")]
        batch_sizes = [int(v) for v in args.batch_sizes.split(",")]
    except ValueError:
        raise ConfigError("--sizes and --batch-sizes take comma-separated integers", key="--sizes") from None
    if len(sizes) < 2 or sizes[-1] < 1 or min(batch_sizes) < 1:
        raise ConfigError("--sizes needs at least input and output widths", key="--sizes")
    if args.passes < 20:
        raise ConfigError("--passes must be >= 20", key="--passes")
    table = bench(sizes, batch_sizes, args.passes, args.seed or 0)
    lines = [["pass"] + [f"B={b}" for b in batch_sizes]]
    for name, cells in table.items():
        lines.append([name] + [f"{m:.4f} ± {s:.4f}" for m, s in cells])
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerows(lines)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(lines)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def _run_flags(p):
    p.add_argument("--config", help="INI-style config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--sampler", choices=SAMPLERS)
    p.add_argument("--m", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="laber", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an agent and write curve, checkpoint and manifest")
    _run_flags(p)
    p.add_argument("--seeds", help="sweep a..b, one output directory per seed")
    p.add_argument("--workers", type=int, help="parallel workers for --seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("variance-study", help="exact variances on the two-sample counter-example")
    p.add_argument("--out", help="optional CSV copy of the table")
    p.set_defaults(func=cmd_variance_study)

    p = sub.add_parser("tv-study", help="surrogate vs optimal sampling distribution gap during LaBER training")
    _run_flags(p)
    p.add_argument("--alpha", type=float, default=0.01, help="rank-sum significance level")
    p.add_argument("--check", action="store_true", help="exit 1 unless every window is significant")
    p.set_defaults(func=cmd_tv_study)

    p = sub.add_parser("bench", help="time forward vs forward+backward passes")
    p.add_argument("--sizes", default="64,256,256,256,1", help="layer widths, input first")
    p.add_argument("--batch-sizes", default="32,64,128,256")
    p.add_argument("--passes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("LABER_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"laber {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"laber {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
