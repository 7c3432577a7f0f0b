"""
Command-line pipeline: generate or load a pool, compute persistence
diagrams, run the BO benchmark, and aggregate convergence curves.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error,
5 resource error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bo import RunConfig, benchmark, build_pool, derive_seed, read_trace, write_trace
from .datasets import R_MAX, R_MIN, PoolFormatError, gen_orbit, load_jsonl, load_xyz_dir, save_jsonl
from .gp import GPNumericalError
from .pd_kernels import KERNELS
from .persistence import (
    SimplexBudgetError,
    compute_diagram,
    diagram_record,
    diameter_radius,
    enclosing_radius,
    read_cache,
    subsample_maxmin,
    write_cache,
)

logger = logging.getLogger("topobo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 2, 3, 4, 5

# table row -> (degrees, mkl)
VARIANTS = {
    "0th": ("h0", "none"),
    "1st": ("h1", "none"),
    "sum": ("both", "none"),
    "align": ("both", "align"),
    "mle": ("both", "mle"),
}


class UsageError(Exception):
    """Flags that parse but contradict each other."""


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _radius(text: str):
    if text == "auto":
        return "auto"
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("max radius must be positive or 'auto'")
    return v


def _resolve(args, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _echo_config(path: Path, args, **resolved) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved)
    cfg["version"] = __version__
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg, indent=1, sort_keys=True, default=str) + "\n")


def _load_pool(path):
    if not path.exists():
        raise FileNotFoundError(f"pool not found: {path}")
    return load_xyz_dir(path) if path.is_dir() else load_jsonl(path)


# --- gen-orbit ----------------------------------------------------------------

def cmd_gen_orbit(args) -> int:
    if not args.r_min < args.r_max:
        raise UsageError("--r-min must be below --r-max")
    pool = gen_orbit(args.count, args.points, args.r_min, args.r_max, args.seed, args.shared_start)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(pool, out)
    _echo_config(out.with_name(out.stem + ".config.json"), args, out_path=str(out))
    y = pool.labels
    print(f"wrote {len(pool)} clouds x {args.points} points to {out}; labels in [{y.min():.4f}, {y.max():.4f}]")
    return EXIT_OK


# --- diagrams -----------------------------------------------------------------

def _diagram_job(job):
    cloud, degree, radius = job
    return compute_diagram(cloud, degree, radius)


def cmd_diagrams(args) -> int:
    pool = _load_pool(_resolve(args, args.pool))
    degrees = (0, 1) if args.degree == "both" else (int(args.degree),)
    out = _resolve(args, args.out)
    cached = read_cache(out)
    meta = {"subsample": args.subsample, "subsample_seed": args.seed if args.subsample else None}

    index = {}
    for rec in cached:
        if rec.get("subsample") == meta["subsample"] and rec.get("subsample_seed") == meta["subsample_seed"]:
            index[(rec["id"], rec["degree"], rec["max_radius"])] = rec

    records, jobs, slots = [], [], []
    for cloud in pool.clouds:
        work = cloud
        if args.subsample and args.subsample < cloud.n_points:
            work = subsample_maxmin(cloud, args.subsample, args.seed)
        for degree in degrees:
            if args.max_radius == "auto":
                radius = (enclosing_radius if degree == 1 else diameter_radius)(work.points)
            else:
                radius = args.max_radius
            hit = index.get((cloud.id, degree, float(radius)))
            if hit is not None:
                records.append(hit)
                continue
            slots.append((len(records), cloud.id, float(radius)))
            records.append(None)
            jobs.append((work, degree, radius if radius > 0 else None))

    n_hits = len(records) - len(jobs)
    if n_hits:
        logger.info("cache hits: %d of %d diagrams reused from %s", n_hits, len(records), out)
    if jobs:
        logger.info("computing %d diagrams with %d worker(s)", len(jobs), args.threads)
        if args.threads > 1:
            with ProcessPoolExecutor(max_workers=args.threads) as ex:
                results = ex.map(_diagram_job, jobs, chunksize=max(1, len(jobs) // (4 * args.threads)))
                results = _with_progress(results, len(jobs))
        else:
            results = _with_progress(map(_diagram_job, jobs), len(jobs))
        for (pos, cid, radius), dgm in zip(slots, results):
            records[pos] = diagram_record(cid, dgm, radius, **meta)

    out.parent.mkdir(parents=True, exist_ok=True)
    write_cache(out, ({k: v for k, v in r.items() if k != "diagram"} for r in records))
    _echo_config(out.with_name(out.stem + ".config.json"), args, out_path=str(out))
    print(f"wrote {len(records)} diagrams ({len(jobs)} computed, {n_hits} cached) to {out}")
    return EXIT_OK


def _with_progress(results, total):
    step = max(1, total // 10)
    out = []
    for k, r in enumerate(results, 1):
        out.append(r)
        if k % step == 0 or k == total:
            logger.info("diagrams: %d/%d", k, total)
    return out


# --- run ----------------------------------------------------------------------

def _configs(args) -> list[RunConfig]:
    kernels = [k.strip() for k in args.kernel.split(",") if k.strip()]
    for k in kernels:
        if k not in KERNELS:
            raise UsageError(f"unknown kernel {k!r}; choose from {', '.join(KERNELS)}")
    if args.variants:
        rows = [v.strip() for v in args.variants.split(",") if v.strip()]
        bad = [v for v in rows if v not in VARIANTS]
        if bad:
            raise UsageError(f"unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}")
        settings = [VARIANTS[v] for v in rows]
    else:
        settings = [(args.degrees, args.mkl)]
    configs = []
    try:
        for k in kernels:
            for degrees, mkl in settings:
                configs.append(RunConfig(
                    kernel=k, degrees=degrees, mkl=mkl, n_init=args.n_init, n_steps=args.steps,
                    noise_sd=args.noise_sd, repeats=args.repeats, seed=args.seed,
                ))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return configs


def _diagrams_for(pool, pds_path, degrees):
    recs = read_cache(pds_path)
    if not recs:
        raise FileNotFoundError(f"no diagrams in {pds_path}")
    table = {}
    for rec in recs:
        key = (rec["id"], rec["degree"])
        if key in table and table[key]["max_radius"] != rec["max_radius"]:
            raise ValueError(f"{pds_path}: several radii cached for {key[0]} degree {key[1]}")
        table[key] = rec
    out = {}
    for d in degrees:
        missing = [cid for cid in pool.ids if (cid, d) not in table]
        if missing:
            raise ValueError(f"{pds_path}: no degree-{d} diagram for {len(missing)} clouds, e.g. {missing[0]}")
        out[d] = [table[(cid, d)]["diagram"] for cid in pool.ids]
    return out


def _stem(name: str) -> str:
    return name.replace(":", "-")


def cmd_run(args) -> int:
    configs = _configs(args)
    pool = _load_pool(_resolve(args, args.pool))
    needed = sorted({d for c in configs for d in {"h0": (0,), "h1": (1,), "both": (0, 1)}[c.degrees]})
    dgms = _diagrams_for(pool, _resolve(args, args.pds), needed)
    kernels = sorted({c.kernel for c in configs}, key=KERNELS.index)
    dataset = Path(args.pool).stem
    bp = build_pool(pool.ids, pool.labels, dgms, kernels=kernels,
                    rff_features=args.rff_features or None, rff_seed=args.seed, name=dataset)
    result = benchmark(bp, configs, master_seed=args.seed, repeats=args.repeats)

    out = _resolve(args, args.out)
    traces_dir = out / "traces"
    for name, traces in result.traces.items():
        cfg = next((c for c in configs if c.name == name), None)
        for i, tr in enumerate(traces):
            write_trace(tr, traces_dir, f"{_stem(name)}-{i:03d}", config=cfg, method=name,
                        extra={"repeat": i, "master_seed": args.seed})
    result.write_csv(out / "summary.csv")
    result.write_table(out / "table.csv", dataset=dataset)
    (out / "summary.txt").write_text(result.to_text() + "\n")
    _echo_config(out / "config.json", args, out_path=str(out), configs=[c.name for c in configs],
                 repeat_seeds=[derive_seed(args.seed, i) for i in range(args.repeats)])
    print(result.to_text())
    return EXIT_OK


# --- report -------------------------------------------------------------------

def convergence_curves(trace_paths):
    """Mean best-so-far per step for every method, plus the pool target."""
    curves = defaultdict(list)
    targets = []
    for p in trace_paths:
        tr, meta = read_trace(p)
        curves[meta["method"]].append(tr.best_by_step())
        targets.append(meta["target"])
    if not curves:
        raise ValueError("no traces to report")
    length = max(len(c) for cs in curves.values() for c in cs)
    means = {}
    for method, cs in curves.items():
        # truncated traces hold their last best value
        padded = np.array([np.pad(c, (0, length - len(c)), mode="edge") for c in cs])
        means[method] = padded.mean(axis=0)
    order = sorted(means, key=lambda m: (m != "random", m))
    return order, means, float(min(targets)), length


def cmd_report(args) -> int:
    runs = _resolve(args, args.runs)
    if not runs.is_dir():
        raise FileNotFoundError(f"runs directory not found: {runs}")
    paths = sorted(p for p in runs.rglob("*.csv") if p.with_suffix(".json").exists())
    if not paths:
        raise ValueError(f"no traces found under {runs}")
    order, means, target, length = convergence_curves(paths)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *order, "target"])
        for s in range(length):
            w.writerow([s, *(repr(float(means[m][s])) for m in order), repr(target)])
    _echo_config(out.with_name(out.stem + ".config.json"), args, out_path=str(out), traces=len(paths))
    print(f"wrote {length} steps for {len(order)} methods from {len(paths)} traces to {out}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topobo", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--out-dir", default=".", help="directory that relative input and output paths resolve against")
    parser.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker processes for diagram computation (default: all cores)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-orbit", help="generate a linked-twist-map orbit pool")
    p.add_argument("--count", type=_positive_int, default=1000, help="number of clouds M")
    p.add_argument("--points", type=_positive_int, default=1000, help="points per cloud N")
    p.add_argument("--r-min", type=float, default=R_MIN)
    p.add_argument("--r-max", type=float, default=R_MAX)
    p.add_argument("--shared-start", action="store_true", help="use one starting point for every cloud")
    p.add_argument("--out", default="pool.jsonl")
    p.set_defaults(func=cmd_gen_orbit)

    p = sub.add_parser("diagrams", help="compute persistence diagrams into a cache file")
    p.add_argument("--pool", required=True, help="JSONL pool file or directory of .xyz files")
    p.add_argument("--degree", choices=["0", "1", "both"], default="1")
    p.add_argument("--max-radius", type=_radius, default="auto")
    p.add_argument("--subsample", type=_positive_int, default=None,
                   help="farthest-point subsample to this many points first")
    p.add_argument("--out", default="pds.jsonl")
    p.set_defaults(func=cmd_diagrams)

    p = sub.add_parser("run", help="run BO against the random baseline")
    p.add_argument("--pool", required=True)
    p.add_argument("--pds", required=True, help="diagram cache from 'diagrams'")
    p.add_argument("--kernel", default="pwgk_linear", help=f"comma-separated subset of {', '.join(KERNELS)}")
    p.add_argument("--degrees", choices=["h0", "h1", "both"], default="h1")
    p.add_argument("--mkl", choices=["none", "align", "mle"], default="none")
    p.add_argument("--variants", default=None,
                   help=f"comma-separated table rows from {', '.join(VARIANTS)}; overrides --degrees/--mkl")
    p.add_argument("--steps", type=_nonneg_int, default=100)
    p.add_argument("--n-init", type=_positive_int, default=10)
    p.add_argument("--repeats", type=_positive_int, default=30)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--rff-features", type=_nonneg_int, default=0,
                   help="approximate PWGK with this many random features (0 = exact)")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate traces into convergence curves")
    p.add_argument("--runs", default="run")
    p.add_argument("--out", default="curves.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "noise_sd", 0) < 0:
        parser.error("--noise-sd must be non-negative")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"topobo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimplexBudgetError, MemoryError) as exc:
        print(f"topobo: resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (GPNumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"topobo: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PoolFormatError, ValueError, KeyError, OSError) as exc:
        print(f"topobo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
