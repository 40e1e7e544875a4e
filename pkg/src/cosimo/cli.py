"""Command-line surface: complex generation, experiment runs, spectrum
inspection, and trajectory-model training/evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import spectral_entropy_select
from .complexes import (
    ComplexError,
    hodge_operators,
    load_complex,
    random_points,
    save_complex,
)
from .delaunay import TriangulationError, delaunay_complex
from .experiments import (
    ConfigError,
    OversmoothConfig,
    StabilityConfig,
    TrajectoryConfig,
    config_from_dict,
    evaluate_trajectory_model,
    fit_trajectory_model,
    generate_trajectories,
    run_oversmoothing,
    run_stability,
    run_trajectory,
    write_manifest,
)
from .nn import load_model, save_model

_DEFAULT_HOLES_JSON = "[[0.3,0.3,0.12],[0.7,0.7,0.12]]"


class UsageError(ValueError):
    pass


def _parse_holes(text: str):
    try:
        raw = json.loads(text)
        return tuple(((float(h[0]), float(h[1])), float(h[2])) for h in raw)
    except (ValueError, TypeError, IndexError) as exc:
        raise UsageError(f"--holes must be a JSON list of [cx, cy, r] triples: {exc}")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("COSIMO_OUT") or "results"
    return Path(out)


def _jobs(args, realizations: int) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("COSIMO_JOBS")
    if env is not None:
        return max(1, int(env))
    return max(1, min(realizations, os.cpu_count() or 1))


def cmd_generate(args) -> int:
    if args.n < 3:
        raise UsageError(f"need at least 3 points, got --n {args.n}")
    holes = _parse_holes(args.holes)
    points = random_points(args.n, rng_seed=args.seed)
    cplx = delaunay_complex(points, hole_disks=holes)
    save_complex(cplx, args.out)
    summary = {
        "vertices": len(cplx.vertices),
        "edges": len(cplx.edges),
        "triangles": len(cplx.triangles),
        "euler_characteristic": cplx.euler_characteristic(),
    }
    for k in (0, 1, 2):
        ops = hodge_operators(cplx, k)
        if ops.n == 0:
            continue
        w = np.linalg.eigvalsh(ops.L)
        summary[f"lambda_max_L{k}"] = float(w[-1])
        summary[f"lambda_min_L{k}"] = float(w[0])
    print(json.dumps(summary, indent=1))
    return 0


def _load_config(args, expected: str | None):
    try:
        data = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}")
    if expected is not None:
        stated = data.get("experiment")
        if stated is None:
            data["experiment"] = expected
        elif stated != expected:
            raise UsageError(
                f"--experiment {expected} conflicts with config experiment {stated!r}"
            )
    return config_from_dict(data)


def cmd_run(args) -> int:
    config = _load_config(args, args.experiment)
    out = _out_dir(args)
    jobs = _jobs(args, config.realizations)
    if isinstance(config, OversmoothConfig):
        result = run_oversmoothing(config, out_dir=out, jobs=jobs)
        violations = sum(result.violations.values())
        print(
            json.dumps(
                {
                    "experiment": "oversmooth",
                    "violations": violations,
                    "threshold_crossings": result.crossings,
                    "out": str(out),
                }
            )
        )
    elif isinstance(config, StabilityConfig):
        result = run_stability(config, out_dir=out, jobs=jobs)
        violations = result.violations
        print(
            json.dumps(
                {
                    "experiment": "stability",
                    "violations": violations,
                    "cells": len(result.gap_matrix),
                    "out": str(out),
                }
            )
        )
    else:
        result = run_trajectory(config, out_dir=out, jobs=jobs)
        violations = 0
        print(
            json.dumps(
                {
                    "experiment": "trajectory",
                    "accuracy_mean": result.accuracy_mean,
                    "accuracy_std": result.accuracy_std,
                    "uniform_baseline": result.baseline_mean,
                    "out": str(out),
                }
            )
        )
    if args.strict and violations:
        print(f"strict mode: {violations} bound violations", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.complex)
    if not path.exists():
        raise UsageError(f"complex file not found: {path}")
    cplx = load_complex(path)
    ops = hodge_operators(cplx, args.level)
    matrix = {"down": ops.L_down, "up": ops.L_up, "full": ops.L}[args.op]
    if matrix is None:
        raise UsageError(f"level {args.level} has no {args.op} Laplacian")
    w = np.linalg.eigvalsh(matrix)
    report = {
        "level": args.level,
        "operator": args.op,
        "n": int(len(w)),
        "eigenvalues_ascending": [float(v) for v in w],
        "lambda_max": float(w[-1]) if len(w) else math.nan,
    }
    try:
        taus = (0.01, 0.02, 0.05, 0.1, 0.2)
        suggestions = {}
        for tau in taus:
            K, H = spectral_entropy_select(w, tau)
            suggestions[f"tau={tau:g}"] = K
            report["spectral_entropy"] = H
        report["suggested_K"] = suggestions
    except ValueError as exc:
        report["spectral_entropy"] = None
        report["suggested_K"] = None
        report["note"] = str(exc)
    print(json.dumps(report, indent=1))
    return 0


def cmd_train(args) -> int:
    config = _load_config(args, "trajectory")
    if not isinstance(config, TrajectoryConfig):
        raise UsageError("train expects a trajectory config")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    fit = fit_trajectory_model(config, r=args.realization)
    save_complex(fit.complex, out / "complex.json")
    save_model(fit.model, out / "model.json", complex_checksum=fit.complex.checksum())
    metrics = {
        "test_accuracy": fit.accuracy,
        "uniform_baseline": fit.baseline,
        "n_train": len(fit.train_idx),
        "n_test": len(fit.test_idx),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    write_manifest(out / "train_manifest.json", "train", config, config.seed, 0.0)
    print(json.dumps(metrics))
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args, "trajectory")
    cpath = Path(args.complex)
    if not cpath.exists():
        raise UsageError(f"complex file not found: {cpath}")
    cplx = load_complex(cpath)
    ops = {k: hodge_operators(cplx, k) for k in (0, 1, 2)}
    model = load_model(args.model, ops)
    data = generate_trajectories(
        cplx, config.n_trajectories, config.min_length, [config.seed, args.realization, 1]
    )
    acc = evaluate_trajectory_model(model, data, range(len(data.labels)))
    baseline = float(np.mean([1.0 / len(c) for c in data.candidates]))
    print(json.dumps({"accuracy": acc, "uniform_baseline": baseline, "n": len(data.labels)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cosimo",
        description="Continuous simplicial networks: generation, experiments, inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a random Delaunay 2-complex")
    p.add_argument("--n", type=int, default=30, help="number of uniform points")
    p.add_argument("--holes", default=_DEFAULT_HOLES_JSON, help="JSON [[cx,cy,r],...]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output complex JSON path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("--experiment", choices=["oversmooth", "stability", "trajectory"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (env COSIMO_OUT)")
    p.add_argument("--strict", action="store_true", help="exit 1 on any bound violation")
    p.add_argument("--jobs", type=int, default=None, help="parallel realizations (env COSIMO_JOBS)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect", help="eigenvalue and entropy report of a complex")
    p.add_argument("--complex", required=True)
    p.add_argument("--level", type=int, choices=[0, 1, 2], default=0)
    p.add_argument("--op", choices=["down", "up", "full"], default="full")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train a trajectory model, save a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--realization", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a regenerated dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--complex", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--realization", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TriangulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ConfigError, ComplexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
