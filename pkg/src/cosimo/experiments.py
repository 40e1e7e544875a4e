"""Desk-scale experiment harnesses: over-smoothing sweeps, the SNR stability
study, and synthetic trajectory prediction.

Every run is driven by a single master seed; realization r derives all of its
randomness from ``default_rng([seed, r, stream])`` with fixed stream ids, so
reruns are bit-identical and realizations can execute in parallel.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__ as _pkg_version
from .analysis import (
    energy_trace,
    lambda_max_tilde,
    model_constants,
    operator_extremes,
    oversmoothing_rhs_continuous,
    oversmoothing_rhs_discrete,
    stability_bound,
)
from .complexes import (
    SimplicialComplex,
    boundary_matrix,
    hodge_operators,
    hodge_operators_from_incidence,
    perturb_incidence,
    random_points,
)
from .delaunay import delaunay_complex
from .nn import Model, TrainConfig, train
from .spectral import LevelSpectra, cosimo_filter

DEFAULT_HOLES = (((0.3, 0.3), 0.12), ((0.7, 0.7), 0.12))
OVERSMOOTH_THRESHOLD = 1e-10


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------


@dataclass
class ComplexSpec:
    n_points: int = 30
    holes: tuple = DEFAULT_HOLES


@dataclass
class OversmoothConfig:
    seed: int = 0
    realizations: int = 50
    complex: ComplexSpec = field(default_factory=ComplexSpec)
    layers: int = 100
    features: int = 4
    t_grid: tuple = (1e-2, 1e-1, 0.2, 0.5)
    level: int = 1
    # Global rescaling of the incidence matrices so that the largest Hodge
    # eigenvalue equals this value; None keeps the raw operators.
    lambda_target: float | None = 1.2
    # Multiplier on the 1/sqrt(F) weight init of the swept models.
    init_scale: float = 0.8
    threshold: float = OVERSMOOTH_THRESHOLD


@dataclass
class StabilityConfig:
    seed: int = 0
    realizations: int = 30
    complex: ComplexSpec = field(default_factory=ComplexSpec)
    snr_grid_db: tuple = (-5.0, 0.0, 10.0, 20.0)
    t_d: float = 1.0
    t_u: float = 2.0
    level: int = 1
    train_epochs: int = 500
    train_step_size: float = 0.05


@dataclass
class TrajectoryConfig:
    seed: int = 0
    realizations: int = 10
    complex: ComplexSpec = field(default_factory=ComplexSpec)
    n_trajectories: int = 200
    min_length: int = 4
    branches: int = 3
    hidden: int = 16
    layers: int = 3
    epochs: int = 200
    step_size: float = 0.05
    train_fraction: float = 0.8
    turn_bias: float = 3.0
    activation: str = "leaky_relu"
    leaky_slope: float = 0.1


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["experiment"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": ["oversmooth", "stability", "trajectory"]},
        "seed": {"type": "integer", "minimum": 0},
        "realizations": {"type": "integer", "minimum": 1},
        "complex": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_points": {"type": "integer", "minimum": 3},
                "holes": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
        },
        "oversmooth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "layers": {"type": "integer", "minimum": 1},
                "features": {"type": "integer", "minimum": 1},
                "t_grid": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "level": {"type": "integer", "minimum": 0, "maximum": 2},
                "lambda_target": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "snr_grid_db": {
                    "type": "array",
                    "items": {"anyOf": [{"type": "number"}, {"const": "inf"}]},
                    "minItems": 1,
                },
                "t_d": {"type": "number", "minimum": 0},
                "t_u": {"type": "number", "minimum": 0},
                "level": {"type": "integer", "minimum": 0, "maximum": 2},
                "train_epochs": {"type": "integer", "minimum": 0},
                "train_step_size": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "trajectory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_trajectories": {"type": "integer", "minimum": 1},
                "min_length": {"type": "integer", "minimum": 2},
                "branches": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "layers": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 0},
                "step_size": {"type": "number", "exclusiveMinimum": 0},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "turn_bias": {"type": "number", "minimum": 0},
                "activation": {"enum": ["relu", "leaky_relu", "identity"]},
                "leaky_slope": {"type": "number"},
            },
        },
    },
}


class ConfigError(ValueError):
    """Experiment config failed schema validation; message lists JSON paths."""


def validate_config(data: dict) -> None:
    errors = sorted(
        Draft202012Validator(CONFIG_SCHEMA).iter_errors(data), key=lambda e: e.json_path
    )
    if errors:
        lines = [f"  {e.json_path}: {e.message}" for e in errors]
        raise ConfigError("invalid experiment config:\n" + "\n".join(lines))


def config_from_dict(data: dict):
    """Validate a JSON config payload and build the typed config object."""
    validate_config(data)
    kind = data["experiment"]
    cspec = ComplexSpec()
    if "complex" in data:
        c = data["complex"]
        cspec = ComplexSpec(
            n_points=c.get("n_points", 30),
            holes=tuple(((h[0], h[1]), h[2]) for h in c.get("holes", [[0.3, 0.3, 0.12], [0.7, 0.7, 0.12]])),
        )
    common = {
        "seed": data.get("seed", 0),
        "complex": cspec,
    }
    if kind == "oversmooth":
        section = dict(data.get("oversmooth", {}))
        if "t_grid" in section:
            section["t_grid"] = tuple(section["t_grid"])
        return OversmoothConfig(
            realizations=data.get("realizations", 50), **common, **section
        )
    if kind == "stability":
        section = dict(data.get("stability", {}))
        if "snr_grid_db" in section:
            section["snr_grid_db"] = tuple(
                math.inf if v == "inf" else float(v) for v in section["snr_grid_db"]
            )
        return StabilityConfig(
            realizations=data.get("realizations", 30), **common, **section
        )
    section = dict(data.get("trajectory", {}))
    return TrajectoryConfig(
        realizations=data.get("realizations", 10), **common, **section
    )


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _format_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def write_manifest(path, experiment: str, config, seed: int, wall_time_s: float) -> None:
    payload = {
        "experiment": experiment,
        "config": asdict(config),
        "master_seed": seed,
        "package_version": _pkg_version,
        "numpy_version": np.__version__,
        "wall_time_s": wall_time_s,
        "created_unix": time.time(),
    }
    Path(path).write_text(json.dumps(payload, indent=1, default=str) + "\n")


def _realization_complex(spec: ComplexSpec, seed: int, r: int) -> SimplicialComplex:
    points = random_points(spec.n_points, rng_seed=[seed, r, 0])
    return delaunay_complex(points, hole_disks=spec.holes)


def scaled_operators(complex: SimplicialComplex, lambda_target: float | None):
    """Hodge operators of the complex, optionally rescaled so the largest
    lower/upper eigenvalue over all levels equals ``lambda_target``."""
    ops = {k: hodge_operators(complex, k) for k in (0, 1, 2)}
    if lambda_target is None:
        return ops
    lam = lambda_max_tilde(operator_extremes({k: o for k, o in ops.items() if o.n > 0}))
    scale = math.sqrt(lambda_target / lam)
    B1 = boundary_matrix(complex, 1).astype(np.float64) * scale
    B2 = boundary_matrix(complex, 2).astype(np.float64) * scale
    return {
        0: hodge_operators_from_incidence(None, B1, 0),
        1: hodge_operators_from_incidence(B1, B2 if B2.size else None, 1),
        2: hodge_operators_from_incidence(B2, None, 2) if B2.size else ops[2],
    }


def _map_realizations(worker, config, realizations: int, jobs: int):
    if jobs <= 1:
        return [worker(config, r) for r in range(realizations)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, [config] * realizations, range(realizations)))


# ---------------------------------------------------------------------------
# Over-smoothing sweep
# ---------------------------------------------------------------------------


@dataclass
class OversmoothResult:
    labels: list[str]
    layers: int
    lhs_mean: dict[str, np.ndarray]  # label -> (layers,) mean E at layers 1..L
    lhs_geomean: dict[str, np.ndarray]  # geometric mean (log-scale decay curve)
    rhs_mean: dict[str, np.ndarray]
    violations: dict[str, int]
    crossings: dict[str, int | None]  # first layer whose geomean < threshold
    rows: list[tuple]


def _oversmooth_labels(config: OversmoothConfig) -> list[str]:
    return ["discrete"] + [f"cosimo_t={t:g}" for t in config.t_grid]


def _oversmooth_worker(config: OversmoothConfig, r: int):
    cplx = _realization_complex(config.complex, config.seed, r)
    ops = scaled_operators(cplx, config.lambda_target)
    widths = [config.features] * (config.layers + 1)
    rng_in = np.random.default_rng([config.seed, r, 1])
    inputs = {
        k: rng_in.standard_normal((ops[k].n, config.features))
        for k in (0, 1, 2)
        if ops[k].n > 0
    }
    k = config.level
    std = config.init_scale / math.sqrt(config.features)

    out = {}
    disc = Model(
        ops,
        widths,
        family="discrete",
        out_level=k,
        order_down=1,
        order_up=1,
        zero_order_weights=False,
        activation="relu",
        init_std=std,
        seed=[config.seed, r, 2],
    )
    trace = energy_trace(disc, inputs)
    consts = model_constants(disc)
    lhs = np.array([trace.energies[k][l + 1] for l in range(config.layers)])
    rhs = np.empty(config.layers)
    viol = np.zeros(config.layers, dtype=np.int64)
    for l in range(config.layers):
        rep = oversmoothing_rhs_discrete(trace, l, k, consts)
        rhs[l] = rep.rhs
        viol[l] = 0 if rep.satisfied else 1
    out["discrete"] = (lhs, rhs, viol)

    for t in config.t_grid:
        cos = Model(
            ops,
            widths,
            family="cosimo",
            out_level=k,
            activation="relu",
            learn_t=False,
            t_init=t,
            init_std=std,
            seed=[config.seed, r, 3],
        )
        trace = energy_trace(cos, inputs)
        consts = model_constants(cos, t, t)
        lhs = np.array([trace.energies[k][l + 1] for l in range(config.layers)])
        rhs = np.empty(config.layers)
        viol = np.zeros(config.layers, dtype=np.int64)
        for l in range(config.layers):
            rep = oversmoothing_rhs_continuous(trace, l, k, consts)
            rhs[l] = rep.rhs
            viol[l] = 0 if rep.satisfied else 1
        out[f"cosimo_t={t:g}"] = (lhs, rhs, viol)
    return out


def run_oversmoothing(config: OversmoothConfig, out_dir=None, jobs: int = 1) -> OversmoothResult:
    t0 = time.monotonic()
    labels = _oversmooth_labels(config)
    per_real = _map_realizations(_oversmooth_worker, config, config.realizations, jobs)

    lhs_mean, lhs_geomean, rhs_mean, violations, crossings = {}, {}, {}, {}, {}
    rows = []
    for label in labels:
        stacked = np.stack([res[label][0] for res in per_real])
        lhs = stacked.mean(axis=0)
        # Geometric mean tracks the typical log-scale decay; the arithmetic
        # mean is dominated by the slowest single realization at depth.
        geo = np.exp(np.mean(np.log(np.clip(stacked, 1e-300, None)), axis=0))
        rhs = np.mean([res[label][1] for res in per_real], axis=0)
        viol = int(np.sum([res[label][2] for res in per_real]))
        lhs_mean[label] = lhs
        lhs_geomean[label] = geo
        rhs_mean[label] = rhs
        violations[label] = viol
        below = np.nonzero(geo < config.threshold)[0]
        crossings[label] = int(below[0]) + 1 if len(below) else None
        t_str = "" if label == "discrete" else f"{float(label.split('=')[1]):.12g}"
        model_name = "discrete" if label == "discrete" else "cosimo"
        for l in range(config.layers):
            rows.append(
                (
                    model_name,
                    t_str,
                    l + 1,
                    lhs[l],
                    geo[l],
                    rhs[l],
                    int(np.sum([res[label][2][l] for res in per_real])),
                )
            )

    result = OversmoothResult(
        labels=labels,
        layers=config.layers,
        lhs_mean=lhs_mean,
        lhs_geomean=lhs_geomean,
        rhs_mean=rhs_mean,
        violations=violations,
        crossings=crossings,
        rows=rows,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_csv(
            out_dir / "oversmooth_results.csv",
            ["model", "t", "layer", "lhs_mean", "lhs_geomean", "rhs_mean", "violations"],
            rows,
        )
        write_manifest(
            out_dir / "oversmooth_manifest.json",
            "oversmooth",
            config,
            config.seed,
            time.monotonic() - t0,
        )
    return result


# ---------------------------------------------------------------------------
# Stability study
# ---------------------------------------------------------------------------


@dataclass
class StabilityResult:
    rows: list[tuple]  # snr1, snr2, realization, lhs, rhs, gap, pred_error
    gap_matrix: list[tuple]  # snr1, snr2, gap_mean, gap_std, err_mean, err_std
    violations: int


def _stability_worker(config: StabilityConfig, r: int):
    cplx = _realization_complex(config.complex, config.seed, r)
    k = config.level
    clean_ops = hodge_operators(cplx, k)
    rng_in = np.random.default_rng([config.seed, r, 1])
    x = {kk: rng_in.standard_normal((hodge_operators(cplx, kk).n, 1)) for kk in (0, 1, 2)}
    x_down0 = clean_ops.B_down.T @ x[k - 1] if clean_ops.B_down is not None else np.zeros_like(x[k])
    x_up0 = clean_ops.B_up @ x[k + 1] if clean_ops.B_up is not None else np.zeros_like(x[k])
    clean_spec = LevelSpectra.from_operators(clean_ops)
    target = cosimo_filter(
        clean_spec.down, clean_spec.up, x_down0, x_up0, x[k], config.t_d, config.t_u
    )

    rows = []
    for ci, snr1 in enumerate(config.snr_grid_db):
        for cj, snr2 in enumerate(config.snr_grid_db):
            pert = perturb_incidence(cplx, snr1, snr2, [config.seed, r, 2, ci, cj])
            rep = stability_bound(
                clean_ops, pert, x_down0, x_up0, x[k], config.t_d, config.t_u
            )
            pred_error = math.nan
            if config.train_epochs > 0:
                ops_p = {kk: pert.hodge_operators(kk) for kk in (0, 1, 2)}
                model = Model(
                    ops_p,
                    [1, 1],
                    family="cosimo",
                    out_level=k,
                    activation="identity",
                    learn_t=True,
                    t_init=1.0,
                    seed=[config.seed, r, 3, ci, cj],
                )
                trace = train(
                    model,
                    [({kk: x[kk] for kk in (0, 1, 2)}, target)],
                    TrainConfig(
                        step_size=config.train_step_size,
                        epochs=config.train_epochs,
                        optimizer="momentum",
                    ),
                )
                pred_error = trace.losses[-1]
            rows.append(
                (snr1, snr2, r, rep.lhs, rep.rhs, rep.gap, pred_error, rep.satisfied)
            )
    return rows


def run_stability(config: StabilityConfig, out_dir=None, jobs: int = 1) -> StabilityResult:
    t0 = time.monotonic()
    per_real = _map_realizations(_stability_worker, config, config.realizations, jobs)
    all_rows = [row for rows in per_real for row in rows]
    violations = sum(0 if row[7] else 1 for row in all_rows)
    rows = [row[:7] for row in all_rows]

    gap_matrix = []
    for snr1 in config.snr_grid_db:
        for snr2 in config.snr_grid_db:
            cell = [row for row in rows if row[0] == snr1 and row[1] == snr2]
            gaps = np.array([c[5] for c in cell])
            errs = np.array([c[6] for c in cell])
            gap_matrix.append(
                (
                    snr1,
                    snr2,
                    float(gaps.mean()),
                    float(gaps.std()),
                    float(errs.mean()) if np.all(np.isfinite(errs)) else math.nan,
                    float(errs.std()) if np.all(np.isfinite(errs)) else math.nan,
                )
            )

    result = StabilityResult(rows=rows, gap_matrix=gap_matrix, violations=violations)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_csv(
            out_dir / "stability_results.csv",
            ["snr1_db", "snr2_db", "realization", "lhs", "rhs", "gap", "pred_error"],
            rows,
        )
        write_csv(
            out_dir / "stability_gap_matrix.csv",
            ["snr1_db", "snr2_db", "gap_mean", "gap_std", "pred_error_mean", "pred_error_std"],
            gap_matrix,
        )
        write_manifest(
            out_dir / "stability_manifest.json",
            "stability",
            config,
            config.seed,
            time.monotonic() - t0,
        )
    return result


# ---------------------------------------------------------------------------
# Synthetic trajectory prediction
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryDataset:
    """Non-backtracking walks with orientation-signed prefix edge flows."""

    complex: SimplicialComplex
    trajectories: list[tuple[int, ...]]
    flows: np.ndarray  # (n_traj, n_edges, 1)
    candidates: list[list[int]]
    labels: list[int]


def generate_trajectories(
    complex: SimplicialComplex, n_traj: int, min_len: int, rng_seed,
    turn_bias: float = 3.0,
) -> TrajectoryDataset:
    """Sample non-backtracking random walks along edges.

    When the complex carries vertex positions, steps keep a persistent
    heading: the next vertex is drawn with probability proportional to
    ``exp(turn_bias * cos(turning angle))``, which makes continuations
    predictable from the prefix (a uniform non-backtracking walk has almost
    no learnable structure). Without positions, or with ``turn_bias = 0``,
    steps are uniform over the non-backtracking neighbors.

    The prefix (all but the final hop) becomes a +-1 oriented edge flow; the
    label is the walk's final vertex, always a neighbor of the penultimate
    one. Walks that hit a dead end are resampled within a retry budget.
    """
    if min_len < 2:
        raise ValueError(f"min_len must be >= 2 hops, got {min_len}")
    rng = np.random.default_rng(rng_seed)
    adj: dict[int, list[int]] = {v: [] for v in complex.vertices}
    for a, b in complex.edges:
        adj[a].append(b)
        adj[b].append(a)
    for v in adj:
        adj[v].sort()
    eidx = complex.edge_index
    n_e = len(complex.edges)
    pos = complex.positions

    def step_probs(cur: int, prev: int, nbrs: list[int]) -> np.ndarray:
        if pos is None or turn_bias == 0.0 or prev < 0:
            return np.full(len(nbrs), 1.0 / len(nbrs))
        heading = pos[cur] - pos[prev]
        hn = np.linalg.norm(heading)
        if hn < 1e-12:
            return np.full(len(nbrs), 1.0 / len(nbrs))
        logits = []
        for v in nbrs:
            d = pos[v] - pos[cur]
            dn = np.linalg.norm(d)
            cosang = float(heading @ d) / (hn * dn) if dn > 0 else 0.0
            logits.append(turn_bias * cosang)
        p = np.exp(np.array(logits) - max(logits))
        return p / p.sum()

    walks, flows, candidates, labels = [], [], [], []
    budget = 100 * n_traj
    while len(walks) < n_traj:
        if budget <= 0:
            raise RuntimeError(
                f"retry budget exhausted after collecting {len(walks)}/{n_traj} walks; "
                "complex too sparse for non-backtracking walks of this length"
            )
        budget -= 1
        hops = int(min_len + rng.integers(0, 4))
        path = [int(rng.integers(len(complex.vertices)))]
        prev = -1
        ok = True
        for _ in range(hops):
            nbrs = [v for v in adj[path[-1]] if v != prev]
            if not nbrs:
                ok = False
                break
            nxt = int(rng.choice(nbrs, p=step_probs(path[-1], prev, nbrs)))
            prev = path[-1]
            path.append(nxt)
        if not ok:
            continue
        flow = np.zeros((n_e, 1))
        for u, v in zip(path[:-2], path[1:-1]):
            e = (u, v) if u < v else (v, u)
            flow[eidx[e], 0] += 1.0 if u < v else -1.0
        walks.append(tuple(path))
        flows.append(flow)
        candidates.append(list(adj[path[-2]]))
        labels.append(path[-1])
    return TrajectoryDataset(
        complex=complex,
        trajectories=walks,
        flows=np.stack(flows),
        candidates=candidates,
        labels=labels,
    )


def _stratified_split(labels, train_fraction: float, rng: np.random.Generator):
    by_label: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    train_idx, test_idx = [], []
    for lab in sorted(by_label):
        idx = np.array(by_label[lab])
        rng.shuffle(idx)
        n_test = int(round((1.0 - train_fraction) * len(idx)))
        test_idx.extend(int(i) for i in idx[:n_test])
        train_idx.extend(int(i) for i in idx[n_test:])
    if not test_idx:
        test_idx.append(train_idx.pop())
    return sorted(train_idx), sorted(test_idx)


def _candidate_scores(out: np.ndarray, B1: np.ndarray, candidates) -> list[np.ndarray]:
    return [B1[cand, :] @ out[b, :, 0] for b, cand in enumerate(candidates)]


def _ce_readout(out, B1, candidates, labels):
    """Cross-entropy over candidate-node scores read out through B_1."""
    G = np.zeros_like(out)
    loss = 0.0
    for b, (cand, lab) in enumerate(zip(candidates, labels)):
        z = B1[cand, :] @ out[b, :, 0]
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        pos = cand.index(lab)
        loss -= math.log(max(p[pos], 1e-300))
        p[pos] -= 1.0
        G[b, :, 0] = B1[cand, :].T @ p
    n = len(candidates)
    return loss / n, G / n


def _accuracy(out, B1, candidates, labels) -> float:
    hits = 0
    for score, cand, lab in zip(_candidate_scores(out, B1, candidates), candidates, labels):
        if cand[int(np.argmax(score))] == lab:
            hits += 1
    return hits / len(labels)


@dataclass
class TrajectoryResult:
    rows: list[tuple]  # seed, n_train, n_test, accuracy, uniform_baseline
    accuracy_mean: float
    accuracy_std: float
    baseline_mean: float


@dataclass
class TrajectoryFit:
    model: Model
    complex: SimplicialComplex
    dataset: TrajectoryDataset
    train_idx: list[int]
    test_idx: list[int]
    accuracy: float
    baseline: float


def _traj_batch_inputs(dataset: TrajectoryDataset, ops, idx):
    b = len(idx)
    return {
        0: np.zeros((b, ops[0].n, 1)),
        1: dataset.flows[idx],
        2: np.zeros((b, ops[2].n, 1)),
    }


def evaluate_trajectory_model(model: Model, dataset: TrajectoryDataset, idx) -> float:
    ops = model.operators
    B1 = ops[1].B_down
    out, _ = model.forward(_traj_batch_inputs(dataset, ops, list(idx)), want_cache=False)
    return _accuracy(
        out, B1, [dataset.candidates[i] for i in idx], [dataset.labels[i] for i in idx]
    )


def fit_trajectory_model(config: TrajectoryConfig, r: int = 0) -> TrajectoryFit:
    """Train one realization of the trajectory model and score its test split."""
    cplx = _realization_complex(config.complex, config.seed, r)
    data = generate_trajectories(
        cplx, config.n_trajectories, config.min_length, [config.seed, r, 1],
        turn_bias=config.turn_bias,
    )
    split_rng = np.random.default_rng([config.seed, r, 2])
    train_idx, test_idx = _stratified_split(data.labels, config.train_fraction, split_rng)

    ops = {k: hodge_operators(cplx, k) for k in (0, 1, 2)}
    widths = [1] + [config.hidden] * (config.layers - 1) + [1]
    model = Model(
        ops,
        widths,
        family="cosimo",
        out_level=1,
        n_branches=config.branches,
        agg="sum",
        activation=config.activation,
        leaky_slope=config.leaky_slope,
        learn_t=True,
        t_init=1.0,
        seed=[config.seed, r, 3],
    )
    B1 = ops[1].B_down
    tr_inputs = _traj_batch_inputs(data, ops, train_idx)
    tr_cands = [data.candidates[i] for i in train_idx]
    tr_labels = [data.labels[i] for i in train_idx]
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    for _ in range(config.epochs):
        out, cache = model.forward(tr_inputs)
        _, G = _ce_readout(out, B1, tr_cands, tr_labels)
        grads = model.backward(cache, G)
        # Global-norm clipping keeps occasional realizations from blowing up
        # under momentum.
        gnorm = math.sqrt(
            sum(float(np.sum(grads[n] ** 2)) for n in model.trainable)
        )
        scale = min(1.0, 5.0 / gnorm) if gnorm > 0 else 1.0
        for name in sorted(model.trainable):
            velocity[name] = 0.9 * velocity[name] + scale * grads[name]
            model.params[name] -= config.step_size * velocity[name]

    acc = evaluate_trajectory_model(model, data, test_idx)
    baseline = float(np.mean([1.0 / len(data.candidates[i]) for i in test_idx]))
    return TrajectoryFit(model, cplx, data, train_idx, test_idx, acc, baseline)


def _trajectory_worker(config: TrajectoryConfig, r: int):
    fit = fit_trajectory_model(config, r)
    return (r, len(fit.train_idx), len(fit.test_idx), fit.accuracy, fit.baseline)


def run_trajectory(config: TrajectoryConfig, out_dir=None, jobs: int = 1) -> TrajectoryResult:
    t0 = time.monotonic()
    rows = _map_realizations(_trajectory_worker, config, config.realizations, jobs)
    accs = np.array([row[3] for row in rows])
    result = TrajectoryResult(
        rows=rows,
        accuracy_mean=float(accs.mean()),
        accuracy_std=float(accs.std()),
        baseline_mean=float(np.mean([row[4] for row in rows])),
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_csv(
            out_dir / "trajectory_results.csv",
            ["seed", "n_train", "n_test", "accuracy", "uniform_baseline"],
            rows,
        )
        write_manifest(
            out_dir / "trajectory_manifest.json",
            "trajectory",
            config,
            config.seed,
            time.monotonic() - t0,
        )
    return result
