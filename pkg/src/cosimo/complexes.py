"""Oriented simplicial 2-complexes and their boundary / Hodge-Laplacian operators.

Simplices are stored with vertices in strictly ascending id order (canonical
orientation) and in lexicographic order per level, so every derived operator
is reproducible. Incidence matrices are built in integer arithmetic; the
chain-complex identity ``B_1 @ B_2 == 0`` therefore holds exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class ComplexError(ValueError):
    """Invalid simplicial complex input (duplicates, degeneracies, bad levels)."""


def _canonical(simplex) -> tuple[int, ...]:
    s = tuple(int(v) for v in simplex)
    if any(v < 0 for v in s):
        raise ComplexError(f"vertex ids must be nonnegative, got {s}")
    if len(set(s)) != len(s):
        raise ComplexError(f"degenerate simplex with repeated vertex: {s}")
    return tuple(sorted(s))


@dataclass(frozen=True)
class SimplicialComplex:
    """Immutable simplicial 2-complex, closed under taking faces.

    ``positions`` (optional) holds one 2-D coordinate per entry of
    ``vertices``, in the same order.
    """

    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    triangles: tuple[tuple[int, int, int], ...]
    positions: np.ndarray | None = None

    @cached_property
    def vertex_index(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def num_simplices(self, k: int) -> int:
        if k == 0:
            return len(self.vertices)
        if k == 1:
            return len(self.edges)
        if k == 2:
            return len(self.triangles)
        raise ComplexError(f"unsupported simplex level {k}, expected 0, 1 or 2")

    def simplices(self, k: int):
        return (self.vertices, self.edges, self.triangles)[k]

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.triangles)

    def checksum(self) -> str:
        """SHA-256 over the canonical simplex lists (positions excluded)."""
        payload = json.dumps(
            {"v": self.vertices, "e": self.edges, "t": self.triangles},
            separators=(",", ":"),
        ).encode()
        return hashlib.sha256(payload).hexdigest()


def build_complex(edges=(), triangles=(), vertices=()) -> SimplicialComplex:
    """Build a canonical complex from edge and triangle lists.

    Inputs need not be closed: all faces of every listed simplex are added.
    Duplicate simplices *within* an input list (after canonicalization) are
    rejected; faces regenerated by closure merge silently.
    """
    tri_set: set[tuple[int, ...]] = set()
    dup_tris = []
    for t in triangles:
        c = _canonical(t)
        if len(c) != 3:
            raise ComplexError(f"triangle must have 3 distinct vertices, got {t}")
        if c in tri_set:
            dup_tris.append(c)
        tri_set.add(c)

    edge_set: set[tuple[int, ...]] = set()
    dup_edges = []
    for e in edges:
        c = _canonical(e)
        if len(c) != 2:
            raise ComplexError(f"edge must have 2 distinct vertices, got {e}")
        if c in edge_set:
            dup_edges.append(c)
        edge_set.add(c)

    if dup_edges or dup_tris:
        raise ComplexError(
            "duplicate simplices after canonicalization: "
            f"edges {sorted(set(dup_edges))}, triangles {sorted(set(dup_tris))}"
        )

    # Closure under restriction: every face of a stored simplex is stored.
    for a, b, c in tri_set:
        edge_set.update([(a, b), (a, c), (b, c)])
    vert_set = {int(v) for v in vertices}
    for e in edge_set:
        vert_set.update(e)
    for t in tri_set:
        vert_set.update(t)

    return SimplicialComplex(
        vertices=tuple(sorted(vert_set)),
        edges=tuple(sorted(edge_set)),
        triangles=tuple(sorted(tri_set)),
    )


def boundary_matrix(complex: SimplicialComplex, k: int) -> np.ndarray:
    """Signed incidence matrix B_k mapping k-simplices to their (k-1)-faces.

    Columns of B_1 carry -1 at the smaller endpoint and +1 at the larger one.
    Columns of B_2 carry (-1)^p on the face obtained by omitting the vertex at
    position p of the (ascending) triangle, i.e. signs (+1, -1, +1) on faces
    (v1 v2), (v0 v2), (v0 v1). Entries are int64 so that B_1 @ B_2 == 0 holds
    exactly.
    """
    if k == 1:
        B = np.zeros((len(complex.vertices), len(complex.edges)), dtype=np.int64)
        vidx = complex.vertex_index
        for j, (a, b) in enumerate(complex.edges):
            B[vidx[a], j] = -1
            B[vidx[b], j] = 1
        return B
    if k == 2:
        B = np.zeros((len(complex.edges), len(complex.triangles)), dtype=np.int64)
        eidx = complex.edge_index
        for j, tri in enumerate(complex.triangles):
            for p in range(3):
                face = tuple(v for i, v in enumerate(tri) if i != p)
                B[eidx[face], j] = (-1) ** p
        return B
    raise ComplexError(f"unsupported incidence level {k}, expected 1 or 2")


@dataclass(frozen=True)
class HodgeOperators:
    """Lower/upper/full Hodge Laplacians of one simplex level.

    ``L_down = B_k^T B_k`` (None for k=0), ``L_up = B_{k+1} B_{k+1}^T`` (zero
    when there are no (k+1)-simplices) and ``L`` is their sum. The incidence
    matrices themselves are kept for incidence-form energies and projections.
    """

    level: int
    n: int
    L_down: np.ndarray | None
    L_up: np.ndarray
    L: np.ndarray
    B_down: np.ndarray | None
    B_up: np.ndarray | None


def hodge_operators_from_incidence(
    B_down: np.ndarray | None, B_up: np.ndarray | None, k: int
) -> HodgeOperators:
    """Assemble Hodge operators at level ``k`` from explicit incidence matrices.

    Accepts float matrices (e.g. perturbed incidences); products are
    symmetrized to kill round-off asymmetry.
    """
    if B_down is None and B_up is None:
        raise ComplexError("need at least one incidence matrix")
    if B_down is not None:
        B_down = np.asarray(B_down, dtype=np.float64)
        n = B_down.shape[1]
    else:
        B_up = np.asarray(B_up, dtype=np.float64)
        n = B_up.shape[0]

    def _sym(M: np.ndarray) -> np.ndarray:
        return (M + M.T) / 2.0

    L_down = None
    if B_down is not None and k >= 1:
        L_down = _sym(B_down.T @ B_down)
    if B_up is not None and B_up.size > 0:
        B_up = np.asarray(B_up, dtype=np.float64)
        if B_up.shape[0] != n:
            raise ComplexError(
                f"incidence shape mismatch at level {k}: "
                f"{B_up.shape[0]} rows vs {n} simplices"
            )
        L_up = _sym(B_up @ B_up.T)
    else:
        B_up = None
        L_up = np.zeros((n, n))
    L = L_up if L_down is None else L_down + L_up
    return HodgeOperators(
        level=k, n=n, L_down=L_down, L_up=L_up, L=L, B_down=B_down, B_up=B_up
    )


def hodge_operators(complex: SimplicialComplex, k: int) -> HodgeOperators:
    """Hodge Laplacians of the complex at level k in {0, 1, 2}.

    Products are computed in integer arithmetic before conversion, so the
    operators are exactly symmetric and ``L_down @ L_up == 0`` up to nothing
    worse than the float cast.
    """
    if k not in (0, 1, 2):
        raise ComplexError(f"unsupported simplex level {k}, expected 0, 1 or 2")
    n = complex.num_simplices(k)
    B_down_i = boundary_matrix(complex, k) if k >= 1 else None
    B_up_i = boundary_matrix(complex, k + 1) if k <= 1 else None

    L_down = None
    if B_down_i is not None:
        L_down = (B_down_i.T @ B_down_i).astype(np.float64)
    if B_up_i is not None and B_up_i.shape[1] > 0:
        L_up = (B_up_i @ B_up_i.T).astype(np.float64)
    else:
        L_up = np.zeros((n, n))
    L = L_up if L_down is None else L_down + L_up
    return HodgeOperators(
        level=k,
        n=n,
        L_down=L_down,
        L_up=L_up,
        L=L,
        B_down=None if B_down_i is None else B_down_i.astype(np.float64),
        B_up=None if B_up_i is None or B_up_i.shape[1] == 0 else B_up_i.astype(np.float64),
    )


def random_points(n: int, rng_seed) -> np.ndarray:
    """n i.i.d. uniform points in the unit square, reproducible per seed."""
    if n < 3:
        raise ComplexError(f"need at least 3 points, got {n}")
    rng = np.random.default_rng(rng_seed)
    return rng.random((n, 2))


# ---------------------------------------------------------------------------
# Additive incidence perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbedComplex:
    """Complex with additive Gaussian noise on its incidence matrices.

    ``epsilon_k`` are measured spectral norms of the error matrices, matching
    the ``||E_k|| <= eps_k`` form used by the stability bound. An infinite SNR
    leaves the corresponding incidence matrix untouched.
    """

    base: SimplicialComplex
    snr1_db: float
    snr2_db: float
    E_1: np.ndarray
    E_2: np.ndarray
    B_1: np.ndarray
    B_2: np.ndarray
    epsilon_1: float
    epsilon_2: float

    def hodge_operators(self, k: int) -> HodgeOperators:
        """Hodge operators rebuilt from the perturbed incidence matrices."""
        if k == 0:
            return hodge_operators_from_incidence(None, self.B_1, 0)
        if k == 1:
            return hodge_operators_from_incidence(self.B_1, self.B_2, 1)
        if k == 2:
            return hodge_operators_from_incidence(self.B_2, None, 2)
        raise ComplexError(f"unsupported simplex level {k}, expected 0, 1 or 2")


def _noise_like(B: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    if B.size == 0 or math.isinf(snr_db):
        return np.zeros_like(B, dtype=np.float64)
    b_fro = np.linalg.norm(B)
    if b_fro == 0.0:
        return np.zeros_like(B, dtype=np.float64)
    G = rng.standard_normal(B.shape)
    target = b_fro * 10.0 ** (-snr_db / 20.0)
    return G * (target / np.linalg.norm(G))


def _spectral_norm(E: np.ndarray) -> float:
    if E.size == 0:
        return 0.0
    return float(np.linalg.norm(E, 2))


def perturb_incidence(
    complex: SimplicialComplex, snr1_db: float, snr2_db: float, rng_seed
) -> PerturbedComplex:
    """Add zero-mean Gaussian noise to B_1 and B_2 at the requested SNRs.

    The noise is scaled so that ``10 log10(||B||_F^2 / ||E||_F^2)`` equals the
    requested value exactly; the spectral-norm bounds ``epsilon_k`` are then
    measured from the realized noise.
    """
    rng = np.random.default_rng(rng_seed)
    B1 = boundary_matrix(complex, 1).astype(np.float64)
    B2 = boundary_matrix(complex, 2).astype(np.float64)
    E1 = _noise_like(B1, snr1_db, rng)
    E2 = _noise_like(B2, snr2_db, rng)
    return PerturbedComplex(
        base=complex,
        snr1_db=float(snr1_db),
        snr2_db=float(snr2_db),
        E_1=E1,
        E_2=E2,
        B_1=B1 + E1,
        B_2=B2 + E2,
        epsilon_1=_spectral_norm(E1),
        epsilon_2=_spectral_norm(E2),
    )


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def complex_to_dict(complex: SimplicialComplex) -> dict:
    return {
        "vertices": list(complex.vertices),
        "edges": [list(e) for e in complex.edges],
        "triangles": [list(t) for t in complex.triangles],
        "positions": None
        if complex.positions is None
        else [[float(x), float(y)] for x, y in complex.positions],
    }


def complex_from_dict(data: dict) -> SimplicialComplex:
    """Rebuild (and re-validate) a complex from its JSON payload."""
    built = build_complex(
        edges=data.get("edges", ()),
        triangles=data.get("triangles", ()),
        vertices=data.get("vertices", ()),
    )
    positions = data.get("positions")
    if positions is None:
        return built
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (len(built.vertices), 2):
        raise ComplexError(
            f"positions shape {pos.shape} does not match "
            f"{len(built.vertices)} vertices"
        )
    return SimplicialComplex(built.vertices, built.edges, built.triangles, pos)


def save_complex(complex: SimplicialComplex, path) -> None:
    Path(path).write_text(json.dumps(complex_to_dict(complex), indent=1) + "\n")


def load_complex(path) -> SimplicialComplex:
    return complex_from_dict(json.loads(Path(path).read_text()))
