"""Bowyer-Watson Delaunay triangulation of planar point sets, with hole carving.

Co-circular point groups make the Delaunay diagram non-unique; after the
incremental pass the triangulation is canonicalized by flipping every exactly
co-circular convex quad onto its lexicographically smallest diagonal, so equal
inputs always produce identical complexes.
"""

from __future__ import annotations

import numpy as np

from .complexes import ComplexError, SimplicialComplex, build_complex


class TriangulationError(ComplexError):
    """Degenerate input for which no triangulation exists."""


# Unitless slack for the incircle / orientation determinants; coordinates are
# rescaled to O(1) before predicates are evaluated.
_PRED_TOL = 1e-12


def _incircle(p: np.ndarray, a, b, c, d) -> float:
    """Determinant that is > 0 iff point d lies strictly inside the
    circumcircle of the counterclockwise triangle (a, b, c)."""
    adx, ady = p[a, 0] - p[d, 0], p[a, 1] - p[d, 1]
    bdx, bdy = p[b, 0] - p[d, 0], p[b, 1] - p[d, 1]
    cdx, cdy = p[c, 0] - p[d, 0], p[c, 1] - p[d, 1]
    ad2 = adx * adx + ady * ady
    bd2 = bdx * bdx + bdy * bdy
    cd2 = cdx * cdx + cdy * cdy
    return (
        adx * (bdy * cd2 - cdy * bd2)
        - ady * (bdx * cd2 - cdx * bd2)
        + ad2 * (bdx * cdy - cdx * bdy)
    )


def _orient(p: np.ndarray, a, b, c) -> float:
    """Twice the signed area of triangle (a, b, c); > 0 when counterclockwise."""
    return (p[b, 0] - p[a, 0]) * (p[c, 1] - p[a, 1]) - (p[b, 1] - p[a, 1]) * (
        p[c, 0] - p[a, 0]
    )


def _check_not_collinear(pts: np.ndarray) -> None:
    scale = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1e-300)
    n = len(pts)
    base = pts[0]
    far = int(np.argmax(np.hypot(pts[:, 0] - base[0], pts[:, 1] - base[1])))
    if np.hypot(*(pts[far] - base)) <= _PRED_TOL * scale:
        raise TriangulationError("all points coincide; triangulation is degenerate")
    d = pts[far] - base
    cross = np.abs(d[0] * (pts[:, 1] - base[1]) - d[1] * (pts[:, 0] - base[0]))
    if np.all(cross <= _PRED_TOL * scale * scale * n):
        raise TriangulationError("all points are collinear; triangulation is degenerate")


def _bowyer_watson(pts: np.ndarray, order: np.ndarray) -> list[tuple[int, int, int]]:
    n = len(pts)
    span = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1.0)
    cx = float(pts[:, 0].mean())
    cy = float(pts[:, 1].mean())
    super_pts = np.array(
        [
            [cx - 30.0 * span, cy - 15.0 * span],
            [cx + 30.0 * span, cy - 15.0 * span],
            [cx, cy + 30.0 * span],
        ]
    )
    p = np.vstack([pts, super_pts])
    tol = _PRED_TOL * span**4

    # Triangles kept counterclockwise throughout, as (i, j, k) index triples.
    triangles: list[tuple[int, int, int]] = [(n, n + 1, n + 2)]
    for idx in order:
        idx = int(idx)
        bad = [t for t in triangles if _incircle(p, *t, idx) > tol]
        if not bad:
            raise TriangulationError(
                f"point {idx} falls in no circumcircle; duplicate or degenerate input"
            )
        # Boundary of the cavity: directed edges of bad triangles used once.
        edge_count: dict[tuple[int, int], int] = {}
        directed: list[tuple[int, int]] = []
        for a, b, c in bad:
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                edge_count[key] = edge_count.get(key, 0) + 1
                directed.append((u, v))
        bad_set = set(bad)
        triangles = [t for t in triangles if t not in bad_set]
        for u, v in directed:
            if edge_count[(min(u, v), max(u, v))] == 1:
                triangles.append((u, v, idx))
    return [t for t in triangles if max(t) < n]


def _canonical_cocircular_flips(
    p: np.ndarray, triangles: list[tuple[int, int, int]], tol: float
) -> list[tuple[int, int, int]]:
    """Flip exactly co-circular convex quads onto the smallest diagonal."""
    tris = {tuple(sorted(t)) for t in triangles}
    changed = True
    guard = 0
    while changed and guard < 100:
        changed = False
        guard += 1
        edge_map: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        for t in tris:
            a, b, c = t
            for e in ((a, b), (a, c), (b, c)):
                edge_map.setdefault(e, []).append(t)
        for e, owners in edge_map.items():
            if len(owners) != 2:
                continue
            t1, t2 = owners
            if t1 not in tris or t2 not in tris:
                continue
            c1 = next(v for v in t1 if v not in e)
            c2 = next(v for v in t2 if v not in e)
            diag = tuple(sorted((c1, c2)))
            if diag >= e:
                continue
            if abs(_incircle(p, *t1, c2)) > tol:
                continue
            # The flip is valid only for a strictly convex quad.
            if _orient(p, e[0], e[1], c1) * _orient(p, e[0], e[1], c2) >= 0:
                continue
            if _orient(p, c1, c2, e[0]) * _orient(p, c1, c2, e[1]) >= 0:
                continue
            tris.discard(t1)
            tris.discard(t2)
            tris.add(tuple(sorted((c1, c2, e[0]))))
            tris.add(tuple(sorted((c1, c2, e[1]))))
            changed = True
            break
    return sorted(tris)


def delaunay_complex(points, hole_disks=(), rng_seed=None) -> SimplicialComplex:
    """Delaunay triangulation of 2-D points as a simplicial 2-complex.

    A triangle is removed when its barycenter lies strictly inside any hole
    disk ``(center, radius)``; its edges and vertices are retained. The seed
    only shuffles the insertion order, the canonical flip pass makes the
    result independent of it.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise TriangulationError(f"expected (n, 2) point array, got {pts.shape}")
    if len(pts) < 3:
        raise TriangulationError(f"need at least 3 points, got {len(pts)}")
    _check_not_collinear(pts)

    order = np.arange(len(pts))
    if rng_seed is not None:
        np.random.default_rng(rng_seed).shuffle(order)

    span = max(float(np.ptp(pts[:, 0])), float(np.ptp(pts[:, 1])), 1.0)
    triangles = _bowyer_watson(pts, order)
    triangles = _canonical_cocircular_flips(pts, triangles, _PRED_TOL * span**4)

    kept = []
    for t in triangles:
        bary = pts[list(t)].mean(axis=0)
        inside = False
        for (hx, hy), r in hole_disks:
            if (bary[0] - hx) ** 2 + (bary[1] - hy) ** 2 < r * r:
                inside = True
                break
        if not inside:
            kept.append(t)

    edges = set()
    for a, b, c in triangles:
        edges.update([(a, b), (a, c), (b, c)])
    built = build_complex(edges=sorted(edges), triangles=kept, vertices=range(len(pts)))
    return SimplicialComplex(built.vertices, built.edges, built.triangles, pts.copy())
