"""Icosphere meshes: subdivision, antipodal reduction, gradient schemes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array(
    [
        [-1, _GOLDEN, 0], [1, _GOLDEN, 0], [-1, -_GOLDEN, 0], [1, -_GOLDEN, 0],
        [0, -1, _GOLDEN], [0, 1, _GOLDEN], [0, -1, -_GOLDEN], [0, 1, -_GOLDEN],
        [_GOLDEN, 0, -1], [_GOLDEN, 0, 1], [-_GOLDEN, 0, -1], [-_GOLDEN, 0, 1],
    ],
    dtype=np.float64,
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class SphericalGrid:
    """Unit directions with mesh adjacency; antipodal representatives if reduced."""

    points: np.ndarray            # (n, 3) unit vectors
    subdiv: int
    hemisphere: bool
    neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        pts = self.points
        if pts.shape[0] > 1:
            # chord length ~ angle near zero, so 1e-9 is resolvable this way
            d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if self.hemisphere:
                s2 = np.sum((pts[:, None, :] + pts[None, :, :]) ** 2, axis=-1)
                np.fill_diagonal(s2, np.inf)
                d2 = np.minimum(d2, s2)
            if d2.min() <= 1e-18:
                raise ValidationError("grid has (near-)duplicate directions")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _normalize_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _pole_rotation() -> np.ndarray:
    """Rotation taking the first icosahedron vertex to the north pole."""
    v = _ICO_VERTS[0] / np.linalg.norm(_ICO_VERTS[0])
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(v, z)
    s = np.linalg.norm(axis)
    c = float(v @ z)
    axis = axis / s
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    """Split each triangle into four, projecting new vertices to the sphere."""
    verts = list(verts)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        idx = midpoint.get(key)
        if idx is None:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            idx = len(verts) - 1
            midpoint[key] = idx
        return idx

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(verts), np.array(new_faces, dtype=np.int64)


def _mesh(subdiv: int):
    if subdiv < 0:
        raise ValidationError("subdiv must be >= 0")
    rot = _pole_rotation()
    verts = _normalize_rows(_ICO_VERTS @ rot.T)
    faces = _ICO_FACES
    for _ in range(subdiv):
        verts, faces = _subdivide(verts, faces)
    return verts, faces


def _adjacency(n: int, faces: np.ndarray) -> list[set[int]]:
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b, c in faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return nbrs


def _antipode_pairs(verts: np.ndarray) -> np.ndarray:
    """Index of each vertex's antipodal partner (exact up to float noise)."""
    dots = verts @ verts.T
    partner = np.argmin(dots, axis=1)
    if np.any(np.abs(dots[np.arange(len(verts)), partner] + 1.0) > 1e-9):
        raise ValidationError("mesh is not antipodally symmetric")
    return partner


def _canonical(verts: np.ndarray, partner: np.ndarray) -> np.ndarray:
    """Pick one representative per antipodal pair (upper hemisphere rule)."""
    keep = np.zeros(len(verts), dtype=bool)
    tol = 1e-9
    for i in range(len(verts)):
        j = int(partner[i])
        if i > j:
            continue
        x, y, z = verts[i]
        if z > tol or (abs(z) <= tol and (y > tol or (abs(y) <= tol and x > 0))):
            keep[i] = True
        else:
            keep[j] = True
    return keep


def build_icosphere(subdiv: int, hemisphere: bool = False) -> SphericalGrid:
    """Icosahedron subdivided `subdiv` times (12, 42, 162, 642 vertices).

    With hemisphere=True, one direction per antipodal pair is kept (21, 81,
    321 for subdiv 1-3) and adjacency is folded onto the representatives.
    """
    verts, faces = _mesh(subdiv)
    nbrs = _adjacency(len(verts), faces)
    if not hemisphere:
        neighbors = tuple(tuple(sorted(s)) for s in nbrs)
        return SphericalGrid(verts, subdiv, False, neighbors)

    partner = _antipode_pairs(verts)
    keep = _canonical(verts, partner)
    rep_of = np.full(len(verts), -1, dtype=np.int64)
    new_index = np.cumsum(keep) - 1
    for i in range(len(verts)):
        rep_full = i if keep[i] else int(partner[i])
        rep_of[i] = new_index[rep_full]
    folded: list[set[int]] = [set() for _ in range(int(keep.sum()))]
    for i in range(len(verts)):
        ri = int(rep_of[i])
        for j in nbrs[i]:
            rj = int(rep_of[j])
            if rj != ri:
                folded[ri].add(rj)
    neighbors = tuple(tuple(sorted(s)) for s in folded)
    return SphericalGrid(verts[keep], subdiv, True, neighbors)


def folded_angles(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle(s) between directions folded to [0, pi/2] by antipodal symmetry."""
    dots = np.clip(np.abs(np.sum(u * v, axis=-1)), 0.0, 1.0)
    return np.arccos(dots)


def farthest_point_order(points: np.ndarray) -> np.ndarray:
    """Deterministic max-spread traversal under the folded angular metric."""
    n = points.shape[0]
    dots = np.clip(np.abs(points @ points.T), 0.0, 1.0)
    ang = np.arccos(dots)
    start = int(np.argmax(points[:, 2]))
    order = [start]
    mind = ang[start].copy()
    for _ in range(n - 1):
        mind[order] = -1.0
        nxt = int(np.argmax(mind))
        order.append(nxt)
        np.minimum(mind, ang[nxt], out=mind)
    return np.array(order, dtype=np.int64)


def split_directions(points: np.ndarray, sizes: tuple[int, ...]) -> list[np.ndarray]:
    """Split a direction set into quasi-uniform subsets of the given sizes.

    Points are laid out in farthest-point order and dealt round-robin, so each
    subset stays well spread; returns index arrays (ascending) per subset.
    """
    if sum(sizes) != points.shape[0]:
        raise ValidationError(
            f"split sizes {sizes} do not sum to the number of points "
            f"({points.shape[0]})"
        )
    order = farthest_point_order(points)
    buckets: list[list[int]] = [[] for _ in sizes]
    quota = list(sizes)
    pos = 0
    for idx in order:
        while quota[pos % len(sizes)] == len(buckets[pos % len(sizes)]):
            pos += 1
        buckets[pos % len(sizes)].append(int(idx))
        pos += 1
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]
