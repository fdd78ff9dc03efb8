"""Structured triangulations of a disk with per-node boundary frames."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Unit vectors of the hexagonal lattice, in the (v0, v1) integer basis.
_HEX_DIRS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


@dataclass(frozen=True)
class Mesh:
    """Triangulation of the disk of diameter ``char_length`` centred at the origin."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    boundary_edges: np.ndarray
    char_length: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def radius(self) -> float:
        return 0.5 * self.char_length

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


@dataclass(frozen=True)
class BoundaryFrame:
    node: int
    n: np.ndarray
    tau: np.ndarray


@dataclass(frozen=True)
class MeshQuality:
    min_angle: float  # degrees
    max_aspect_ratio: float
    h_max: float
    degenerate: tuple = ()


def _hex_lattice(level: int):
    """Integer lattice points and triangles of the refined hexagon fan."""
    n = 2 ** level
    index: dict[tuple[int, int], int] = {}
    points: list[tuple[int, int]] = []

    def node(a: int, b: int) -> int:
        key = (a, b)
        if key not in index:
            index[key] = len(points)
            points.append(key)
        return index[key]

    tris = []
    for k in range(6):
        e1 = _HEX_DIRS[k]
        e2 = _HEX_DIRS[(k + 1) % 6]

        def at(i, j):
            return node(i * e1[0] + j * e2[0], i * e1[1] + j * e2[1])

        for i in range(n):
            for j in range(n - i):
                tris.append((at(i, j), at(i + 1, j), at(i, j + 1)))
                if i + j < n - 1:
                    tris.append((at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)))
    return np.array(points, dtype=float), np.array(tris, dtype=np.int64), n


def build_disk_mesh(refinement_level: int, ell: float) -> Mesh:
    """Refine a hexagon fan ``refinement_level`` times and map it onto the disk.

    The hexagon is inscribed in the circle of radius ``ell/2``; every vertex is
    then stretched radially by the ratio of circle to hexagon radius in its
    direction, so boundary vertices land on the circle and interior elements
    keep their shape.
    """
    if refinement_level < 0 or refinement_level > 8:
        raise ValueError("refinement_level must be in [0, 8]")
    if not ell > 0:
        raise ValueError("ell must be positive")
    lat, tris, n = _hex_lattice(int(refinement_level))
    # lattice basis v0 = (1, 0), v1 = (1/2, sqrt(3)/2), scaled to unit circumradius
    x = (lat[:, 0] + 0.5 * lat[:, 1]) / n
    y = (np.sqrt(3.0) / 2.0 * lat[:, 1]) / n
    theta = np.arctan2(y, x)
    phase = np.mod(theta, np.pi / 3.0) - np.pi / 6.0
    stretch = np.cos(phase) / np.cos(np.pi / 6.0)
    unit = np.column_stack([x * stretch, y * stretch])

    # boundary: hexagon perimeter, |a|+|b|+|a+b| == 2n in lattice coordinates
    a, b = lat[:, 0], lat[:, 1]
    on_bdry = (np.abs(a) + np.abs(b) + np.abs(a + b)) == 2 * n
    bidx = np.flatnonzero(on_bdry)
    ang = np.mod(np.arctan2(unit[bidx, 1], unit[bidx, 0]), 2 * np.pi)
    bidx = bidx[np.argsort(ang, kind="stable")]
    # snap boundary vertices onto the unit circle exactly (cos/sin of angle)
    ang = np.arctan2(unit[bidx, 1], unit[bidx, 0])
    unit[bidx] = np.column_stack([np.cos(ang), np.sin(ang)])

    radius = 0.5 * float(ell)
    verts = radius * unit
    # orient counterclockwise
    p = verts[tris]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    flip = area2 < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    edges = np.column_stack([bidx, np.roll(bidx, -1)])
    return Mesh(verts, tris, bidx, edges, float(ell))


def boundary_frames(mesh: Mesh) -> list[BoundaryFrame]:
    """Outward normal and counterclockwise tangent at each boundary node."""
    frames = []
    for i in mesh.boundary_nodes:
        d = mesh.vertices[i] - mesh.center
        r = np.hypot(d[0], d[1])
        if r == 0.0:
            raise ValueError(f"boundary node {i} coincides with the centre")
        nvec = d / r
        frames.append(BoundaryFrame(int(i), nvec, np.array([-nvec[1], nvec[0]])))
    return frames


def triangle_angles(p: np.ndarray) -> np.ndarray:
    """Interior angles (degrees) for an array of triangles of shape (T, 3, 2)."""
    out = np.empty(p.shape[:2])
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, k] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
    return out


def aspect_ratios(p: np.ndarray) -> np.ndarray:
    """Circumradius over twice the inradius: 1 for equilateral triangles."""
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    s = 0.5 * (a + b + c)
    area = np.sqrt(np.maximum(s * (s - a) * (s - b) * (s - c), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        circ = a * b * c / (4 * area)
        inr = area / s
        return circ / (2 * inr)


def mesh_quality(mesh: Mesh) -> MeshQuality:
    p = mesh.vertices[mesh.triangles]
    ang = triangle_angles(p)
    ar = aspect_ratios(p)
    e = np.concatenate([np.linalg.norm(p[:, k] - p[:, (k + 1) % 3], axis=1) for k in range(3)])
    bad = tuple(int(i) for i in np.flatnonzero(~np.isfinite(ar) | (ang.min(axis=1) <= 0)))
    return MeshQuality(float(ang.min()), float(np.nanmax(np.where(np.isfinite(ar), ar, np.nan))),
                       float(e.max()), bad)


def write_mesh(mesh: Mesh, path) -> None:
    frames = boundary_frames(mesh)
    lines = [f"nodes {mesh.n_vertices} triangles {mesh.n_triangles} "
             f"boundary {len(frames)} ell {mesh.char_length!r}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"{fr.node} {float(fr.n[0])!r} {float(fr.n[1])!r}" for fr in frames]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = Path(path).read_text().splitlines()
    head = rows[0].split()
    if head[0::2][:4] != ["nodes", "triangles", "boundary", "ell"]:
        raise ValueError("malformed mesh header")
    nn, nt, nb = int(head[1]), int(head[3]), int(head[5])
    ell = float(head[7])
    verts = np.array([[float(t) for t in r.split()] for r in rows[1:1 + nn]]).reshape(nn, 2)
    tris = np.array([[int(t) for t in r.split()] for r in rows[1 + nn:1 + nn + nt]],
                    dtype=np.int64).reshape(nt, 3)
    bnodes = np.array([int(r.split()[0]) for r in rows[1 + nn + nt:1 + nn + nt + nb]],
                      dtype=np.int64)
    edges = np.column_stack([bnodes, np.roll(bnodes, -1)])
    return Mesh(verts, tris, bnodes, edges, ell)
