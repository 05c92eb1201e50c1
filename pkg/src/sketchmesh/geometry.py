"""Triangle-mesh utilities: icosphere templates, manifold checks, smoothness
terms, parity voxelization, and OBJ/STL exchange.

Vertex buffers are float64 here; the training path wraps them into float32
tensors only where gradients are needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {self.faces.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise IndexError("face index out of vertex range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy())


# ------------------------------------------------------------------ icosphere

def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    # enforce outward counter-clockwise winding
    for f in faces:
        a, b, c = verts[f]
        if np.dot(np.cross(b - a, c - a), a + b + c) < 0:
            f[1], f[2] = f[2], f[1]
    return verts, faces


def subdivide(verts: np.ndarray, faces: np.ndarray):
    """Split every face into four via edge midpoints.

    Returns (new_verts, new_faces, midpoint_parents) where row k of
    ``midpoint_parents`` holds the two parent vertex indices of new vertex
    ``len(verts) + k``. Midpoint creation order is fixed by face order, so
    the refinement is deterministic.
    """
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    mid: dict[tuple[int, int], int] = {}
    parents: list[tuple[int, int]] = []
    nv = len(verts)

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = mid.get(key)
        if idx is None:
            idx = nv + len(parents)
            mid[key] = idx
            parents.append(key)
        return idx

    new_faces = np.empty((4 * len(faces), 3), dtype=np.int64)
    for i, (a, b, c) in enumerate(faces):
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces[4 * i + 0] = (a, ab, ca)
        new_faces[4 * i + 1] = (b, bc, ab)
        new_faces[4 * i + 2] = (c, ca, bc)
        new_faces[4 * i + 3] = (ab, bc, ca)
    parr = np.asarray(parents, dtype=np.int64).reshape(-1, 2)
    new_verts = np.vstack([verts, 0.5 * (verts[parr[:, 0]] + verts[parr[:, 1]])])
    return new_verts, new_faces, parr


@lru_cache(maxsize=None)
def _icosphere_cached(level: int):
    if level < 0:
        raise ValueError("icosphere level must be >= 0")
    verts, faces = _icosahedron()
    transitions = []
    for _ in range(level):
        verts, faces, parents = subdivide(verts, faces)
        verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
        transitions.append(parents)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return verts, faces, transitions


def icosphere(level: int) -> Mesh:
    """Unit icosphere with 10 * 4**level + 2 vertices, 20 * 4**level faces."""
    verts, faces, _ = _icosphere_cached(int(level))
    return Mesh(verts.copy(), faces.copy())


def prolongation_matrix(level: int) -> np.ndarray:
    """Linear map from vertex values at ``level`` to ``level + 1``.

    Parent vertices pass through; each midpoint vertex averages its two
    parents. Used to carry per-vertex offset fields up one refinement step.
    """
    _, _, transitions = _icosphere_cached(int(level) + 1)
    parents = transitions[level]
    n_coarse = 10 * 4 ** level + 2
    n_fine = n_coarse + len(parents)
    p = np.zeros((n_fine, n_coarse), dtype=np.float32)
    p[:n_coarse, :n_coarse] = np.eye(n_coarse, dtype=np.float32)
    rows = n_coarse + np.arange(len(parents))
    p[rows, parents[:, 0]] += 0.5
    p[rows, parents[:, 1]] += 0.5
    return p


# ----------------------------------------------------------- manifold checks

@dataclass
class WatertightReport:
    watertight: bool
    bad_edges: list[tuple[int, int]]
    n_edges: int

    def __bool__(self) -> bool:
        return self.watertight


def check_watertight(mesh: Mesh) -> WatertightReport:
    """A mesh is watertight here iff every undirected edge is shared by
    exactly two faces with opposite directions (closed, consistently
    oriented 2-manifold)."""
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            if u == v:
                key = (int(u), int(v))
                counts[key] = counts.get(key, 0) + 2  # degenerate edge can never balance
                continue
            counts[(int(u), int(v))] = counts.get((int(u), int(v)), 0) + 1
    bad: set[tuple[int, int]] = set()
    seen: set[tuple[int, int]] = set()
    for (u, v), n in counts.items():
        key = (u, v) if u < v else (v, u)
        if key in seen:
            continue
        seen.add(key)
        if n != 1 or counts.get((v, u), 0) != 1:
            bad.add(key)
    return WatertightReport(not bad, sorted(bad), len(seen))


def edge_face_pairs(faces: np.ndarray) -> np.ndarray:
    """(E, 2) face indices for every edge shared by exactly two faces."""
    owner: dict[tuple[int, int], int] = {}
    pairs: list[tuple[int, int]] = []
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(v), int(u)) if u > v else (int(u), int(v))
            fj = owner.pop(key, None)
            if fj is None:
                owner[key] = fi
            else:
                pairs.append((fj, fi))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def neighbor_matrix(faces: np.ndarray, n_verts: int) -> np.ndarray:
    """Row-normalized vertex adjacency: row i averages the neighbors of i."""
    adj = np.zeros((n_verts, n_verts), dtype=np.float32)
    for a, b, c in faces:
        adj[a, b] = adj[b, a] = 1.0
        adj[b, c] = adj[c, b] = 1.0
        adj[c, a] = adj[a, c] = 1.0
    deg = adj.sum(axis=1, keepdims=True)
    if np.any(deg == 0):
        raise ValueError("isolated vertex has no neighbors")
    return adj / deg


# -------------------------------------------------------- smoothness terms

def laplacian_term(verts: Tensor, nbr: np.ndarray) -> Tensor:
    """Mean squared distance of each vertex from its neighbor centroid."""
    centroid = ad.matmul(Tensor(nbr), verts)
    diff = ad.sub(verts, centroid)
    return ad.tmean(ad.tsum(ad.mul(diff, diff), axis=1))


def laplacian_loss(mesh: Mesh) -> float:
    nbr = neighbor_matrix(mesh.faces, mesh.n_vertices)
    return laplacian_term(Tensor(mesh.vertices), nbr).item()


def _face_normals(verts: Tensor, faces: np.ndarray) -> Tensor:
    v0 = ad.gather_rows(verts, faces[:, 0])
    v1 = ad.gather_rows(verts, faces[:, 1])
    v2 = ad.gather_rows(verts, faces[:, 2])
    e1 = ad.sub(v1, v0)
    e2 = ad.sub(v2, v0)
    ax, ay, az = e1[:, 0], e1[:, 1], e1[:, 2]
    bx, by, bz = e2[:, 0], e2[:, 1], e2[:, 2]
    nx = ad.sub(ad.mul(ay, bz), ad.mul(az, by))
    ny = ad.sub(ad.mul(az, bx), ad.mul(ax, bz))
    nz = ad.sub(ad.mul(ax, by), ad.mul(ay, bx))
    n = ad.concat([nx.reshape(-1, 1), ny.reshape(-1, 1), nz.reshape(-1, 1)], axis=1)
    norm = ad.power(ad.add(ad.tsum(ad.mul(n, n), axis=1, keepdims=True), 1e-12), 0.5)
    return ad.mul(n, ad.power(norm, -1.0))


def flatten_term(verts: Tensor, faces: np.ndarray,
                 pairs: np.ndarray | None = None) -> Tensor:
    """Mean over interior edges of (cos theta + 1)^2 where theta is the
    dihedral angle between the incident faces; coplanar faces give 0."""
    if pairs is None:
        pairs = edge_face_pairs(faces)
    normals = _face_normals(verts, faces)
    n1 = ad.gather_rows(normals, pairs[:, 0])
    n2 = ad.gather_rows(normals, pairs[:, 1])
    cos_between = ad.tsum(ad.mul(n1, n2), axis=1)
    # outward normals agree for a flat fold, so cos(theta) = -n1.n2
    term = ad.sub(Tensor(np.float32(1.0)), cos_between)
    return ad.tmean(ad.mul(term, term))


def flatten_loss(mesh: Mesh) -> float:
    return flatten_term(Tensor(mesh.vertices), mesh.faces).item()


# --------------------------------------------------------------- voxelization

def default_bounds(mesh: Mesh) -> np.ndarray:
    """Axis-aligned bounding box padded by 5% of each extent per side."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    ext = np.maximum(hi - lo, 1e-9)
    return np.stack([lo - 0.05 * ext, hi + 0.05 * ext])


def _ray_toggles(mesh: Mesh, resolution: int, bounds: np.ndarray) -> np.ndarray:
    """Crossing toggles per x-directed ray through voxel centers.

    ``toggles[j, k, m]`` counts surface crossings between centers m-1 and m
    of the ray through (y_j, z_k); slot 0 collects crossings left of the
    first center, slot R crossings right of the last.
    """
    r = int(resolution)
    lo, hi = bounds
    h = (hi - lo) / r
    yc = lo[1] + (np.arange(r) + 0.5) * h[1] + h[1] * 7.41421e-4
    zc = lo[2] + (np.arange(r) + 0.5) * h[2] + h[2] * 3.23607e-4
    toggles = np.zeros((r, r, r + 1), dtype=np.int64)
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    for p0, p1, p2 in tri:
        det = (p1[1] - p0[1]) * (p2[2] - p0[2]) - (p1[2] - p0[2]) * (p2[1] - p0[1])
        if det == 0.0:
            continue
        ymin, ymax = min(p0[1], p1[1], p2[1]), max(p0[1], p1[1], p2[1])
        zmin, zmax = min(p0[2], p1[2], p2[2]), max(p0[2], p1[2], p2[2])
        j0 = max(0, int(np.ceil((ymin - yc[0]) / h[1])))
        j1 = min(r - 1, int(np.floor((ymax - yc[0]) / h[1])))
        k0 = max(0, int(np.ceil((zmin - zc[0]) / h[2])))
        k1 = min(r - 1, int(np.floor((zmax - zc[0]) / h[2])))
        if j0 > j1 or k0 > k1:
            continue
        yy = yc[j0:j1 + 1][:, None]
        zz = zc[k0:k1 + 1][None, :]
        l1 = ((yy - p0[1]) * (p2[2] - p0[2]) - (zz - p0[2]) * (p2[1] - p0[1])) / det
        l2 = ((p1[1] - p0[1]) * (zz - p0[2]) - (p1[2] - p0[2]) * (yy - p0[1])) / det
        inside = (l1 > 0.0) & (l2 > 0.0) & (l1 + l2 < 1.0)
        if not inside.any():
            continue
        xcross = p0[0] + l1 * (p1[0] - p0[0]) + l2 * (p2[0] - p0[0])
        frac = (xcross - (lo[0] + 0.5 * h[0])) / h[0]
        slot = np.clip(np.floor(frac).astype(np.int64) + 1, 0, r)
        jj, kk = np.nonzero(inside)
        np.add.at(toggles, (jj + j0, kk + k0, slot[inside]), 1)
    return toggles


def voxelize(mesh: Mesh, resolution: int = 32,
             bounds: np.ndarray | None = None) -> np.ndarray:
    """Boolean occupancy by ray-parity: a center is inside when an odd
    number of crossings lies to its right along +x."""
    if bounds is None:
        bounds = default_bounds(mesh)
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    toggles = _ray_toggles(mesh, resolution, bounds)
    right = np.cumsum(toggles[:, :, ::-1], axis=2)[:, :, ::-1]
    occ = (right[:, :, 1:] % 2).astype(bool)  # (y, z, x)
    return np.ascontiguousarray(occ.transpose(2, 0, 1))


def ray_parity_even(mesh: Mesh, resolution: int = 32,
                    bounds: np.ndarray | None = None) -> bool:
    """True when every voxel-center ray crosses the surface an even number
    of times; a parity failure means the mesh leaks."""
    if bounds is None:
        bounds = default_bounds(mesh)
    bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
    toggles = _ray_toggles(mesh, resolution, bounds)
    return bool(np.all(toggles.sum(axis=2) % 2 == 0))


def voxel_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two occupancy grids on shared bounds."""
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


# -------------------------------------------------------------------- exchange

def export_obj(mesh: Mesh) -> bytes:
    if not np.all(np.isfinite(mesh.vertices)):
        raise ValueError("refusing to export non-finite vertices")
    # repr of a Python float is its shortest exact form, so the text
    # round-trips bit-for-bit (numpy scalars would stringify differently)
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}"
             for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return ("\n".join(lines) + "\n").encode("ascii")


def load_obj(data: bytes | str) -> Mesh:
    text = data.decode("ascii") if isinstance(data, bytes) else data
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise ValueError("only triangle faces are supported")
            faces.append(idx)
    return Mesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def export_stl(mesh: Mesh) -> bytes:
    """Binary STL: 84-byte preamble plus 50 bytes per triangle.

    The format stores a loose triangle soup, so the writer insists on a
    watertight input; anything else could not be welded back faithfully.
    """
    if not np.all(np.isfinite(mesh.vertices)):
        raise ValueError("refusing to export non-finite vertices")
    report = check_watertight(mesh)
    if not report.watertight:
        raise ValueError(f"mesh is not watertight ({len(report.bad_edges)} bad edges)")
    tri = mesh.vertices[mesh.faces].astype("<f4")
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norms > 0, n / np.maximum(norms, 1e-30), 0.0).astype("<f4")
    record = np.zeros(len(tri), dtype=np.dtype([
        ("normal", "<f4", 3), ("verts", "<f4", (3, 3)), ("attr", "<u2")]))
    record["normal"] = n
    record["verts"] = tri
    header = b"sketchmesh binary stl".ljust(80, b"\0")
    return header + np.uint32(len(tri)).tobytes() + record.tobytes()


def load_stl(data: bytes) -> Mesh:
    """Weld the triangle soup back into an indexed mesh (first-seen order)."""
    if len(data) < 84:
        raise ValueError("truncated STL")
    count = int(np.frombuffer(data[80:84], dtype="<u4")[0])
    record = np.frombuffer(data[84:], dtype=np.dtype([
        ("normal", "<f4", 3), ("verts", "<f4", (3, 3)), ("attr", "<u2")]), count=count)
    seen: dict[bytes, int] = {}
    verts: list[np.ndarray] = []
    faces = np.empty((count, 3), dtype=np.int64)
    for i, tri in enumerate(record["verts"]):
        for c in range(3):
            key = tri[c].tobytes()
            idx = seen.get(key)
            if idx is None:
                idx = len(verts)
                seen[key] = idx
                verts.append(tri[c].astype(np.float64))
            faces[i, c] = idx
    return Mesh(np.asarray(verts).reshape(-1, 3), faces)


def export_mesh(mesh: Mesh, fmt: str) -> bytes:
    if fmt == "obj":
        return export_obj(mesh)
    if fmt == "stl":
        return export_stl(mesh)
    raise ValueError(f"unsupported mesh format '{fmt}'")
