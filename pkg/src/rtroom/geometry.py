"""Core geometric types: rigid transforms, point clouds, triangle meshes.

All world-space quantities are millimeters. The world frame is right-handed,
+Z up, +Y along the couch long axis toward the gantry, origin at the machine
isocenter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROT_TOL = 1e-9
DEGENERATE_AREA = 1e-12  # mm^2, triangles below this are dropped at construction


class GeometryError(ValueError):
    """Invalid geometric input (degenerate triangle, bad indices, ...)."""


def _as_points(a, name="points") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} contain non-finite values")
    return arr


def rotation_x(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rotation_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rotation_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation (orthonormal, det +1) plus translation, both in mm."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise GeometryError("transform contains non-finite values")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROT_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROT_TOL:
            raise GeometryError("rotation determinant is not +1 (reflection?)")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(np.eye(3), np.asarray(t, dtype=np.float64))

    @staticmethod
    def from_rotation(r) -> "RigidTransform":
        return RigidTransform(r, np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: (self @ other)(p) = self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map (n,3) or (3,) points: p' = R p + t."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        """Map direction vectors (rotation only)."""
        v = np.asarray(vectors, dtype=np.float64)
        return v @ self.rotation.T

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (np.max(np.abs(self.rotation - other.rotation)) <= tol
                and np.max(np.abs(self.translation - other.translation)) <= tol)

    def to_json(self) -> dict:
        return {"rotation": [float(v) for v in self.rotation.ravel()],
                "translation_mm": [float(v) for v in self.translation]}

    @staticmethod
    def from_json(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                              np.asarray(d["translation_mm"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points in mm with optional unit normals and per-point view origins.

    view_origins records the world position of the camera that produced each
    point; merge_scans fills it in and normal estimation uses it for
    orientation.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    view_origins: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if len(nrm) != len(pts):
                raise GeometryError("normals length differs from points")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.max(np.abs(lengths - 1.0), initial=0.0) > 1e-6:
                raise GeometryError("normals are not unit length")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)
        if self.view_origins is not None:
            vo = _as_points(self.view_origins, "view_origins")
            if len(vo) != len(pts):
                raise GeometryError("view_origins length differs from points")
            vo.flags.writeable = False
            object.__setattr__(self, "view_origins", vo)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh. Degenerate (zero-area) triangles are dropped
    at construction; out-of-range indices are rejected."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise GeometryError("vertices contain non-finite values")
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise GeometryError("triangle index out of range")
        if len(t):
            a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
            area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
            t = t[area2 > 2.0 * DEGENERATE_AREA]
        v.flags.writeable = False
        t = np.ascontiguousarray(t, dtype=np.int32)
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_corners(self):
        """(T,3,3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def transformed(self, t: RigidTransform) -> "TriMesh":
        return TriMesh(t.apply(self.vertices), self.triangles)

    def area(self) -> float:
        c = self.triangle_corners()
        return float(np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1).sum() / 2.0)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a (E,2) sorted-index array."""
        tri = self.triangles
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def boundary_edge_count(self) -> int:
        """Number of edges used by exactly one triangle (0 == watertight)."""
        tri = self.triangles.astype(np.int64)
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e[:, 0] * self.n_vertices + e[:, 1], return_counts=True)
        return int(np.sum(counts == 1))


@dataclass(frozen=True, eq=False)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise GeometryError("aabb min exceeds max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


def transform_points(t: RigidTransform, pc: PointCloud) -> PointCloud:
    """Apply a rigid transform to a cloud; normals rotate, origins move."""
    return PointCloud(
        t.apply(pc.points),
        None if pc.normals is None else t.apply_vectors(pc.normals),
        None if pc.view_origins is None else t.apply(pc.view_origins),
    )


def mesh_bounds(m: TriMesh) -> Aabb:
    if m.n_vertices == 0:
        raise GeometryError("empty mesh has no bounds")
    return Aabb(m.vertices.min(axis=0), m.vertices.max(axis=0))


def point_triangle_distance(p, tri) -> float:
    """Exact distance from a point to a closed triangle (3 corner rows)."""
    tri = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    area2 = np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    if area2 <= 2.0 * DEGENERATE_AREA:
        raise GeometryError("degenerate triangle")
    d, _ = _point_tri_closest(np.asarray(p, dtype=np.float64).reshape(1, 3),
                              tri.reshape(1, 3, 3))
    return float(d[0])


def _point_tri_closest(p: np.ndarray, tri: np.ndarray):
    """Vectorized closest point on triangle. p: (n,3), tri: (n,3,3).

    Returns (distances (n,), closest points (n,3)). Ericson-style region
    classification via clamped barycentric coordinates.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    # vertex regions
    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    done |= m
    m = (~done) & (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    done |= m
    m = (~done) & (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    done |= m

    # edge AB
    vc = d1 * d4 - d3 * d2
    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    denom = d1 - d3
    t = np.where(denom != 0, d1 / np.where(denom == 0, 1.0, denom), 0.0)
    closest[m] = a[m] + t[m, None] * ab[m]
    done |= m

    # edge AC
    vb = d5 * d2 - d1 * d6
    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    denom = d2 - d6
    t = np.where(denom != 0, d2 / np.where(denom == 0, 1.0, denom), 0.0)
    closest[m] = a[m] + t[m, None] * ac[m]
    done |= m

    # edge BC
    va = d3 * d6 - d5 * d4
    m = (~done) & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    denom = (d4 - d3) + (d5 - d6)
    t = np.where(denom != 0, (d4 - d3) / np.where(denom == 0, 1.0, denom), 0.0)
    closest[m] = b[m] + t[m, None] * (c[m] - b[m])
    done |= m

    # interior
    m = ~done
    if np.any(m):
        denom = va + vb + vc
        denom = np.where(denom == 0, 1.0, denom)
        v = vb / denom
        w = vc / denom
        closest[m] = a[m] + v[m, None] * ab[m] + w[m, None] * ac[m]

    d = np.linalg.norm(p - closest, axis=1)
    return d, closest
