"""Surface factory: isosurface extraction, point-cloud reconstruction,
iterative quadric-edge-collapse decimation, and Hausdorff quality filtering.

Reconstruction voxelizes oriented points into a truncated signed-distance
grid and extracts the zero level set, which reproduces the voxel-grid
behavior the pipeline relies on (duplicate collapse, small-gap closing)
at the configured grid resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .evalkit import MetricsReport, metrics
from .geometry import PointCloud, TriMesh
from .mc_tables import CORNER_OFFSETS, TRI_TABLE

QUALITY_BIN_EDGES_MM = (1.0, 3.0, 5.0)
QUALITY_BIN_COLORS = np.array(
    [[60, 90, 255], [60, 220, 60], [230, 60, 60], [80, 80, 80]], dtype=np.uint8
)  # <1 mm, <3 mm, <5 mm, >=5 mm


class InvalidVolumeError(ValueError):
    pass


class ReconstructionError(ValueError):
    pass


class DecimationError(RuntimeError):
    """Decimation target unreachable; .mesh carries the best achieved mesh."""

    def __init__(self, message, mesh=None, rounds=None):
        super().__init__(message)
        self.mesh = mesh
        self.rounds = rounds or []


class EmptyFilterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Regular scalar grid; samples indexed [x, y, z], world = origin + i*spacing."""

    dims: tuple
    spacing: np.ndarray
    origin: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 2:
            raise InvalidVolumeError(f"dims must be 3 values >= 2, got {dims}")
        spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        if np.any(spacing <= 0):
            raise InvalidVolumeError("spacing must be positive")
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        samples = np.asarray(self.samples)
        if samples.shape != dims:
            if samples.size == dims[0] * dims[1] * dims[2]:
                samples = samples.reshape(dims)
            else:
                raise InvalidVolumeError("sample count does not match dims")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "samples", samples)


def save_volume(header_path, vol: ScalarVolume, dtype: str = "f32") -> None:
    """JSON header + raw little-endian voxel file, x-fastest ordering."""
    header_path = Path(header_path)
    raw_path = header_path.with_suffix(".raw")
    np_dtype = {"i16": "<i2", "f32": "<f4"}[dtype]
    # [x,y,z] indexing -> x-fastest on disk
    raw = np.ascontiguousarray(vol.samples.transpose(2, 1, 0)).astype(np_dtype)
    raw_path.write_bytes(raw.tobytes())
    header_path.write_text(json.dumps({
        "dims": list(vol.dims),
        "spacing_mm": [float(v) for v in vol.spacing],
        "origin_mm": [float(v) for v in vol.origin],
        "dtype": dtype,
        "data": raw_path.name,
    }, indent=2))


def load_volume(header_path) -> ScalarVolume:
    header_path = Path(header_path)
    hdr = json.loads(header_path.read_text())
    np_dtype = {"i16": "<i2", "f32": "<f4"}[hdr["dtype"]]
    nx, ny, nz = hdr["dims"]
    raw = np.frombuffer((header_path.parent / hdr["data"]).read_bytes(), dtype=np_dtype)
    if raw.size != nx * ny * nz:
        raise InvalidVolumeError("raw voxel file size does not match dims")
    samples = raw.reshape(nz, ny, nx).transpose(2, 1, 0).astype(np.float64)
    return ScalarVolume((nx, ny, nz), hdr["spacing_mm"], hdr["origin_mm"], samples)


# ---------------------------------------------------------------------------
# marching cubes

_EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)
_EDGE_BASE = np.array([
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0],
    [0, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 1],
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
], dtype=np.int64)
_AXIS_UNIT = np.eye(3, dtype=np.int64)


def marching_cubes(vol: ScalarVolume, iso: float) -> TriMesh:
    """Extract the iso-surface with the 256-case table and edge interpolation.

    Vertices come out in world mm. Orientation is consistent, outward for
    the signed-distance convention (negative inside). An iso value outside
    the sample range yields an empty mesh.
    """
    return _marching_cubes_impl(vol, iso, cell_mask=None)


def _marching_cubes_impl(vol: ScalarVolume, iso: float, cell_mask=None) -> TriMesh:
    s = np.asarray(vol.samples, dtype=np.float64)
    if np.any(np.isnan(s)):
        raise InvalidVolumeError("volume contains NaN samples")
    nx, ny, nz = vol.dims

    inside = s < iso
    index = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint8)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        index |= (inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz]
                  .astype(np.uint8) << bit)
    active = (index != 0) & (index != 255)
    if cell_mask is not None:
        active &= cell_mask
    ci, cj, ck = np.nonzero(active)
    if len(ci) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    case = index[ci, cj, ck]

    tt = TRI_TABLE[case]                      # (A, 16)
    rows, cols = np.nonzero(tt >= 0)          # row-major: slot order preserved
    local_edge = tt[rows, cols].astype(np.int64)

    # global lattice-edge key: axis + 3 * linear(lattice point)
    bi = ci[rows] + _EDGE_BASE[local_edge, 0]
    bj = cj[rows] + _EDGE_BASE[local_edge, 1]
    bk = ck[rows] + _EDGE_BASE[local_edge, 2]
    key = ((bk * ny + bj) * nx + bi) * 3 + _EDGE_AXIS[local_edge]
    ukeys, inv = np.unique(key, return_inverse=True)
    triangles = inv.reshape(-1, 3)

    # interpolate one vertex per unique lattice edge
    axis = ukeys % 3
    lin = ukeys // 3
    vi = lin % nx
    vj = (lin // nx) % ny
    vk = lin // (nx * ny)
    d = _AXIS_UNIT[axis]
    v0 = s[vi, vj, vk]
    v1 = s[vi + d[:, 0], vj + d[:, 1], vk + d[:, 2]]
    denom = v1 - v0
    t = np.where(denom != 0, (iso - v0) / np.where(denom == 0, 1.0, denom), 0.5)
    t = np.clip(t, 0.0, 1.0)
    grid_pos = np.column_stack([vi, vj, vk]).astype(np.float64) + t[:, None] * d
    world = vol.origin + grid_pos * vol.spacing

    # weld numerically coincident vertices (t = 0/1 hits on shared corners)
    world = np.round(world, 9)
    uniq, remap = np.unique(world, axis=0, return_inverse=True)
    triangles = remap[triangles]

    # table winding is inward-facing for "below iso = inside"; flip for outward
    triangles = triangles[:, [0, 2, 1]]
    return TriMesh(uniq, triangles.astype(np.int32))


# ---------------------------------------------------------------------------
# reconstruction from oriented points

@dataclass(frozen=True)
class ReconParams:
    grid_resolution: int = 512        # voxels along the longest cloud axis
    normal_neighborhood: int = 16     # kNN size for normal estimation
    truncation_voxels: float = 3.0    # SDF clamp distance in voxel units
    distance_neighbors: int = 8       # oriented points averaged per voxel
    march_radius_voxels: float = 2.5  # only cells this close to data are marched

    def __post_init__(self):
        if not (16 <= self.grid_resolution <= 1024):
            raise ValueError("grid_resolution must be within [16, 1024]")
        if self.truncation_voxels <= 0:
            raise ValueError("truncation must be positive")
        if self.distance_neighbors < 1:
            raise ValueError("distance_neighbors must be >= 1")
        if self.march_radius_voxels <= 1.0:
            raise ValueError("march_radius_voxels must exceed 1 voxel")


def estimate_normals(cloud: PointCloud, neighborhood: int = 16) -> PointCloud:
    """PCA normals over kNN patches, oriented toward each point's view origin
    (falling back to outward-from-centroid when no scan metadata is present)."""
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise ReconstructionError("too few points for normal estimation")
    k = min(neighborhood, n)
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k, workers=-1)
    patches = pts[nbr]                       # (n, k, 3)
    centered = patches - patches.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    # smallest-eigenvector of each 3x3 covariance
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    if w[:, 1].min() <= 0:
        bad = np.nonzero(w[:, 1] <= 0)[0]
        raise ReconstructionError(f"degenerate neighborhoods at {len(bad)} points")
    if cloud.view_origins is not None:
        toward = cloud.view_origins - pts
    else:
        toward = pts - pts.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, toward) < 0
    normals[flip] = -normals[flip]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals, cloud.view_origins)


def _dilate_box(mask: np.ndarray, r: int) -> np.ndarray:
    """Binary dilation by a (2r+1)^3 box, separable along the three axes."""
    out = mask.astype(np.uint8)
    for axis in range(3):
        out = ndimage.maximum_filter1d(out, size=2 * r + 1, axis=axis, mode="constant")
    return out.astype(bool)


def _voxel_dedup(points, normals, origin, voxel, dims):
    """Average points and normals falling into the same voxel."""
    ijk = np.floor((points - origin) / voxel).astype(np.int64)
    ijk = np.clip(ijk, 0, np.asarray(dims) - 1)
    key = (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    uniq, start = np.unique(key_s, return_index=True)
    counts = np.diff(np.append(start, len(key_s)))
    sums_p = np.add.reduceat(points[order], start, axis=0)
    sums_n = np.add.reduceat(normals[order], start, axis=0)
    p = sums_p / counts[:, None]
    n = sums_n / counts[:, None]
    ln = np.linalg.norm(n, axis=1)
    # opposing normals in one voxel cancel; fall back to any member's normal
    weak = ln < 1e-6
    if np.any(weak):
        n[weak] = normals[order][start[weak]]
        ln[weak] = np.linalg.norm(n[weak], axis=1)
    n /= ln[:, None]
    out_ijk = np.column_stack([uniq // (dims[1] * dims[2]),
                               (uniq // dims[2]) % dims[1],
                               uniq % dims[2]])
    return p, n, out_ijk


def reconstruct(cloud: PointCloud, params: ReconParams = ReconParams()) -> TriMesh:
    """Oriented points -> truncated signed-distance grid -> iso-surface.

    Input points collapse onto the voxel grid first (duplicates and dense
    redundancy average out), then each in-band voxel takes the
    distance-weighted mean plane distance of its nearest oriented samples.
    Only grid cells fully inside the measured band are marched, so the
    output follows the data: watertight where coverage is closed, open
    where the scan ends. Gaps smaller than about twice the truncation
    distance close through the band's sign interpolation.
    """
    if len(cloud) < 100:
        raise ReconstructionError(f"need at least 100 points, got {len(cloud)}")
    if cloud.normals is None:
        cloud = estimate_normals(cloud, params.normal_neighborhood)

    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise ReconstructionError("degenerate cloud extent")
    voxel = extent / params.grid_resolution
    trunc = params.truncation_voxels * voxel
    pad = trunc + 2 * voxel
    origin = lo - pad
    dims = np.ceil((hi - lo + 2 * pad) / voxel).astype(int) + 1
    nx, ny, nz = (int(v) for v in dims)

    pts, normals, ijk = _voxel_dedup(cloud.points, cloud.normals, origin, voxel,
                                     (nx, ny, nz))
    tree = cKDTree(pts)

    # the march tube must cover both the grid scale and the sampling gaps
    sample = pts[:: max(1, len(pts) // 5000)]
    nn, _ = tree.query(sample, k=2, workers=-1)
    spacing = float(np.median(nn[:, 1]))
    march_radius = max(params.march_radius_voxels * voxel, 2.5 * spacing)

    # voxels near any sample point (candidates for field evaluation)
    occupied = np.zeros((nx, ny, nz), dtype=bool)
    occupied[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = True
    band = _dilate_box(occupied, int(np.ceil(march_radius / voxel)))

    bi, bj, bk = np.nonzero(band)
    centers = origin + np.column_stack([bi, bj, bk]) * voxel
    d0, _ = tree.query(centers, k=1, workers=-1)
    # value coverage: one cell diagonal beyond the tube, so that every cell
    # whose nearest corner is in the tube has all corners valued
    cover = march_radius + voxel * np.sqrt(3.0)
    keep = d0 <= cover
    bi, bj, bk, centers, d0 = bi[keep], bj[keep], bk[keep], centers[keep], d0[keep]

    # distance-weighted mean of signed plane distances to the neighbors;
    # values are only needed where cells can be marched
    k = min(params.distance_neighbors, len(pts))
    dist, nearest = tree.query(centers, k=k, workers=-1)
    if k == 1:
        dist = dist[:, None]
        nearest = nearest[:, None]
    diff = centers[:, None, :] - pts[nearest]
    plane_d = np.einsum("vkj,vkj->vk", diff, normals[nearest])
    w = 1.0 / (dist + 0.5 * voxel)
    signed = np.einsum("vk,vk->v", plane_d, w) / w.sum(axis=1)
    signed = np.clip(signed, -trunc, trunc)

    samples = np.full((nx, ny, nz), trunc, dtype=np.float64)
    samples[bi, bj, bk] = signed

    # march only cells whose corners all sit inside the tube, so the surface
    # ends at the scan rim instead of rolling around it
    near = np.zeros((nx, ny, nz), dtype=bool)
    near[bi, bj, bk] = d0 <= march_radius
    b = near
    cell_ok = (b[:-1, :-1, :-1] & b[1:, :-1, :-1] & b[1:, 1:, :-1] & b[:-1, 1:, :-1]
               & b[:-1, :-1, 1:] & b[1:, :-1, 1:] & b[1:, 1:, 1:] & b[:-1, 1:, 1:])
    vol = ScalarVolume((nx, ny, nz), (voxel, voxel, voxel), origin, samples)
    mesh = _marching_cubes_impl(vol, 0.0, cell_mask=cell_ok)
    if mesh.n_triangles == 0:
        raise ReconstructionError("reconstruction produced no surface")
    # pinholes at sampling gaps would break collision tests downstream
    return fill_small_holes(mesh, max_rounds=2)


def fill_small_holes(mesh: TriMesh, max_edges: int = 24, max_rounds: int = 4) -> TriMesh:
    """Fan-fill boundary loops of up to max_edges edges.

    Closes pinhole tears (sampling gaps) while leaving real scan rims,
    which form far longer loops, open."""
    for _ in range(max_rounds):
        filled = _fill_holes_once(mesh, max_edges)
        if filled is mesh:
            break
        mesh = filled
    return mesh


def _fill_holes_once(mesh: TriMesh, max_edges: int) -> TriMesh:
    tri = mesh.triangles.astype(np.int64)
    if len(tri) == 0:
        return mesh
    directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    nv = mesh.n_vertices
    fwd = np.sort(directed[:, 0] * nv + directed[:, 1])
    rev = directed[:, 1] * nv + directed[:, 0]
    pos = np.searchsorted(fwd, rev)
    pos = np.clip(pos, 0, len(fwd) - 1)
    has_twin = fwd[pos] == rev
    b = directed[~has_twin]
    boundary = [(int(u), int(v)) for u, v in b]
    if not boundary:
        return mesh
    # edge-based walk: loops sharing a pinch vertex stay traversable
    out_edges = {}
    for u, v in boundary:
        out_edges.setdefault(u, []).append(v)

    def exists(e):
        k = e[0] * nv + e[1]
        p = np.searchsorted(fwd, k)
        return p < len(fwd) and fwd[p] == k

    used = set()
    added = set()
    new_tris = []
    for start in boundary:
        if start in used:
            continue
        loop = [start[0]]
        edge = start
        path = [edge]
        ok = True
        while True:
            loop.append(edge[1])
            nxt = None
            for cand in out_edges.get(edge[1], ()):
                if (edge[1], cand) not in used and (edge[1], cand) not in path:
                    nxt = (edge[1], cand)
                    break
            if edge[1] == start[0]:
                break
            if nxt is None or len(loop) > max_edges:
                ok = False
                break
            edge = nxt
            path.append(edge)
        ring = loop[:-1]
        if not ok or len(ring) < 3 or loop[-1] != start[0] or len(set(ring)) != len(ring):
            continue
        # the fan is manifold-safe only if its interior edges are all new
        fan = [(ring[0], ring[i + 1], ring[i]) for i in range(1, len(ring) - 1)]
        fan_edges = {e for t in fan for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
        interior = fan_edges - {(v2, v1) for v1, v2 in path}
        if any(exists(e) or e in added or e[::-1] in added for e in interior):
            continue
        used.update(path)
        added.update(interior)
        new_tris.extend(fan)
    if not new_tris:
        return mesh
    return TriMesh(mesh.vertices,
                   np.vstack([mesh.triangles, np.asarray(new_tris, dtype=np.int64)]))


# ---------------------------------------------------------------------------
# quadric edge collapse decimation

@dataclass(frozen=True)
class DecimationParams:
    per_iteration_fraction: float = 0.10
    target_triangles: int | None = None   # None -> initial count // 10

    def __post_init__(self):
        if not (0.0 < self.per_iteration_fraction < 1.0):
            raise ValueError("fraction must be in (0, 1)")
        if self.target_triangles is not None and self.target_triangles < 4:
            raise ValueError("target must be at least 4 triangles")


@dataclass
class RoundStats:
    index: int
    collapses: int
    triangles_before: int
    round_target: int
    triangles_after: int
    max_vertex_error_mm: float | None = None


@dataclass
class DecimationRun:
    mesh: TriMesh
    rounds: list


def _triangle_quadrics(verts, tris):
    """Area-weighted fundamental quadrics, 10 packed upper-triangle terms."""
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    n = np.cross(b - a, c - a)
    area2 = np.linalg.norm(n, axis=1)
    keep = area2 > 1e-300
    n = np.where(keep[:, None], n / np.where(area2 == 0, 1.0, area2)[:, None], 0.0)
    w = area2 / 2.0
    d = -np.einsum("ij,ij->i", n, a)
    p = np.column_stack([n, d])               # (T, 4) plane coefficients
    q = np.empty((len(tris), 10))
    slot = 0
    for i in range(4):
        for j in range(i, 4):
            q[:, slot] = w * p[:, i] * p[:, j]
            slot += 1
    return q


_Q_IDX = {}
_slot = 0
for _i in range(4):
    for _j in range(_i, 4):
        _Q_IDX[(_i, _j)] = _slot
        _slot += 1


def _edge_costs(Q, verts, eu, ev):
    """Optimal collapse placement and cost for each edge (vectorized).

    Solves the 3x3 quadric system when its estimated condition number is
    below 1e6, otherwise picks the best of midpoint and both endpoints.
    """
    q = Q[eu] + Q[ev]
    ix = _Q_IDX
    a00, a01, a02, a03 = q[:, ix[0, 0]], q[:, ix[0, 1]], q[:, ix[0, 2]], q[:, ix[0, 3]]
    a11, a12, a13 = q[:, ix[1, 1]], q[:, ix[1, 2]], q[:, ix[1, 3]]
    a22, a23 = q[:, ix[2, 2]], q[:, ix[2, 3]]

    # adjugate of the symmetric 3x3 system matrix
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    c11 = a00 * a22 - a02 * a02
    c12 = a01 * a02 - a00 * a12
    c22 = a00 * a11 - a01 * a01
    det = a00 * c00 + a01 * c01 + a02 * c02

    norm_a = np.sqrt(a00**2 + a11**2 + a22**2 + 2 * (a01**2 + a02**2 + a12**2))
    norm_adj = np.sqrt(c00**2 + c11**2 + c22**2 + 2 * (c01**2 + c02**2 + c12**2))
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = norm_a * norm_adj / np.abs(det)
    solvable = np.isfinite(cond) & (cond < 1e6)

    bx, by, bz = -a03, -a13, -a23
    safe_det = np.where(det == 0, 1.0, det)
    px = (c00 * bx + c01 * by + c02 * bz) / safe_det
    py = (c01 * bx + c11 * by + c12 * bz) / safe_det
    pz = (c02 * bx + c12 * by + c22 * bz) / safe_det
    p_opt = np.column_stack([px, py, pz])

    def qform(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        return (a00 * x * x + a11 * y * y + a22 * z * z
                + 2 * (a01 * x * y + a02 * x * z + a12 * y * z)
                + 2 * (a03 * x + a13 * y + a23 * z) + q[:, ix[3, 3]])

    p = p_opt.copy()
    cost = qform(p_opt)
    fb = np.nonzero(~solvable)[0]
    if len(fb):
        pu = verts[eu[fb]]
        pv = verts[ev[fb]]
        pm = 0.5 * (pu + pv)
        cand = np.stack([pm, pu, pv], axis=1)                   # (F, 3, 3)
        cc = np.stack([_qform_rows(q, fb, pm), _qform_rows(q, fb, pu),
                       _qform_rows(q, fb, pv)], axis=1)
        best = np.argmin(cc, axis=1)
        p[fb] = cand[np.arange(len(fb)), best]
        cost[fb] = cc[np.arange(len(fb)), best]
    return p, np.maximum(cost, 0.0)


def _qform_rows(q, rows, p):
    ix = _Q_IDX
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    qq = q[rows]
    return (qq[:, ix[0, 0]] * x * x + qq[:, ix[1, 1]] * y * y + qq[:, ix[2, 2]] * z * z
            + 2 * (qq[:, ix[0, 1]] * x * y + qq[:, ix[0, 2]] * x * z + qq[:, ix[1, 2]] * y * z)
            + 2 * (qq[:, ix[0, 3]] * x + qq[:, ix[1, 3]] * y + qq[:, ix[2, 3]] * z)
            + qq[:, ix[3, 3]])


def _vertex_tri_csr(tris, n_verts):
    """CSR adjacency vertex -> incident triangle ids."""
    flat = tris.ravel()
    order = np.argsort(flat, kind="stable")
    tri_ids = order // 3
    counts = np.bincount(flat, minlength=n_verts)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return tri_ids, offsets


def _ranges(starts, lengths):
    """Concatenated arange(starts[i], starts[i]+lengths[i]) plus owner ids."""
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    owners = np.repeat(np.arange(len(starts)), lengths)
    ends = np.cumsum(lengths)
    within = np.arange(total) - np.repeat(ends - lengths, lengths)
    return np.repeat(starts, lengths) + within, owners


def _decimate_rounds(mesh: TriMesh, params: DecimationParams, track_error: bool):
    verts = mesh.vertices.copy()
    tris = mesh.triangles.astype(np.int64).copy()
    n_verts = len(verts)
    initial = len(tris)
    target = params.target_triangles if params.target_triangles is not None else initial // 10
    frac = params.per_iteration_fraction

    rounds = []
    if initial <= target:
        return DecimationRun(mesh, rounds)

    Q = np.zeros((n_verts, 10))
    tq = _triangle_quadrics(verts, tris)
    for k in range(3):
        np.add.at(Q, tris[:, k], tq)

    # boundary constraint planes keep open rims in place
    e_all = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    ekeys, ecounts = np.unique(e_all[:, 0] * n_verts + e_all[:, 1], return_counts=True)
    bkeys = ekeys[ecounts == 1]
    if len(bkeys):
        bu = bkeys // n_verts
        bv = bkeys % n_verts
        edge_vec = verts[bv] - verts[bu]
        # plane through the edge, perpendicular-ish to the surface
        ref = np.zeros_like(edge_vec)
        ref[:, np.argmin(np.abs(edge_vec).mean(axis=0))] = 1.0
        n = np.cross(edge_vec, ref)
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        n = n / np.where(ln == 0, 1.0, ln)
        w = 100.0 * np.einsum("ij,ij->i", edge_vec, edge_vec)
        d = -np.einsum("ij,ij->i", n, verts[bu])
        p = np.column_stack([n, d])
        bq = np.empty((len(bkeys), 10))
        slot = 0
        for i in range(4):
            for j in range(i, 4):
                bq[:, slot] = w * p[:, i] * p[:, j]
                slot += 1
        np.add.at(Q, bu, bq)
        np.add.at(Q, bv, bq)

    tri_count = initial
    moved_mask = np.zeros(n_verts, dtype=bool)
    mesh_ref = None
    if track_error:
        mesh_ref = _TriangleIndex(mesh)

    round_idx = 0
    while tri_count > target:
        round_idx += 1
        before = tri_count
        round_target = before - int(np.floor(before * frac))
        collapsed_this_round = 0
        stalled = False

        while tri_count > round_target:
            need = tri_count - round_target
            n_collapsed = _collapse_batch(verts, tris, Q, n_verts, need, moved_mask)
            if n_collapsed == 0:
                stalled = True
                break
            tris = tris[~np.any(tris[:, [0, 1, 2]] == tris[:, [1, 2, 0]], axis=1)]
            tri_count = len(tris)
            collapsed_this_round += n_collapsed

        err = None
        if track_error and np.any(moved_mask):
            err = float(np.max(mesh_ref.distances(verts[moved_mask])))
        rounds.append(RoundStats(round_idx, collapsed_this_round, before,
                                 round_target, tri_count, err))
        if stalled:
            result = _compact(verts, tris)
            raise DecimationError(
                f"stuck at {tri_count} triangles (target {target}): remaining edges locked",
                mesh=result, rounds=rounds)

    return DecimationRun(_compact(verts, tris), rounds)


def _collapse_batch(verts, tris, Q, n_verts, need, moved_mask):
    """One vertex-disjoint collapse pass, cheapest edges first.

    Runs selection waves so that edges failing the validity checks do not
    keep shadowing their neighborhoods. Mutates verts/Q in place and remaps
    tris; the caller drops the degenerated triangles. Returns the number of
    collapses applied.
    """
    e_all = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    keys, counts = np.unique(e_all[:, 0] * n_verts + e_all[:, 1], return_counts=True)
    eu_full = (keys // n_verts).astype(np.int64)
    ev_full = (keys % n_verts).astype(np.int64)

    unlocked = counts <= 2
    eu, ev, tri_counts = eu_full[unlocked], ev_full[unlocked], counts[unlocked]
    if len(eu) == 0:
        return 0

    pos, cost = _edge_costs(Q, verts, eu, ev)
    # only the cheapest candidates can be collapsed this pass; avoid a full sort
    pool = min(len(eu), max(4 * need + 4096, 16384))
    if pool < len(eu):
        part = np.argpartition(cost, pool - 1)[:pool]
        order = part[np.argsort(cost[part], kind="stable")]
    else:
        order = np.argsort(cost, kind="stable")
    eu, ev, pos, tri_counts = eu[order], ev[order], pos[order], tri_counts[order]

    # the link condition needs adjacency over all edges, locked included
    adjacency = _neighbor_csr(eu_full, ev_full, n_verts)
    tri_csr = _vertex_tri_csr(tris, n_verts)

    blocked = np.zeros(n_verts, dtype=bool)
    tried = np.zeros(len(eu), dtype=bool)
    acc_u, acc_v, acc_p = [], [], []
    removed = 0
    while removed < need:
        avail = np.nonzero(~tried & ~blocked[eu] & ~blocked[ev])[0]
        if len(avail) == 0:
            break
        # cheapest-first vertex-disjoint set: take an edge when it is the
        # first appearance of both endpoints in cost order
        su_a, sv_a = eu[avail], ev[avail]
        first = np.full(n_verts, len(avail), dtype=np.int64)
        rank = np.arange(len(avail))
        np.minimum.at(first, su_a, rank)
        np.minimum.at(first, sv_a, rank)
        sel = avail[(first[su_a] == rank) & (first[sv_a] == rank)]

        est = np.cumsum(tri_counts[sel])
        cut = int(np.searchsorted(est, int(1.5 * (need - removed))) + 1)
        sel = sel[:cut]
        tried[sel] = True

        su, sv, sp, scount = eu[sel], ev[sel], pos[sel], tri_counts[sel]
        valid = _link_condition(adjacency, n_verts, su, sv, scount)
        valid &= _flip_check(verts, tris, tri_csr, su, sv, sp)
        good = np.nonzero(valid)[0]
        if len(good) == 0:
            continue
        rem = np.cumsum(scount[good])
        take = int(np.searchsorted(rem, need - removed) + 1)
        good = good[:take]
        acc_u.append(su[good])
        acc_v.append(sv[good])
        acc_p.append(sp[good])
        blocked[su[good]] = True
        blocked[sv[good]] = True
        removed += int(scount[good].sum())

    if not acc_u:
        return 0
    su = np.concatenate(acc_u)
    sv = np.concatenate(acc_v)
    sp = np.vstack(acc_p)
    verts[su] = sp
    Q[su] += Q[sv]
    moved_mask[su] = True
    remap = np.arange(n_verts)
    remap[sv] = su
    tris[:] = remap[tris]
    return len(su)


def _neighbor_csr(eu, ev, n_verts):
    src = np.concatenate([eu, ev])
    dst = np.concatenate([ev, eu])
    keys = np.sort(src * n_verts + dst)
    src_s = keys // n_verts
    dst_s = keys % n_verts
    offsets = np.searchsorted(src_s, np.arange(n_verts + 1))
    return keys, dst_s, offsets


def _link_condition(adjacency, n_verts, su, sv, scount):
    """|N(u) & N(v)| must equal the number of triangles on the edge."""
    keys_sorted, dst_s, offsets = adjacency

    starts = offsets[su]
    lens = offsets[su + 1] - starts
    idx, owner = _ranges(starts, lens)
    w = dst_s[idx]
    probe = sv[owner] * n_verts + w
    loc = np.searchsorted(keys_sorted, probe)
    loc = np.clip(loc, 0, len(keys_sorted) - 1)
    found = keys_sorted[loc] == probe
    common = np.bincount(owner, weights=found, minlength=len(su))
    return common == scount


def _flip_check(verts, tris, tri_csr, su, sv, sp):
    """Reject collapses that invert or flatten any surviving incident face."""
    tri_ids, offsets = tri_csr
    out = np.ones(len(su), dtype=bool)
    for endpoints in (su, sv):
        starts = offsets[endpoints]
        lens = offsets[endpoints + 1] - starts
        idx, owner = _ranges(starts, lens)
        t_ids = tri_ids[idx]
        cand = tris[t_ids]                                   # (M, 3)
        u_rep = su[owner]
        v_rep = sv[owner]
        has_u = np.any(cand == u_rep[:, None], axis=1)
        has_v = np.any(cand == v_rep[:, None], axis=1)
        survives = ~(has_u & has_v)                          # shared faces vanish

        a, b, c = verts[cand[:, 0]], verts[cand[:, 1]], verts[cand[:, 2]]
        n_before = np.cross(b - a, c - a)
        new = sp[owner]
        rep = (cand == u_rep[:, None]) | (cand == v_rep[:, None])
        a2 = np.where(rep[:, 0, None], new, a)
        b2 = np.where(rep[:, 1, None], new, b)
        c2 = np.where(rep[:, 2, None], new, c)
        n_after = np.cross(b2 - a2, c2 - a2)
        dot = np.einsum("ij,ij->i", n_before, n_after)
        area_after = np.linalg.norm(n_after, axis=1)
        bad = survives & ((dot <= 0) | (area_after < 1e-12))
        if np.any(bad):
            bad_owner = np.unique(owner[bad])
            out[bad_owner] = False
    return out


def _compact(verts, tris):
    used, inv = np.unique(tris, return_inverse=True)
    return TriMesh(verts[used], inv.reshape(-1, 3).astype(np.int32))


def decimate_detailed(mesh: TriMesh, params: DecimationParams = DecimationParams(),
                      track_error: bool = False) -> DecimationRun:
    return _decimate_rounds(mesh, params, track_error)


def decimate(mesh: TriMesh, params: DecimationParams = DecimationParams()) -> TriMesh:
    """Iterative quadric edge collapse, each round retiring the configured
    fraction of the current triangle count, until the target is reached."""
    return decimate_detailed(mesh, params).mesh


def expected_rounds(initial: int, target: int, fraction: float = 0.10) -> int:
    """Closed-form round count of the geometric schedule."""
    import math
    if initial <= target:
        return 0
    return math.ceil(math.log(target / initial) / math.log(1.0 - fraction))


# ---------------------------------------------------------------------------
# point-to-mesh distance and Hausdorff quality

class _TriangleIndex:
    """Nearest-triangle queries via a centroid KD-tree with radius guarantees."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        corners = mesh.triangle_corners()
        self.centroids = corners.mean(axis=1)
        self.radii = np.linalg.norm(corners - self.centroids[:, None, :], axis=2).max(axis=1)
        self.max_radius = float(self.radii.max()) if len(self.radii) else 0.0
        self.tree = cKDTree(self.centroids)
        self.corners = corners

    def distances(self, points, chunk: int = 20000) -> np.ndarray:
        from .geometry import _point_tri_closest
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(points))
        for s in range(0, len(points), chunk):
            p = points[s:s + chunk]
            d0, _ = self.tree.query(p, k=1, workers=-1)
            radii = d0 + self.max_radius + 1e-9
            cand = self.tree.query_ball_point(p, radii, workers=-1)
            lens = np.array([len(c) for c in cand])
            owner = np.repeat(np.arange(len(p)), lens)
            tri_ids = np.concatenate(cand) if lens.sum() else np.zeros(0, dtype=int)
            d, _ = _point_tri_closest(p[owner], self.corners[tri_ids])
            best = np.full(len(p), np.inf)
            np.minimum.at(best, owner, d)
            out[s:s + chunk] = best
        return out


def point_mesh_distances(points, mesh: TriMesh) -> np.ndarray:
    """Exact distance from each point to the closed mesh surface."""
    return _TriangleIndex(mesh).distances(points)


def sample_surface(mesh: TriMesh, density_per_mm2: float, seed: int = 0) -> np.ndarray:
    """Area-proportional random samples on the mesh surface."""
    corners = mesh.triangle_corners()
    areas = np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0],
                                    corners[:, 2] - corners[:, 0]), axis=1) / 2.0
    rng = np.random.default_rng(seed)
    counts = rng.poisson(np.maximum(areas * density_per_mm2, 0.0))
    counts = np.maximum(counts, 1)
    owner = np.repeat(np.arange(len(corners)), counts)
    u = rng.random(len(owner))
    v = rng.random(len(owner))
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    c = corners[owner]
    return c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + v[:, None] * (c[:, 2] - c[:, 0])


def hausdorff_one_sided(source: TriMesh, target: TriMesh,
                        density_per_mm2: float = 1.0, seed: int = 0) -> float:
    """Sampled one-sided Hausdorff distance from source surface to target."""
    samples = np.vstack([source.vertices, sample_surface(source, density_per_mm2, seed)])
    return float(point_mesh_distances(samples, target).max())


@dataclass(frozen=True, eq=False)
class QualityMap:
    """Per-vertex distance to the reference scan, with Fig.-style bins."""

    quality_mm: np.ndarray
    summary: MetricsReport
    bin_edges_mm: tuple = QUALITY_BIN_EDGES_MM
    sampled_summary: MetricsReport | None = None

    def bin_indices(self) -> np.ndarray:
        return np.searchsorted(np.asarray(self.bin_edges_mm), self.quality_mm, side="right")

    def bin_counts(self) -> list:
        return np.bincount(self.bin_indices(), minlength=len(self.bin_edges_mm) + 1).tolist()

    def colors(self) -> np.ndarray:
        return QUALITY_BIN_COLORS[self.bin_indices()]


def quality_map(mesh: TriMesh, reference: PointCloud,
                sample_density: float | None = None, seed: int = 0) -> QualityMap:
    """Distance from every mesh vertex to its nearest reference point.

    sample_density (samples/mm^2) optionally adds a face-sampled metrics
    report for denser coverage diagnostics; the per-vertex data stays the
    authoritative summary source.
    """
    if len(reference) == 0:
        raise ValueError("empty reference cloud")
    if mesh.n_vertices == 0:
        raise ValueError("empty mesh")
    tree = cKDTree(reference.points)
    q, _ = tree.query(mesh.vertices, k=1, workers=-1)
    summary = metrics(q)
    sampled = None
    if sample_density is not None:
        pts = sample_surface(mesh, sample_density, seed)
        sq, _ = tree.query(pts, k=1, workers=-1)
        sampled = metrics(sq)
    return QualityMap(q, summary, QUALITY_BIN_EDGES_MM, sampled)


def filter_by_quality(mesh: TriMesh, qmap: QualityMap, k: float = 3.0) -> TriMesh:
    """Drop vertices whose quality exceeds k * RMSE plus their faces.

    This removes geometry the reconstruction fabricated away from the
    measured points (closed gaps, extrapolated rims)."""
    if len(qmap.quality_mm) != mesh.n_vertices:
        raise ValueError("quality map does not match mesh")
    cutoff = k * qmap.summary.rmse_mm
    keep = qmap.quality_mm <= cutoff
    if not np.any(keep):
        raise EmptyFilterError(f"quality filter at {cutoff:.3f} mm removed every vertex")
    tri_keep = np.all(keep[mesh.triangles], axis=1)
    tris = mesh.triangles[tri_keep]
    if len(tris) == 0:
        raise EmptyFilterError(f"quality filter at {cutoff:.3f} mm removed every face")
    return _compact(mesh.vertices.copy(), tris.astype(np.int64))


def export_quality_ply(path, mesh: TriMesh, qmap: QualityMap, binary: bool = True) -> None:
    from .ply import save_mesh
    save_mesh(path, mesh, binary=binary,
              vertex_quality=qmap.quality_mm, vertex_colors=qmap.colors())
