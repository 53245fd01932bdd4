"""Procedural meshes: primitives for machine stand-ins and synthetic
patient phantoms (torso / full mannequin) built from blended signed
distance fields."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def box_mesh(size, center=(0.0, 0.0, 0.0), segments: int = 4) -> TriMesh:
    """Axis-aligned box subdivided into roughly square patches, so that
    distance queries and clearance bounds stay tight."""
    sx, sy, sz = (float(v) for v in size)
    cx, cy, cz = (float(v) for v in center)
    half = np.array([sx, sy, sz]) / 2.0
    verts = []
    tris = []

    def add_face(origin, du, dv, nu, nv):
        base = len(verts)
        for i in range(nu + 1):
            for j in range(nv + 1):
                verts.append(origin + du * (i / nu) + dv * (j / nv))
        for i in range(nu):
            for j in range(nv):
                a = base + i * (nv + 1) + j
                b = a + (nv + 1)
                tris.append([a, b, a + 1])
                tris.append([a + 1, b, b + 1])

    seg = max(int(segments), 1)
    nseg = lambda extent: max(1, int(round(seg * extent / max(sx, sy, sz))))
    o = np.array([cx, cy, cz])
    ex = np.array([sx, 0, 0])
    ey = np.array([0, sy, 0])
    ez = np.array([0, 0, sz])
    add_face(o - half, ex, ey, nseg(sx), nseg(sy))                    # z-
    add_face(o - half + ez, ey, ex, nseg(sy), nseg(sx))               # z+
    add_face(o - half, ey, ez, nseg(sy), nseg(sz))                    # x-
    add_face(o - half + ex, ez, ey, nseg(sz), nseg(sy))               # x+
    add_face(o - half, ez, ex, nseg(sz), nseg(sx))                    # y-
    add_face(o - half + ey, ex, ez, nseg(sx), nseg(sz))               # y+
    v = np.asarray(verts)
    uniq, inv = np.unique(np.round(v, 9), axis=0, return_inverse=True)
    return TriMesh(uniq, inv[np.asarray(tris)])


def cylinder_mesh(radius: float, z0: float, z1: float, segments: int = 32,
                  rings: int = 4, axis: str = "z", center=(0.0, 0.0, 0.0),
                  radius_top: float | None = None) -> TriMesh:
    """Closed cylinder (or frustum when radius_top differs) along an axis."""
    r0 = float(radius)
    r1 = r0 if radius_top is None else float(radius_top)
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    heights = np.linspace(z0, z1, rings + 1)
    verts = []
    for k, hz in enumerate(heights):
        r = r0 + (r1 - r0) * (k / rings)
        for a in ang:
            verts.append([r * np.cos(a), r * np.sin(a), hz])
    tris = []
    for k in range(rings):
        for s in range(segments):
            a = k * segments + s
            b = k * segments + (s + 1) % segments
            c = a + segments
            d = b + segments
            tris.append([a, b, c])
            tris.append([b, d, c])
    bot = len(verts)
    verts.append([0.0, 0.0, z0])
    top = len(verts)
    verts.append([0.0, 0.0, z1])
    for s in range(segments):
        a, b = s, (s + 1) % segments
        tris.append([b, a, bot])
        ta, tb = rings * segments + s, rings * segments + (s + 1) % segments
        tris.append([ta, tb, top])
    v = np.asarray(verts, dtype=np.float64)
    if axis == "y":
        v = v[:, [0, 2, 1]] * np.array([1.0, 1.0, -1.0])
    elif axis == "x":
        v = v[:, [2, 1, 0]] * np.array([1.0, -1.0, 1.0])
    return TriMesh(v + np.asarray(center, dtype=np.float64), np.asarray(tris))


def icosphere_mesh(radius: float, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Geodesic sphere: 20 * 4^n triangles."""
    phi = (1 + 5 ** 0.5) / 2
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        edge_mid = {}
        verts = list(v)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in edge_mid:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                edge_mid[key] = len(verts)
                verts.append(m)
            return edge_mid[key]

        new_f = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_f += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.asarray(verts)
        f = np.asarray(new_f, dtype=np.int64)
    return TriMesh(v * radius + np.asarray(center, dtype=np.float64), f)


def merge_meshes(*meshes: TriMesh) -> TriMesh:
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles.astype(np.int64) + offset)
        offset += m.n_vertices
    return TriMesh(np.vstack(verts), np.vstack(tris))


# ---------------------------------------------------------------------------
# blended-SDF phantoms

def _sd_ellipsoid(p, center, radii):
    """Approximate ellipsoid SDF (exact enough for smooth blending)."""
    q = (p - center) / radii
    k0 = np.linalg.norm(q, axis=1)
    k1 = np.linalg.norm(q / radii, axis=1)
    k1 = np.where(k1 == 0, 1.0, k1)
    return k0 * (k0 - 1.0) / k1


def _sd_capsule(p, a, b, radius):
    a = np.asarray(a, dtype=np.float64)
    ab = np.asarray(b, dtype=np.float64) - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1) - radius


def _smooth_union(d1, d2, k):
    h = np.clip(0.5 + 0.5 * (d2 - d1) / k, 0.0, 1.0)
    return d2 + (d1 - d2) * h - k * h * (1.0 - h)


def torso_sdf(p: np.ndarray) -> np.ndarray:
    """Smooth torso at ~400 mm scale: chest + abdomen ellipsoids and
    shoulder caps blended together. Lying along +Y, back at low z."""
    d = _sd_ellipsoid(p, np.array([0.0, 100.0, 0.0]), np.array([170.0, 150.0, 110.0]))
    d = _smooth_union(d, _sd_ellipsoid(p, np.array([0.0, -60.0, -10.0]),
                                       np.array([150.0, 140.0, 95.0])), 40.0)
    d = _smooth_union(d, _sd_capsule(p, [-120.0, 150.0, 20.0], [120.0, 150.0, 20.0], 62.0), 35.0)
    return d


def mannequin_sdf(p: np.ndarray) -> np.ndarray:
    """Full-body phantom lying along +Y (head toward the gantry), back at
    z = 0 plane, ~1.9 m long."""
    d = _sd_ellipsoid(p, np.array([0.0, 460.0, 110.0]), np.array([170.0, 350.0, 115.0]))   # chest
    d = _smooth_union(d, _sd_ellipsoid(p, np.array([0.0, 60.0, 100.0]),
                                       np.array([160.0, 270.0, 105.0])), 60.0)             # pelvis
    d = _smooth_union(d, _sd_ellipsoid(p, np.array([0.0, 870.0, 120.0]),
                                       np.array([80.0, 105.0, 95.0])), 30.0)               # head
    d = _smooth_union(d, _sd_capsule(p, [0.0, 750.0, 100.0], [0.0, 820.0, 110.0], 45.0), 25.0)  # neck
    for side in (-1.0, 1.0):
        d = _smooth_union(d, _sd_capsule(p, [side * 200.0, 640.0, 100.0],
                                         [side * 230.0, 60.0, 90.0], 45.0), 30.0)          # arm
        d = _smooth_union(d, _sd_capsule(p, [side * 90.0, -110.0, 90.0],
                                         [side * 80.0, -520.0, 80.0], 62.0), 35.0)         # thigh
        d = _smooth_union(d, _sd_capsule(p, [side * 80.0, -520.0, 80.0],
                                         [side * 75.0, -920.0, 65.0], 45.0), 25.0)         # shin
    return d


def mesh_from_sdf(sdf, bounds_lo, bounds_hi, resolution: int) -> TriMesh:
    """Sample an SDF on a regular grid and extract its zero level set."""
    from .surface import ScalarVolume, marching_cubes

    lo = np.asarray(bounds_lo, dtype=np.float64)
    hi = np.asarray(bounds_hi, dtype=np.float64)
    extent = hi - lo
    voxel = float(extent.max()) / resolution
    dims = np.maximum(np.ceil(extent / voxel).astype(int) + 1, 2)
    xs = lo[0] + np.arange(dims[0]) * voxel
    ys = lo[1] + np.arange(dims[1]) * voxel
    zs = lo[2] + np.arange(dims[2]) * voxel
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    samples = sdf(pts).reshape(dims)
    vol = ScalarVolume(tuple(int(v) for v in dims), (voxel, voxel, voxel), lo, samples)
    return marching_cubes(vol, 0.0)


def torso_mesh(resolution: int = 160) -> TriMesh:
    pad = 30.0
    return mesh_from_sdf(torso_sdf,
                         (-250.0 - pad, -260.0 - pad, -130.0 - pad),
                         (250.0 + pad, 310.0 + pad, 130.0 + pad), resolution)


def torso_mesh_with_count(n_triangles: int) -> TriMesh:
    """Torso meshed slightly above the requested count, then trimmed by one
    cheap collapse round to the exact triangle count."""
    from .surface import DecimationParams, decimate

    probe_res = 80
    probe = torso_mesh(probe_res).n_triangles
    res = int(np.ceil(probe_res * np.sqrt(1.03 * n_triangles / probe)))
    mesh = torso_mesh(res)
    while mesh.n_triangles < n_triangles:
        res = int(res * 1.05) + 1
        mesh = torso_mesh(res)
    if mesh.n_triangles == n_triangles:
        return mesh
    frac = (mesh.n_triangles - n_triangles) / mesh.n_triangles
    return decimate(mesh, DecimationParams(per_iteration_fraction=frac,
                                           target_triangles=n_triangles))


def mannequin_mesh(resolution: int = 128) -> TriMesh:
    pad = 40.0
    return mesh_from_sdf(mannequin_sdf,
                         (-300.0 - pad, -1030.0 - pad, -20.0 - pad),
                         (300.0 + pad, 1030.0 + pad, 240.0 + pad), resolution)


def table_mesh(top_z: float = 0.0) -> TriMesh:
    return box_mesh((700.0, 2300.0, 80.0), center=(0.0, 0.0, top_z - 40.0), segments=6)


def mannequin_scan_scene(resolution: int = 128):
    """The bundled 4-camera scan fixture: mannequin on a table at z = 0,
    two cameras over the upper body and two over the lower body.

    Returns (scene mesh, rig poses, table-slice params, noise model)."""
    from .scan import NoiseModel, TableSliceParams, look_at_pose

    body = mannequin_mesh(resolution)
    scene = merge_meshes(body, table_mesh(0.0))
    rig = [
        look_at_pose("upper_left", (-240.0, 330.0, 1210.0), (0.0, 430.0, 100.0)),
        look_at_pose("upper_right", (240.0, 530.0, 1210.0), (0.0, 430.0, 100.0)),
        look_at_pose("lower_left", (-240.0, -330.0, 1210.0), (0.0, -260.0, 90.0)),
        look_at_pose("lower_right", (240.0, -130.0, 1210.0), (0.0, -260.0, 90.0)),
    ]
    # the cut sits above the table's noise tail (~4 sigma at this standoff)
    return scene, rig, TableSliceParams(z_cut_mm=40.0), NoiseModel()
