"""Synthetic multi-static depth-camera rig.

Renders MKv2-like depth frames from triangle meshes, unprojects them to
point clouds, registers camera poses from known correspondences, and merges
calibrated frames into a single world-frame cloud with table removal.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PointCloud, RigidTransform, TriMesh


class CalibrationError(ValueError):
    pass


class EmptyScanError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    hfov_deg: float | None = None
    vfov_deg: float | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @staticmethod
    def from_fov(width: int, height: int, hfov_deg: float, vfov_deg: float,
                 cx: float | None = None, cy: float | None = None) -> "CameraIntrinsics":
        fx = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        fy = (height / 2.0) / np.tan(np.radians(vfov_deg) / 2.0)
        # pixel centers at integer coordinates
        cx = (width - 1) / 2.0 if cx is None else cx
        cy = (height - 1) / 2.0 if cy is None else cy
        return CameraIntrinsics(width, height, float(fx), float(fy), cx, cy,
                                hfov_deg, vfov_deg)

    @staticmethod
    def kinect_v2() -> "CameraIntrinsics":
        """512x424 at 70 deg horizontal / 60 deg vertical field of view."""
        return CameraIntrinsics.from_fov(512, 424, 70.0, 60.0)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """uint16 depth grid, millimeters along the optical axis, 0 = no return."""

    intrinsics: CameraIntrinsics
    depths: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depths)
        if d.dtype != np.uint16:
            raise ValueError("depths must be uint16 millimeters")
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth grid does not match intrinsics")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "depths", d)

    @property
    def n_returns(self) -> int:
        return int(np.count_nonzero(self.depths))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """camera frame -> world frame transform."""

    camera_id: str
    pose: RigidTransform

    @property
    def origin(self) -> np.ndarray:
        return self.pose.translation


@dataclass(frozen=True)
class NoiseModel:
    """Depth error grows with range and toward the image periphery."""

    sigma_base_mm: float = 1.0
    sigma_per_meter_mm: float = 1.5
    edge_falloff: float = 1.5

    def __post_init__(self):
        if self.sigma_base_mm < 0 or self.sigma_per_meter_mm < 0 or self.edge_falloff < 0:
            raise ValueError("noise parameters must be non-negative")

    def sigma(self, depth_mm, edge_factor):
        return (self.sigma_base_mm + self.sigma_per_meter_mm * depth_mm / 1000.0) * edge_factor

    def scaled(self, k: float) -> "NoiseModel":
        return NoiseModel(self.sigma_base_mm * k, self.sigma_per_meter_mm * k,
                          self.edge_falloff)


@dataclass(frozen=True)
class TableSliceParams:
    z_cut_mm: float
    keep_above: bool = True

    def __post_init__(self):
        if not np.isfinite(self.z_cut_mm):
            raise ValueError("z_cut must be finite")


def edge_factor_grid(intr: CameraIntrinsics, falloff: float) -> np.ndarray:
    """Multiplier rising linearly from 1.0 at image center to `falloff` at corners."""
    u = np.arange(intr.width) - (intr.width - 1) / 2.0
    v = np.arange(intr.height) - (intr.height - 1) / 2.0
    r = np.sqrt(u[None, :] ** 2 + v[:, None] ** 2)
    r_corner = np.sqrt(((intr.width - 1) / 2.0) ** 2 + ((intr.height - 1) / 2.0) ** 2)
    return 1.0 + (falloff - 1.0) * r / r_corner


_NEAR_MM = 1.0


def render_depth(scene_mesh: TriMesh, pose: CameraPose, intr: CameraIntrinsics,
                 noise: NoiseModel | None = None, seed: int = 0) -> DepthFrame:
    """Pinhole nearest-hit depth of the scene, with range/edge-dependent
    Gaussian noise quantized to 1 mm. Misses stay 0.

    Implemented as a perspective-correct z-buffer over the projected
    triangles; interpolating 1/z in screen space makes the per-pixel result
    identical to casting the pixel ray against the nearest triangle.
    """
    w, h = intr.width, intr.height
    zbuf = np.full(w * h, np.inf)
    if scene_mesh.n_triangles > 0:
        cam = pose.pose.inverse().apply(scene_mesh.vertices)
        tris = scene_mesh.triangles
        z = cam[:, 2]
        front = np.all(z[tris] > _NEAR_MM, axis=1)
        tris = tris[front]
        if len(tris):
            u = cam[:, 0] * intr.fx / z + intr.cx
            v = cam[:, 1] * intr.fy / z + intr.cy
            inv_z = 1.0 / z
            pu, pv, pw = u[tris], v[tris], inv_z[tris]        # (T, 3)
            _rasterize(zbuf, w, h, pu, pv, pw)

    hit = np.isfinite(zbuf)
    depth = np.zeros(w * h)
    depth[hit] = zbuf[hit]
    if noise is not None and np.any(hit):
        rng = np.random.default_rng(seed)
        ef = edge_factor_grid(intr, noise.edge_falloff).ravel()
        sigma = noise.sigma(depth[hit], ef[hit])
        depth[hit] += rng.normal(0.0, 1.0, size=int(hit.sum())) * sigma
    grid = np.zeros(w * h, dtype=np.uint16)
    grid[hit] = np.clip(np.round(depth[hit]), 1, 65535).astype(np.uint16)
    return DepthFrame(intr, grid.reshape(h, w))


def _rasterize(zbuf, w, h, pu, pv, pw):
    """Scatter perspective-correct depth into the flat z-buffer."""
    u_min = np.maximum(np.ceil(pu.min(axis=1)), 0).astype(np.int64)
    u_max = np.minimum(np.floor(pu.max(axis=1)), w - 1).astype(np.int64)
    v_min = np.maximum(np.ceil(pv.min(axis=1)), 0).astype(np.int64)
    v_max = np.minimum(np.floor(pv.max(axis=1)), h - 1).astype(np.int64)
    wu = u_max - u_min + 1
    wv = v_max - v_min + 1
    visible = (wu > 0) & (wv > 0)

    size = np.maximum(wu, wv)
    for lo, hi in ((1, 4), (5, 8), (9, 16), (17, 32), (33, 64)):
        grp = np.nonzero(visible & (size >= lo) & (size <= hi))[0]
        if len(grp):
            _raster_group(zbuf, w, grp, hi, u_min, v_min, wu, wv, pu, pv, pw)
    big = np.nonzero(visible & (size > 64))[0]
    for t in big:
        _raster_group(zbuf, w, np.array([t]), int(size[t]), u_min, v_min, wu, wv, pu, pv, pw)


def _raster_group(zbuf, w, ids, k, u_min, v_min, wu, wv, pu, pv, pw):
    du = np.arange(k)
    uu = u_min[ids, None, None] + du[None, :, None]          # (n, k, 1)
    vv = v_min[ids, None, None] + du[None, None, :]          # (n, 1, k)
    in_box = (uu < u_min[ids, None, None] + wu[ids, None, None]) & \
             (vv < v_min[ids, None, None] + wv[ids, None, None])

    u0, u1, u2 = (pu[ids, i, None, None] for i in range(3))
    v0, v1, v2 = (pv[ids, i, None, None] for i in range(3))
    e0 = (u1 - u0) * (vv - v0) - (v1 - v0) * (uu - u0)
    e1 = (u2 - u1) * (vv - v1) - (v2 - v1) * (uu - u1)
    e2 = (u0 - u2) * (vv - v2) - (v0 - v2) * (uu - u2)
    area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
    pos = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
    neg = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
    inside = in_box & np.where(area >= 0, pos, neg) & (np.abs(area) > 1e-12)

    if not np.any(inside):
        return
    safe_area = np.where(area == 0, 1.0, area)
    l1 = e2 / safe_area
    l2 = e0 / safe_area
    l0 = 1.0 - l1 - l2
    inv_z = (l0 * pw[ids, 0, None, None] + l1 * pw[ids, 1, None, None]
             + l2 * pw[ids, 2, None, None])
    ok = inside & (inv_z > 0)
    if not np.any(ok):
        return
    flat = (vv * w + uu)[ok].astype(np.int64)
    np.minimum.at(zbuf, flat, 1.0 / inv_z[ok])


def unproject(frame: DepthFrame, estimate_normals: bool = True,
              smooth_radius: int = 2, edge_jump_mm: float = 30.0) -> PointCloud:
    """Back-project nonzero pixels to camera-frame points.

    Normals come from central differences over the depth-grid neighborhood;
    the grid is first smoothed edge-preservingly (neighbors jumping more
    than edge_jump_mm are treated as occlusion boundaries), since raw
    per-pixel depth noise exceeds the pixel-to-pixel signal. Point positions
    are never smoothed.
    """
    intr = frame.intrinsics
    d = frame.depths.astype(np.float64)
    vv, uu = np.nonzero(d)
    if len(vv) == 0:
        return PointCloud(np.zeros((0, 3)))
    z = d[vv, uu]
    x = (uu - intr.cx) * z / intr.fx
    y = (vv - intr.cy) * z / intr.fy
    pts = np.column_stack([x, y, z])
    if not estimate_normals:
        return PointCloud(pts)

    zs = _smooth_depth(d, smooth_radius, edge_jump_mm)
    gu = np.arange(intr.width) - intr.cx
    gv = np.arange(intr.height) - intr.cy
    grid = np.full((intr.height, intr.width, 3), np.nan)
    valid = zs > 0
    grid[..., 0] = np.where(valid, gu[None, :] * zs / intr.fx, np.nan)
    grid[..., 1] = np.where(valid, gv[:, None] * zs / intr.fy, np.nan)
    grid[..., 2] = np.where(valid, zs, np.nan)
    du = _grid_gradient(grid, axis=1)
    dv = _grid_gradient(grid, axis=0)
    n = np.cross(dv[vv, uu], du[vv, uu])
    ln = np.linalg.norm(n, axis=1)
    bad = ~np.isfinite(ln) | (ln < 1e-12)
    n[bad] = -pts[bad]
    ln = np.linalg.norm(n, axis=1)
    n /= ln[:, None]
    flip = np.einsum("ij,ij->i", n, pts) > 0       # camera sits at the origin
    n[flip] = -n[flip]
    return PointCloud(pts, n)


def _smooth_depth(d: np.ndarray, radius: int, edge_jump_mm: float) -> np.ndarray:
    """Box-average valid depths, excluding neighbors across depth jumps."""
    if radius <= 0:
        return d.copy()
    h, w = d.shape
    acc = np.zeros_like(d)
    cnt = np.zeros_like(d)
    center_valid = d > 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            yt = slice(max(-dy, 0), h + min(-dy, 0))
            xt = slice(max(-dx, 0), w + min(-dx, 0))
            nb = d[ys, xs]
            ok = (nb > 0) & center_valid[yt, xt] & \
                 (np.abs(nb - d[yt, xt]) <= edge_jump_mm)
            acc[yt, xt] += np.where(ok, nb, 0.0)
            cnt[yt, xt] += ok
    out = np.zeros_like(d)
    have = cnt > 0
    out[have] = acc[have] / cnt[have]
    return out


def _grid_gradient(grid, axis):
    """Per-pixel difference along an image axis; central where both
    neighbors exist, one-sided otherwise, NaN when isolated."""
    plus = np.full_like(grid, np.nan)
    minus = np.full_like(grid, np.nan)
    if axis == 1:
        plus[:, :-1] = grid[:, 1:]
        minus[:, 1:] = grid[:, :-1]
    else:
        plus[:-1, :] = grid[1:, :]
        minus[1:, :] = grid[:-1, :]
    has_p = np.isfinite(plus[..., 0])
    has_m = np.isfinite(minus[..., 0])
    out = np.full_like(grid, np.nan)
    both = has_p & has_m
    out[both] = (plus[both] - minus[both]) / 2.0
    fwd = has_p & ~has_m
    out[fwd] = plus[fwd] - grid[fwd]
    bwd = has_m & ~has_p
    out[bwd] = grid[bwd] - minus[bwd]
    return out


def project(intr: CameraIntrinsics, points) -> np.ndarray:
    """Camera-frame points -> (u, v, depth) pixel coordinates."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    return np.column_stack([p[:, 0] * intr.fx / z + intr.cx,
                            p[:, 1] * intr.fy / z + intr.cy, z])


@dataclass(frozen=True)
class CalibrationResult:
    pose: CameraPose
    residual_rms_mm: float


def calibrate_pose(world_points, camera_points, camera_id: str = "cam") -> CalibrationResult:
    """Least-squares rigid registration over known correspondences
    (cross-covariance SVD), replacing checkerboard processing."""
    w = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    c = np.asarray(camera_points, dtype=np.float64).reshape(-1, 3)
    if len(w) != len(c):
        raise CalibrationError("correspondence lists differ in length")
    if len(w) < 3:
        raise CalibrationError(f"need at least 3 correspondences, got {len(w)}")
    wc = w - w.mean(axis=0)
    cc = c - c.mean(axis=0)
    spread = np.linalg.svd(cc, compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1.0):
        raise CalibrationError("correspondences are collinear; rotation is unconstrained")
    h = cc.T @ wc
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    # round off SVD noise so the transform meets the orthonormality tolerance
    uu, _, vvt = np.linalg.svd(r)
    r = uu @ vvt
    t = w.mean(axis=0) - r @ c.mean(axis=0)
    residual = (c @ r.T + t) - w
    rms = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    return CalibrationResult(CameraPose(camera_id, RigidTransform(r, t)), rms)


def look_at_pose(camera_id: str, position, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose a camera at `position` with its optical axis toward `target`."""
    position = np.asarray(position, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - position
    nf = np.linalg.norm(f)
    if nf < 1e-9:
        raise ValueError("camera position coincides with target")
    f = f / nf
    up = np.asarray(up, dtype=np.float64)
    d = -up + f * np.dot(f, up)
    nd = np.linalg.norm(d)
    if nd < 1e-9:
        # straight-down view: fall back to +Y as the image-up reference
        up = np.array([0.0, 1.0, 0.0])
        d = -up + f * np.dot(f, up)
        nd = np.linalg.norm(d)
    d = d / nd
    r = np.cross(d, f)
    rot = np.column_stack([r, d, f])
    return CameraPose(camera_id, RigidTransform(rot, position))


def merge_scans(frames, slice_params: TableSliceParams,
                estimate_normals: bool = True) -> PointCloud:
    """Unproject every (frame, pose), transform to world, concatenate, then
    slice away the table side of the z plane."""
    if len(frames) == 0:
        raise EmptyScanError("no frames to merge")
    pts_all, nrm_all, org_all = [], [], []
    carry_normals = estimate_normals
    for frame, pose in frames:
        cloud = unproject(frame, estimate_normals=estimate_normals)
        if len(cloud) == 0:
            continue
        p = pose.pose.apply(cloud.points)
        pts_all.append(p)
        if cloud.normals is not None:
            nrm_all.append(pose.pose.apply_vectors(cloud.normals))
        else:
            carry_normals = False
        org_all.append(np.broadcast_to(pose.origin, p.shape))
    if not pts_all:
        raise EmptyScanError("all frames were empty")
    pts = np.vstack(pts_all)
    nrm = np.vstack(nrm_all) if carry_normals and nrm_all else None
    org = np.vstack(org_all)
    if slice_params.keep_above:
        keep = pts[:, 2] >= slice_params.z_cut_mm
    else:
        keep = pts[:, 2] <= slice_params.z_cut_mm
    if not np.any(keep):
        raise EmptyScanError(
            f"table slice at z={slice_params.z_cut_mm} removed every point; check z_cut")
    return PointCloud(pts[keep], None if nrm is None else nrm[keep], org[keep])


# ---------------------------------------------------------------------------
# file formats

_DPF_MAGIC = b"DPF1"


def save_frame(path, frame: DepthFrame) -> None:
    """Bit-exact DPF1: magic, uint32 w/h, float32 fx fy cx cy, uint16 rows."""
    intr = frame.intrinsics
    with open(path, "wb") as f:
        f.write(_DPF_MAGIC)
        f.write(struct.pack("<II", intr.width, intr.height))
        f.write(struct.pack("<ffff", intr.fx, intr.fy, intr.cx, intr.cy))
        f.write(np.ascontiguousarray(frame.depths, dtype="<u2").tobytes())


def load_frame(path) -> DepthFrame:
    raw = Path(path).read_bytes()
    if raw[:4] != _DPF_MAGIC:
        raise ValueError("not a DPF1 depth frame file")
    w, h = struct.unpack_from("<II", raw, 4)
    fx, fy, cx, cy = struct.unpack_from("<ffff", raw, 12)
    depths = np.frombuffer(raw, dtype="<u2", count=w * h, offset=28).reshape(h, w)
    return DepthFrame(CameraIntrinsics(w, h, fx, fy, cx, cy), depths.copy())


def save_rig(path, poses) -> None:
    Path(path).write_text(json.dumps([{
        "camera_id": p.camera_id,
        "rotation": [float(v) for v in p.pose.rotation.ravel()],
        "translation_mm": [float(v) for v in p.pose.translation],
    } for p in poses], indent=2))


def load_rig(path) -> list:
    rows = json.loads(Path(path).read_text())
    return [CameraPose(r["camera_id"], RigidTransform(
        np.asarray(r["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(r["translation_mm"], dtype=np.float64))) for r in rows]
