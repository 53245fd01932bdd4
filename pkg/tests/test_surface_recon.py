import numpy as np
import pytest

from rtroom.geometry import PointCloud, RigidTransform
from rtroom.surface import (ReconParams, ReconstructionError, estimate_normals,
                            filter_by_quality, quality_map, reconstruct)


def sphere_cloud(n=100_000, radius=50.0, seed=0, with_normals=True):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = v * radius
    return PointCloud(pts, v if with_normals else None)


@pytest.fixture(scope="module")
def sphere_recon():
    cloud = sphere_cloud()
    mesh = reconstruct(cloud, ReconParams(grid_resolution=256))
    return cloud, mesh


class TestReconstruct:
    def test_sphere_rmse_within_budget(self, sphere_recon):
        cloud, mesh = sphere_recon
        q = quality_map(mesh, cloud)
        assert q.summary.rmse_mm <= 1.4

    def test_sphere_radius_accuracy(self, sphere_recon):
        _, mesh = sphere_recon
        r = np.linalg.norm(mesh.vertices, axis=1)
        assert abs(np.mean(r) - 50.0) < 0.5
        assert np.abs(r - 50.0).max() < 2.0

    def test_sphere_nearly_watertight(self, sphere_recon):
        # random sampling leaves grid-scale gaps; pinhole filling closes all
        # loops it can close manifold-safely, leaving at most a few edges
        # out of ~900k (data does not exist at those gaps)
        _, mesh = sphere_recon
        assert mesh.boundary_edge_count() <= 12

    def test_duplicated_cloud_same_mesh(self):
        cloud = sphere_cloud(n=20_000)
        doubled = PointCloud(np.vstack([cloud.points, cloud.points]),
                             np.vstack([cloud.normals, cloud.normals]))
        m0 = reconstruct(cloud, ReconParams(grid_resolution=96))
        m1 = reconstruct(doubled, ReconParams(grid_resolution=96))
        assert m0.n_vertices == m1.n_vertices
        np.testing.assert_allclose(m0.vertices, m1.vertices, atol=1e-9)
        np.testing.assert_array_equal(m0.triangles, m1.triangles)

    def test_too_few_points(self):
        with pytest.raises(ReconstructionError):
            reconstruct(sphere_cloud(n=50), ReconParams(grid_resolution=64))

    def test_rigid_equivariance_within_voxel(self):
        from rtroom.surface import point_mesh_distances
        cloud = sphere_cloud(n=30_000, seed=2)
        params = ReconParams(grid_resolution=128)
        t = RigidTransform(np.eye(3), np.array([13.3, -7.7, 4.1]))
        m_then = reconstruct(cloud, params).transformed(t)
        from rtroom.geometry import transform_points
        m_of = reconstruct(transform_points(t, cloud), params)
        voxel = 100.0 / 128 * 1.05  # cloud extent over grid, small slack
        d = point_mesh_distances(m_of.vertices, m_then)
        assert d.max() < voxel

    def test_normals_estimated_when_absent(self):
        cloud = sphere_cloud(n=20_000, with_normals=False)
        mesh = reconstruct(cloud, ReconParams(grid_resolution=96))
        q = quality_map(mesh, cloud)
        assert q.summary.rmse_mm < 1.0
        # orientation must be outward (positive signed volume)
        c = mesh.triangle_corners()
        vol6 = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum()
        assert vol6 > 0


class TestEstimateNormals:
    def test_sphere_normals_point_outward(self):
        cloud = sphere_cloud(n=5_000, with_normals=False)
        out = estimate_normals(cloud, 16)
        agreement = np.einsum("ij,ij->i", out.normals, cloud.points / 50.0)
        assert np.quantile(agreement, 0.01) > 0.9

    def test_view_origin_orientation_wins(self):
        # flat patch scanned from +z: normals must face the camera
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.uniform(-50, 50, 2000),
                               rng.uniform(-50, 50, 2000),
                               np.zeros(2000)])
        origins = np.broadcast_to([0.0, 0.0, 700.0], (2000, 3))
        cloud = PointCloud(pts, view_origins=origins)
        out = estimate_normals(cloud, 12)
        assert np.all(out.normals[:, 2] > 0.99)


class TestGapBridging:
    def test_small_hole_closes_and_filter_removes_it(self):
        # sphere with a polar cap hole comparable to the truncation radius
        cloud_full = sphere_cloud(n=80_000, seed=5)
        keep = cloud_full.points[:, 2] < 49.0   # punch a cap around +z pole
        cloud_holed = PointCloud(cloud_full.points[keep], cloud_full.normals[keep])
        params = ReconParams(grid_resolution=128, march_radius_voxels=4.0,
                             truncation_voxels=4.0)
        recon_holed = reconstruct(cloud_holed, params)
        # the bridge: mesh has vertices in the punched region
        polar = recon_holed.vertices[:, 2] > 49.2
        assert polar.sum() > 0, "expected the gap to close"
        q = quality_map(recon_holed, cloud_holed)
        filtered = filter_by_quality(recon_holed, q, k=3.0)
        # fabricated cap trimmed back: compare against unpunched baseline count
        recon_full = reconstruct(cloud_full, params)
        covered = recon_full.vertices[:, 2] <= 49.0
        assert filtered.n_vertices <= recon_full.n_vertices
        assert abs(filtered.n_vertices - covered.sum()) / recon_full.n_vertices < 0.02
