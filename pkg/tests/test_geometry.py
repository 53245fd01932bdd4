import numpy as np
import pytest

from rtroom.geometry import (Aabb, GeometryError, PointCloud, RigidTransform,
                             TriMesh, mesh_bounds, point_triangle_distance,
                             rotation_z, transform_points)


def random_rigid(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return RigidTransform(r, rng.uniform(-500, 500, 3))


class TestRigidTransform:
    def test_identity_maps_points_unchanged(self):
        pc = PointCloud([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        out = transform_points(RigidTransform.identity(), pc)
        np.testing.assert_array_equal(out.points, pc.points)

    def test_translation(self):
        pc = PointCloud([[0.0, 0.0, 0.0]])
        out = transform_points(RigidTransform.from_translation([10, 0, 0]), pc)
        np.testing.assert_allclose(out.points, [[10.0, 0.0, 0.0]])

    def test_rotation_90_about_z(self):
        out = RigidTransform.from_rotation(rotation_z(90.0)).apply([1.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-9)

    def test_rejects_reflection(self):
        with pytest.raises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            RigidTransform(np.eye(3) * 1.1, np.zeros(3))

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            t = random_rigid(rng)
            p = rng.uniform(-1000, 1000, (20, 3))
            back = t.inverse().apply(t.apply(p))
            assert np.abs(back - p).max() < 1e-9 * 1000

    def test_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            t = random_rigid(rng)
            p = rng.uniform(-800, 800, (40, 3))
            q = t.apply(p)
            d0 = np.linalg.norm(p[:, None] - p[None, :], axis=2)
            d1 = np.linalg.norm(q[:, None] - q[None, :], axis=2)
            scale = np.maximum(d0, 1.0)
            assert (np.abs(d1 - d0) / scale).max() < 1e-9

    def test_normals_rotate_but_do_not_translate(self):
        pc = PointCloud([[0.0, 0.0, 0.0]], normals=[[1.0, 0.0, 0.0]])
        t = RigidTransform(rotation_z(90.0), [5.0, 5.0, 5.0])
        out = transform_points(t, pc)
        np.testing.assert_allclose(out.normals, [[0.0, 1.0, 0.0]], atol=1e-12)
        np.testing.assert_allclose(out.points, [[5.0, 5.0, 5.0]])


class TestPointCloud:
    def test_rejects_non_unit_normals(self):
        with pytest.raises(GeometryError):
            PointCloud([[0, 0, 0]], normals=[[2.0, 0.0, 0.0]])

    def test_rejects_nan(self):
        with pytest.raises(GeometryError):
            PointCloud([[np.nan, 0, 0]])

    def test_rejects_length_mismatch(self):
        with pytest.raises(GeometryError):
            PointCloud([[0, 0, 0], [1, 1, 1]], normals=[[1.0, 0, 0]])

    def test_arrays_are_read_only(self):
        pc = PointCloud([[0.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            pc.points[0, 0] = 1.0


class TestTriMesh:
    def test_rejects_out_of_range_indices(self):
        with pytest.raises(GeometryError):
            TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
        with pytest.raises(GeometryError):
            TriMesh(np.zeros((3, 3)), [[0, 1, -1]])

    def test_drops_degenerate_triangles(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]
        m = TriMesh(v, [[0, 1, 2], [0, 1, 3], [0, 1, 1]])  # collinear + repeated
        assert m.n_triangles == 1

    def test_bounds(self):
        m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 2, 0]], [[0, 1, 2]])
        b = mesh_bounds(m)
        np.testing.assert_array_equal(b.min, [0, 0, 0])
        np.testing.assert_array_equal(b.max, [1, 2, 0])

    def test_bounds_empty_mesh_errors(self):
        m = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
        with pytest.raises(GeometryError):
            mesh_bounds(m)

    def test_unit_cube_bounds(self):
        from rtroom.shapes import box_mesh
        m = box_mesh((1, 1, 1), center=(0.5, 0.5, 0.5), segments=1)
        b = mesh_bounds(m)
        np.testing.assert_allclose(b.min, [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(b.max, [1, 1, 1], atol=1e-12)

    def test_translated_bounds_equal_bounds_translated(self):
        rng = np.random.default_rng(3)
        v = rng.uniform(-50, 50, (30, 3))
        tris = rng.integers(0, 30, (40, 3))
        keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
        m = TriMesh(v, tris[keep])
        t = RigidTransform.from_translation([10, -20, 30])
        b0 = mesh_bounds(m)
        b1 = mesh_bounds(m.transformed(t))
        np.testing.assert_allclose(b1.min, b0.min + [10, -20, 30], atol=1e-9)
        np.testing.assert_allclose(b1.max, b0.max + [10, -20, 30], atol=1e-9)


class TestAabb:
    def test_min_must_not_exceed_max(self):
        with pytest.raises(GeometryError):
            Aabb([1, 0, 0], [0, 1, 1])


class TestPointTriangleDistance:
    TRI = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    def test_point_inside_on_plane_is_zero(self):
        assert point_triangle_distance([0.2, 0.2, 0.0], self.TRI) == pytest.approx(0.0, abs=1e-15)

    def test_point_above_interior(self):
        assert point_triangle_distance([0.0, 0.0, 1.0], self.TRI) == pytest.approx(1.0)

    def test_point_beyond_vertex(self):
        # brute-force oracle: dense barycentric sampling of the triangle
        p = np.array([3.0, -1.0, 2.0])
        us, vs = np.meshgrid(np.linspace(0, 1, 400), np.linspace(0, 1, 400))
        keep = us + vs <= 1.0
        u, v = us[keep], vs[keep]
        pts = (1 - u - v)[:, None] * self.TRI[0] + u[:, None] * self.TRI[1] + v[:, None] * self.TRI[2]
        brute = np.linalg.norm(pts - p, axis=1).min()
        exact = point_triangle_distance(p, self.TRI)
        assert exact == pytest.approx(np.linalg.norm(p - self.TRI[1]), abs=1e-12)
        assert exact <= brute + 1e-9
        assert brute - exact < 6e-3  # sampling resolution bound

    def test_degenerate_triangle_errors(self):
        with pytest.raises(GeometryError):
            point_triangle_distance([0, 0, 1], np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]))

    def test_invariant_under_rigid_transform(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            tri = rng.uniform(-10, 10, (3, 3))
            area2 = np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
            if area2 < 1e-6:
                continue
            p = rng.uniform(-20, 20, 3)
            t = random_rigid(rng)
            d0 = point_triangle_distance(p, tri)
            d1 = point_triangle_distance(t.apply(p), t.apply(tri))
            assert abs(d0 - d1) < 1e-9 * max(1.0, d0)

    def test_matches_sampling_oracle_randomly(self):
        rng = np.random.default_rng(5)
        us, vs = np.meshgrid(np.linspace(0, 1, 200), np.linspace(0, 1, 200))
        keep = us + vs <= 1.0
        u, v = us[keep][:, None], vs[keep][:, None]
        for _ in range(25):
            tri = rng.uniform(-5, 5, (3, 3))
            if np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) < 1e-3:
                continue
            p = rng.uniform(-10, 10, 3)
            samples = (1 - u - v) * tri[0] + u * tri[1] + v * tri[2]
            brute = np.linalg.norm(samples - p, axis=1).min()
            exact = point_triangle_distance(p, tri)
            assert exact <= brute + 1e-9
            assert brute - exact < 0.12  # grid spacing bound at this scale
