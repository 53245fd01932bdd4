import numpy as np
import pytest

from rtroom.geometry import TriMesh
from rtroom.shapes import icosphere_mesh, torso_mesh
from rtroom.surface import (DecimationError, DecimationParams, decimate,
                            decimate_detailed, expected_rounds,
                            hausdorff_one_sided, point_mesh_distances)


class TestSchedule:
    def test_closed_form_round_count(self):
        assert expected_rounds(160_000, 16_000, 0.10) == 22
        assert expected_rounds(1000, 1000) == 0
        assert expected_rounds(1000, 999) == 1

    def test_already_at_target_returns_same_mesh(self):
        mesh = icosphere_mesh(50.0, 2)
        run = decimate_detailed(mesh, DecimationParams(target_triangles=mesh.n_triangles))
        assert run.mesh is mesh
        assert run.rounds == []

    def test_per_round_counts_follow_geometric_schedule(self):
        mesh = icosphere_mesh(60.0, 4)  # 5120 triangles
        run = decimate_detailed(mesh, DecimationParams(target_triangles=512))
        assert len(run.rounds) == expected_rounds(5120, 512)
        count = 5120
        for r in run.rounds:
            target = count - int(np.floor(count * 0.10))
            assert r.round_target == target
            # an interior-edge collapse removes 2 triangles, so an odd
            # quota may undershoot by exactly one
            assert target - r.triangles_after in (0, 1)
            count = r.triangles_after

    def test_validation(self):
        with pytest.raises(ValueError):
            DecimationParams(per_iteration_fraction=0.0)
        with pytest.raises(ValueError):
            DecimationParams(target_triangles=2)


class TestQuality:
    def test_icosphere_hausdorff_within_one_percent_radius(self):
        mesh = icosphere_mesh(100.0, 5)      # 20480 triangles
        out = decimate(mesh, DecimationParams(target_triangles=2048))
        assert out.n_triangles <= 2048
        h = hausdorff_one_sided(out, mesh, density_per_mm2=2.0)
        assert h <= 1.0   # 1% of the radius

    def test_decimated_vertices_stay_on_surface(self):
        mesh = icosphere_mesh(80.0, 4)
        out = decimate(mesh, DecimationParams(target_triangles=512))
        r = np.linalg.norm(out.vertices, axis=1)
        # collapses may move slightly inward/outward but must hug the sphere
        assert np.abs(r - 80.0).max() < 1.6

    def test_watertight_input_stays_watertight(self):
        mesh = icosphere_mesh(50.0, 4)
        out = decimate(mesh, DecimationParams(target_triangles=640))
        assert out.boundary_edge_count() == 0

    def test_error_monitoring_bounds_result(self):
        mesh = torso_mesh(72)
        run = decimate_detailed(mesh, DecimationParams(target_triangles=mesh.n_triangles // 8),
                                track_error=True)
        monitored = max(r.max_vertex_error_mm for r in run.rounds if r.max_vertex_error_mm)
        d = point_mesh_distances(run.mesh.vertices, mesh)
        assert d.max() <= monitored + 1e-6


class TestLockedTopology:
    def test_pillows_are_stuck_and_carry_partial_mesh(self):
        # a "pillow" (two triangles sharing all three edges) locks every
        # edge via the link condition; three of them cannot reach target 4
        from rtroom.shapes import merge_meshes
        v = np.array([[0, 0, 0], [1, 0, 0], [0.5, 1, 0.2]])
        t = np.array([[0, 1, 2], [0, 2, 1]])
        pillow = TriMesh(v, t)
        mesh = merge_meshes(pillow, TriMesh(v + 5.0, t), TriMesh(v - 5.0, t))
        with pytest.raises(DecimationError) as exc:
            decimate(mesh, DecimationParams(target_triangles=4, per_iteration_fraction=0.4))
        assert exc.value.mesh is not None
        assert exc.value.mesh.n_triangles == 6
