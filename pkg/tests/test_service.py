import json
import threading
import urllib.request
from http.client import HTTPConnection

import pytest

from rtroom import ply
from rtroom.geometry import RigidTransform
from rtroom.machine import MachineState
from rtroom.scan import NoiseModel, TableSliceParams, look_at_pose
from rtroom.service import (PipelineError, PipelineParams, SceneDocument,
                            run_pipeline, serve)
from rtroom.shapes import icosphere_mesh, merge_meshes, table_mesh
from rtroom.surface import ReconParams


def small_scene():
    """A ball phantom on a table: small and quick to run end to end."""
    ball = icosphere_mesh(120.0, 3, center=(0.0, 0.0, 120.0))
    scene = merge_meshes(ball, table_mesh(0.0))
    rig = [
        look_at_pose("a", (-300.0, -250.0, 900.0), (0, 0, 100.0)),
        look_at_pose("b", (300.0, 250.0, 900.0), (0, 0, 100.0)),
    ]
    return scene, rig, TableSliceParams(z_cut_mm=20.0), NoiseModel()


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    params = PipelineParams(recon=ReconParams(grid_resolution=128),
                            target_triangles=None)
    result = run_pipeline(small_scene(), out, params, seed=11)
    return out, result


class TestPipeline:
    def test_artifacts_exist(self, run):
        _, (final, qmap, pr) = run
        for key in ("merged_cloud", "reconstructed", "decimated", "quality", "final", "run"):
            assert key in pr.artifacts
            assert pr.artifacts[key].exists(), key

    def test_stage_timings_sum_to_total(self, run):
        _, (_, _, pr) = run
        assert set(pr.stage_ms) == {"render", "merge", "reconstruct", "decimate", "quality"}
        assert abs(sum(pr.stage_ms.values()) - pr.total_ms) <= 1.0

    def test_default_target_is_tenth_of_reconstruction(self, run):
        out, (final, _, pr) = run
        recon = ply.load_mesh(pr.artifacts["reconstructed"])
        assert final.n_triangles <= recon.n_triangles // 10

    def test_quality_pairs_with_final_mesh(self, run):
        _, (final, qmap, _) = run
        assert len(qmap.quality_mm) == final.n_vertices

    def test_run_json_reports_cutoff(self, run):
        out, (_, qmap, pr) = run
        doc = json.loads(pr.artifacts["run"].read_text())
        assert doc["cutoff_mm"] == pytest.approx(3.0 * doc["recon_rmse_mm"])

    def test_rerun_same_seed_byte_identical(self, run, tmp_path):
        out, (_, _, pr) = run
        params = PipelineParams(recon=ReconParams(grid_resolution=128),
                                target_triangles=None)
        run_pipeline(small_scene(), tmp_path, params, seed=11)
        a = pr.artifacts["final"].read_bytes()
        b = (tmp_path / "final.ply").read_bytes()
        assert a == b

    def test_stage_error_reports_stage(self, tmp_path):
        bad = (icosphere_mesh(5.0, 1), [], TableSliceParams(0.0), NoiseModel())
        with pytest.raises(PipelineError) as exc:
            run_pipeline(bad, tmp_path)
        assert exc.value.stage == "merge"


@pytest.fixture(scope="module")
def server(demo_setup):
    doc = SceneDocument(demo_setup["geometry"],
                        MachineState.default("xrt", demo_setup["geometry"].limits))
    srv = serve(doc, ("127.0.0.1", 0), verbose=False)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv, doc, demo_setup
    srv.shutdown()


def _get(srv, path, headers=None):
    port = srv.server_address[1]
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}",
                                 headers=headers or {})
    with urllib.request.urlopen(req) as r:
        return r.status, r.headers.get("Content-Type"), r.read()


def _send(srv, method, path, body=None, headers=None):
    port = srv.server_address[1]
    conn = HTTPConnection("127.0.0.1", port, timeout=20)
    conn.request(method, path, body=body, headers=headers or {})
    resp = conn.getresponse()
    data = resp.read()
    status = resp.status
    conn.close()
    return status, data


class TestHttpApi:
    def test_scene_summary_initial(self, server):
        srv, doc, _ = server
        status, ctype, body = _get(srv, "/api/scene")
        assert status == 200 and "json" in ctype
        scene = json.loads(body)
        assert scene["revision"] == doc.revision
        assert scene["kind"] == "xrt"
        assert scene["limits"]["gantry_deg"] == [-185.0, 185.0]
        names = {c["name"] for c in scene["components"]}
        assert {"gantry_head", "couch_top", "patient"} <= names
        assert scene["collision"]["status"] in ("clear", "collision")

    def test_put_joints_moves_and_bumps_revision(self, server):
        srv, doc, _ = server
        rev0 = doc.revision
        status, data = _send(srv, "PUT", "/api/machine/joints",
                             json.dumps({"gantry_deg": 12.5}).encode())
        assert status == 200
        out = json.loads(data)
        assert out["revision"] == rev0 + 1
        assert out["state"]["gantry_deg"] == 12.5
        assert "collision" in out

    def test_limit_violation_422_state_unchanged(self, server):
        srv, doc, _ = server
        rev0 = doc.revision
        gantry0 = doc.state.gantry_deg
        status, data = _send(srv, "PUT", "/api/machine/joints",
                             json.dumps({"gantry_deg": 200.0}).encode())
        assert status == 422
        err = json.loads(data)["error"]
        assert err["joint"] == "gantry_deg"
        assert err["interval"] == [-185.0, 185.0]
        assert doc.revision == rev0
        assert doc.state.gantry_deg == gantry0

    def test_colliding_pose_reported_everywhere(self, server):
        srv, doc, demo = server
        status, data = _send(srv, "PUT", "/api/machine/joints",
                             json.dumps(demo["colliding_joints"]).encode())
        assert status == 200
        out = json.loads(data)
        assert out["collision"]["status"] == "collision"
        pairs = {tuple(sorted((p["a"], p["b"]))) for p in out["collision"]["pairs"]}
        assert ("collimator_housing", "patient") in pairs
        _, _, body = _get(srv, "/api/collision")
        again = json.loads(body)
        assert again["status"] == "collision"
        # back to a clear pose
        status, data = _send(srv, "PUT", "/api/machine/joints",
                             json.dumps(demo["clear_joints"]).encode())
        assert json.loads(data)["collision"]["status"] == "clear"

    def test_mesh_endpoint_ply_and_x3d(self, server):
        srv, _, _ = server
        status, ctype, body = _get(srv, "/api/scene/mesh/couch_top")
        assert status == 200
        mesh = ply.load_mesh(body)
        assert mesh.n_triangles > 0
        status, ctype, body = _get(srv, "/api/scene/mesh/couch_top",
                                   headers={"Accept": "model/x3d+xml"})
        assert b"IndexedFaceSet" in body
        status, _, body = _get(srv, "/api/scene/mesh/patient")
        assert ply.load_mesh(body).n_triangles > 0

    def test_unknown_component_404(self, server):
        srv, _, _ = server
        with pytest.raises(urllib.error.HTTPError) as exc:
            _get(srv, "/api/scene/mesh/nonsense")
        assert exc.value.code == 404

    def test_sweep_endpoint(self, server):
        srv, _, demo = server
        hit = demo["colliding_joints"]["gantry_deg"]
        clear = demo["clear_joints"]["gantry_deg"]
        payload = {"states": [
            {"gantry_deg": clear}, {"gantry_deg": hit}, {"gantry_deg": 500.0},
        ]}
        status, data = _send(srv, "POST", "/api/sweep", json.dumps(payload).encode())
        assert status == 200
        results = json.loads(data)["results"]
        assert results[0]["collision"]["status"] == "clear"
        assert results[1]["collision"]["status"] == "collision"
        assert "error" in results[2]

    def test_patient_upload(self, server, tmp_path):
        srv, doc, _ = server
        ball = icosphere_mesh(60.0, 2)
        ply.save_mesh(tmp_path / "p.ply", ball)
        offset = RigidTransform.from_translation([0, 0, -100.0]).to_json()
        status, data = _send(srv, "POST", "/api/patient",
                             (tmp_path / "p.ply").read_bytes(),
                             headers={"X-Couch-Offset": json.dumps(offset)})
        assert status == 200
        assert doc.geometry.patient.n_triangles == ball.n_triangles
        # restore the demo patient for other tests
        from rtroom.fixtures import scenario_patient
        mesh, off = scenario_patient()
        doc.attach_patient(mesh, off)

    def test_export_scene_x3d(self, server):
        srv, _, _ = server
        status, ctype, body = _get(srv, "/api/export/x3d")
        assert status == 200
        assert "x3d" in ctype
        from rtroom.x3d import import_x3d
        names = {n for n, _ in import_x3d(body.decode())}
        assert "patient" in names

    def test_event_stream_pushes_revision(self, server):
        srv, doc, demo = server
        port = srv.server_address[1]
        conn = HTTPConnection("127.0.0.1", port, timeout=10)
        conn.request("GET", "/api/events")
        resp = conn.getresponse()
        first = resp.fp.readline()  # initial snapshot event
        assert first.startswith(b"data: ")
        snapshot = json.loads(first[6:])
        assert snapshot["revision"] == doc.revision
        resp.fp.readline()
        _send(srv, "PUT", "/api/machine/joints",
              json.dumps({"gantry_deg": 1.0}).encode())
        line = resp.fp.readline()
        while not line.startswith(b"data: "):
            line = resp.fp.readline()
        event = json.loads(line[6:])
        assert event["revision"] == doc.revision
        assert event["status"] in ("clear", "collision")
        conn.close()

    def test_reads_see_consistent_revision_report_pairs(self, server):
        srv, doc, demo = server
        stop = threading.Event()
        bad = []

        def reader():
            while not stop.is_set():
                rev, state, scene, report = doc.snapshot()
                again = doc.snapshot()
                if again[0] == rev and again[3] is not report and again[1] is state:
                    bad.append((rev,))

        threads = [threading.Thread(target=reader) for _ in range(3)]
        for t in threads:
            t.start()
        for angle in (2.0, 4.0, 6.0, 8.0):
            _send(srv, "PUT", "/api/machine/joints",
                  json.dumps({"gantry_deg": angle}).encode())
        stop.set()
        for t in threads:
            t.join()
        assert bad == []
