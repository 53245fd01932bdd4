"""Scene service: the end-to-end scan pipeline with stage timing and
artifact persistence, the scene document with single-writer revisioning,
and the HTTP API the planner UI drives."""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlparse

from . import collide, machine as machine_mod, ply, scan as scan_mod, x3d
from .geometry import RigidTransform, TriMesh
from .surface import (DecimationParams, ReconParams, decimate,
                      export_quality_ply, filter_by_quality, quality_map,
                      reconstruct)


class PipelineError(RuntimeError):
    def __init__(self, stage, cause, artifacts):
        super().__init__(f"pipeline failed in stage {stage!r}: {cause}")
        self.stage = stage
        self.artifacts = artifacts


@dataclass
class PipelineRun:
    """Stage timings (ms) and artifact paths for one pipeline execution."""

    stage_ms: dict
    total_ms: float
    artifacts: dict

    def to_json(self):
        return {"stage_ms": self.stage_ms, "total_ms": self.total_ms,
                "artifacts": {k: str(v) for k, v in self.artifacts.items()}}


@dataclass
class PipelineParams:
    recon: ReconParams = field(default_factory=ReconParams)
    decimation_fraction: float = 0.10
    # web-deployment budget: optimized patient B-reps stay under 16k triangles
    target_triangles: int | None = 15500
    quality_filter_k: float = 3.0
    write_artifacts: bool = True


def run_pipeline(source, out_dir, params: PipelineParams | None = None, seed: int = 0):
    """merge_scans -> reconstruct -> decimate -> quality_map -> filter.

    source is either (scene_mesh, rig, slice_params, noise) for synthetic
    rendering or a list of (DepthFrame, CameraPose) plus slice params as
    (frames, slice_params). Returns (final mesh, its QualityMap, PipelineRun).
    """
    params = params or PipelineParams()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    stage_ms = {}
    marks = [time.perf_counter()]

    def mark(name):
        marks.append(time.perf_counter())
        stage_ms[name] = (marks[-1] - marks[-2]) * 1000.0

    stage = "render"
    try:
        if len(source) == 4 and isinstance(source[0], TriMesh):
            scene_mesh, rig, slice_params, noise = source
            intr = scan_mod.CameraIntrinsics.kinect_v2()
            frames = [(scan_mod.render_depth(scene_mesh, pose, intr, noise, seed=seed + i), pose)
                      for i, pose in enumerate(rig)]
        else:
            frames, slice_params = source
        mark("render")

        stage = "merge"
        cloud = scan_mod.merge_scans(frames, slice_params)
        if params.write_artifacts:
            artifacts["merged_cloud"] = out_dir / "merged.ply"
            ply.save_cloud(artifacts["merged_cloud"], cloud)
        mark("merge")

        stage = "reconstruct"
        recon = reconstruct(cloud, params.recon)
        if params.write_artifacts:
            artifacts["reconstructed"] = out_dir / "recon.ply"
            ply.save_mesh(artifacts["reconstructed"], recon)
        mark("reconstruct")

        stage = "decimate"
        target = params.target_triangles
        if target is None:
            target = max(recon.n_triangles // 10, 4)
        decim = decimate(recon, DecimationParams(params.decimation_fraction, target))
        if params.write_artifacts:
            artifacts["decimated"] = out_dir / "decimated.ply"
            ply.save_mesh(artifacts["decimated"], decim)
        mark("decimate")

        stage = "quality"
        qmap = quality_map(decim, cloud)
        final = filter_by_quality(decim, qmap, params.quality_filter_k)
        final_qmap = quality_map(final, cloud)
        if params.write_artifacts:
            artifacts["quality"] = out_dir / "quality.ply"
            export_quality_ply(artifacts["quality"], decim, qmap)
            artifacts["final"] = out_dir / "final.ply"
            export_quality_ply(artifacts["final"], final, final_qmap)
        mark("quality")
    except Exception as e:
        raise PipelineError(stage, e, artifacts) from e

    total = sum(stage_ms.values())
    run = PipelineRun(stage_ms, total, artifacts)
    if params.write_artifacts:
        artifacts["run"] = out_dir / "run.json"
        summary = run.to_json()
        summary["cutoff_mm"] = params.quality_filter_k * qmap.summary.rmse_mm
        summary["recon_rmse_mm"] = qmap.summary.rmse_mm
        summary["final_triangles"] = final.n_triangles
        artifacts["run"].write_text(json.dumps(summary, indent=2))
    return final, final_qmap, run


# ---------------------------------------------------------------------------
# scene document + HTTP service

@dataclass
class SceneDocument:
    """Single-writer scene state; every accepted mutation re-runs FK and the
    collision check before the revision becomes visible."""

    geometry: machine_mod.MachineGeometry
    state: machine_mod.MachineState
    revision: int = 0
    scene: object = None
    report: collide.CollisionReport | None = None

    def __post_init__(self):
        self._lock = threading.Lock()
        self._subscribers = []
        if self.scene is None:
            self._refresh()

    def _refresh(self):
        self.scene = machine_mod.forward_kinematics(self.geometry, self.state)
        self.report = collide.check_collision(self.scene)

    # -- reads -------------------------------------------------------------
    def snapshot(self):
        with self._lock:
            return self.revision, self.state, self.scene, self.report

    def summary(self) -> dict:
        revision, state, scene, report = self.snapshot()
        return {
            "revision": revision,
            "kind": self.geometry.kind,
            "sad_mm": self.geometry.sad_mm,
            "limits": {k: list(v) for k, v in self.geometry.limits.items()},
            "state": state.to_json(),
            "components": [{
                "name": c.name,
                "parent": c.parent,
                "group": c.group,
                "n_triangles": c.mesh.n_triangles,
                "transform": c.world.to_json(),
            } for c in scene.components],
            "patient": None if self.geometry.patient is None else {
                "n_triangles": self.geometry.patient.n_triangles,
                "couch_offset": self.geometry.patient_offset.to_json(),
            },
            "collision": report.to_json(),
        }

    # -- mutations ----------------------------------------------------------
    def set_joints(self, updates: dict):
        with self._lock:
            new_state = machine_mod.set_joints(self.state, updates)
            self.state = new_state
            self._refresh()
            self.revision += 1
            self._notify()
            return self.revision, self.state, self.report

    def attach_patient(self, mesh: TriMesh, offset: RigidTransform | None = None):
        with self._lock:
            self.geometry = machine_mod.attach_patient(self.geometry, mesh, offset)
            self._refresh()
            self.revision += 1
            self._notify()
            return self.revision, self.report

    # -- events ---------------------------------------------------------------
    def subscribe(self) -> "queue.Queue":
        q = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
            q.put({"revision": self.revision, "status": self.report.status})
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _notify(self):
        event = {"revision": self.revision, "status": self.report.status}
        for q in self._subscribers:
            q.put(event)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # the noisy default logger is unhelpful in tests and services
    def log_message(self, fmt, *args):
        if self.server.verbose:
            super().log_message(fmt, *args)

    @property
    def doc(self) -> SceneDocument:
        return self.server.document

    def _json(self, payload, status=200):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _bytes(self, body, content_type):
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status, message, **extra):
        self._json({"error": {"message": message, **extra}}, status=status)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length) if length else b""

    # -- GET -----------------------------------------------------------------
    def do_GET(self):
        path = urlparse(self.path).path
        if path == "/api/scene":
            return self._json(self.doc.summary())
        if path == "/api/collision":
            _, _, _, report = self.doc.snapshot()
            return self._json(report.to_json())
        if path.startswith("/api/scene/mesh/"):
            return self._mesh(path.rsplit("/", 1)[1])
        if path == "/api/export/x3d":
            _, _, scene, _ = self.doc.snapshot()
            return self._bytes(x3d.export_x3d(scene).encode(), "model/x3d+xml")
        if path == "/api/events":
            return self._events()
        if not path.startswith("/api"):
            return self._static(path)
        return self._error(404, f"unknown path {path}")

    def _mesh(self, name):
        _, _, scene, _ = self.doc.snapshot()
        try:
            comp = scene.component(name)
        except KeyError:
            return self._error(404, f"unknown component {name!r}")
        accept = self.headers.get("Accept", "")
        if "x3d" in accept:
            doc = x3d.export_x3d([(comp.name, comp.mesh, None)])
            return self._bytes(doc.encode(), "model/x3d+xml")
        import io
        buf = io.BytesIO()
        ply.save_mesh(buf, comp.mesh, binary=True)
        return self._bytes(buf.getvalue(), "application/octet-stream")

    def _events(self):
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        q = self.doc.subscribe()
        try:
            while True:
                try:
                    event = q.get(timeout=15.0)
                    self.wfile.write(f"data: {json.dumps(event)}\n\n".encode())
                    self.wfile.flush()
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.doc.unsubscribe(q)

    def _static(self, path):
        root = self.server.static_dir
        if root is None:
            return self._error(404, "no UI bundled; build the frontend first")
        rel = path.removeprefix("/ui").lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            return self._error(404, f"no such file {rel}")
        kind = {"html": "text/html", "js": "text/javascript", "css": "text/css",
                "map": "application/json"}.get(
            target.suffix.lstrip("."), "application/octet-stream")
        return self._bytes(target.read_bytes(), kind)

    # -- mutations -------------------------------------------------------------
    def do_PUT(self):
        path = urlparse(self.path).path
        if path != "/api/machine/joints":
            return self._error(404, f"unknown path {path}")
        try:
            updates = json.loads(self._body() or b"{}")
        except json.JSONDecodeError as e:
            return self._error(400, f"bad JSON: {e}")
        try:
            revision, state, report = self.doc.set_joints(updates)
        except machine_mod.LimitViolation as e:
            return self._json({"error": e.to_json()}, status=422)
        except (KeyError, TypeError, ValueError) as e:
            return self._error(400, str(e))
        return self._json({"revision": revision, "state": state.to_json(),
                           "collision": report.to_json()})

    def do_POST(self):
        path = urlparse(self.path).path
        if path == "/api/patient":
            return self._post_patient()
        if path == "/api/sweep":
            return self._post_sweep()
        return self._error(404, f"unknown path {path}")

    def _post_patient(self):
        body = self._body()
        offset = None
        header = self.headers.get("X-Couch-Offset")
        if header:
            try:
                offset = RigidTransform.from_json(json.loads(header))
            except Exception as e:
                return self._error(400, f"bad couch offset: {e}")
        try:
            mesh = ply.load_mesh(body)
        except Exception as e:
            return self._error(400, f"bad PLY upload: {e}")
        revision, report = self.doc.attach_patient(mesh, offset)
        return self._json({"revision": revision, "collision": report.to_json()})

    def _post_sweep(self):
        try:
            payload = json.loads(self._body() or b"{}")
            maps = payload["states"]
        except (json.JSONDecodeError, KeyError) as e:
            return self._error(400, f"sweep body needs a 'states' list: {e}")
        _, state, _, _ = self.doc.snapshot()
        results = []
        for m in maps:
            try:
                s = machine_mod.set_joints(state, m)
                scene = machine_mod.forward_kinematics(self.doc.geometry, s)
                report = collide.check_collision(scene)
                results.append({"state": s.to_json(), "collision": report.to_json()})
            except machine_mod.LimitViolation as e:
                results.append({"state": m, "error": e.to_json()})
            except Exception as e:
                results.append({"state": m, "error": {"message": str(e)}})
        return self._json({"results": results})


class SceneServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, bind, document: SceneDocument, static_dir=None, verbose=False):
        self.document = document
        self.static_dir = Path(static_dir) if static_dir else None
        self.verbose = verbose
        super().__init__(bind, _Handler)


def serve(document: SceneDocument, bind=("127.0.0.1", 8776), static_dir=None,
          verbose=True) -> SceneServer:
    """Start the scene service; call .serve_forever() or use as a handle."""
    return SceneServer(bind, document, static_dir, verbose)
