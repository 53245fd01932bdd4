"""The full patient pipeline, the scene service, and X3D export.

Runs scan->reconstruct->decimate->filter with stage timings, attaches the
result to the machine through the HTTP API, flags a collision, and writes
the posed room as an X3D document.
"""

import json
import threading
import urllib.request
from http.client import HTTPConnection
from pathlib import Path

from rtroom.machine import MachineState, standard_geometry
from rtroom.service import SceneDocument, run_pipeline, serve
from rtroom.shapes import mannequin_scan_scene
from rtroom.x3d import export_x3d

out = Path("demo_output/pipeline")
print("running the bundled 4-camera pipeline...")
final, qmap, run = run_pipeline(mannequin_scan_scene(), out, seed=0)
for stage, ms in run.stage_ms.items():
    print(f"  {stage:>12}: {ms:8.1f} ms")
print(f"  {'total':>12}: {run.total_ms:8.1f} ms")
print(f"patient B-rep: {final.n_triangles} triangles, {qmap.summary.format(2)}")
print(f"filter cutoff was 3 x RMSE = {3 * qmap.summary.rmse_mm:.2f} mm")

print("\nstarting the scene service and uploading the patient...")
doc = SceneDocument(standard_geometry("xrt"), MachineState.default())
server = serve(doc, ("127.0.0.1", 0), verbose=False)
threading.Thread(target=server.serve_forever, daemon=True).start()
port = server.server_address[1]

ply_bytes = (out / "final.ply").read_bytes()
conn = HTTPConnection("127.0.0.1", port)
offset = {"rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation_mm": [0, 0, -180.0]}
conn.request("POST", "/api/patient", ply_bytes, {"X-Couch-Offset": json.dumps(offset)})
print("patient upload:", conn.getresponse().status)

def put_joints(update):
    c = HTTPConnection("127.0.0.1", port)
    c.request("PUT", "/api/machine/joints", json.dumps(update).encode())
    return json.loads(c.getresponse().read())

resp = put_joints({"couch_translation_mm": [330.0, 0.0, 430.0], "gantry_deg": 25.0})
print(f"posed at gantry 25 deg: {resp['collision']['status']}",
      f"({resp['collision']['min_clearance_mm']:.1f} mm)" if resp["collision"]["status"] == "clear" else "")

x3d_doc = urllib.request.urlopen(f"http://127.0.0.1:{port}/api/export/x3d").read()
(out / "room.x3d").write_bytes(x3d_doc)
print(f"posed room exported: {out / 'room.x3d'} ({len(x3d_doc) / 1e6:.2f} MB)")

patient_doc = export_x3d(final, precision=6)
(out / "patient.x3d").write_text(patient_doc)
print(f"patient-only X3D: {out / 'patient.x3d'} ({len(patient_doc) / 1e6:.2f} MB untextured)")
server.shutdown()
