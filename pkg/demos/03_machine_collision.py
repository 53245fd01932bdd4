"""Pose the treatment machine around a patient and hunt for the contact.

Attaches a torso phantom to the couch, raises and shifts the couch, then
sweeps the gantry until the collimator meets the patient; prints the
clearance profile on the way in.
"""

from rtroom.collide import check_collision, clearance_sweep
from rtroom.fixtures import scenario_patient
from rtroom.machine import (MachineState, attach_patient, forward_kinematics,
                            set_joints, standard_geometry)

geom = standard_geometry("xrt")
patient, offset = scenario_patient()
geom = attach_patient(geom, patient, offset)
print(f"machine: {len(geom.components)} components + {patient.n_triangles}-triangle patient")

base = set_joints(MachineState.default(),
                  {"couch_translation_mm": (330.0, 0.0, 430.0)})

states = [set_joints(base, {"gantry_deg": float(g)}) for g in range(0, 41, 5)]
print("gantry sweep with the couch raised and shifted laterally:")
for entry in clearance_sweep(geom, states):
    report = entry.report
    angle = entry.state.gantry_deg
    if report.status == "clear":
        a, b, *_ = report.closest
        print(f"  {angle:5.1f} deg: clear, {report.min_clearance_mm:7.2f} mm between {a} and {b}")
    else:
        pairs = ", ".join(f"{p.a}/{p.b}" for p in report.colliding_pairs)
        print(f"  {angle:5.1f} deg: COLLISION ({pairs})")

# the PT bundle has a longer snout, so contact comes earlier
pt = attach_patient(standard_geometry("pt"), patient, offset)
for g in (10.0, 15.0, 20.0):
    scene = forward_kinematics(pt, set_joints(set_joints(MachineState.default("pt"),
                               {"couch_translation_mm": (330.0, 0.0, 430.0)}),
                               {"gantry_deg": g}))
    report = check_collision(scene)
    print(f"proton nozzle at {g} deg: {report.status} "
          f"({report.min_clearance_mm:.1f} mm)")
