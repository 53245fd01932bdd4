"""Deterministic simulation fixtures: a patient on the couch, near-collision
joint states found by contact search, and the synthetic 20-scenario file
standing in for caliper-measured clinical setups."""

from __future__ import annotations

import numpy as np

from . import machine as machine_mod
from .collide import intersecting_triangles, pair_clearance
from .evalkit import Scenario
from .geometry import RigidTransform
from .machine import COUCH_TOP_SURFACE_Z, MachineState, forward_kinematics, set_joints
from .shapes import torso_mesh


def scenario_patient(resolution: int = 56):
    """Torso phantom posed with its back on the couch top."""
    mesh = torso_mesh(resolution)
    back_z = float(mesh.vertices[:, 2].min())
    offset = RigidTransform.from_translation((0.0, 0.0, COUCH_TOP_SURFACE_Z - back_z))
    return mesh, offset


def _pair_intersects(scene, name_a, name_b) -> bool:
    ca = scene.component(name_a)
    cb = scene.component(name_b)
    return len(intersecting_triangles(ca.mesh, ca.world, cb.mesh, cb.world)) > 0


def find_contact_angle(geom, base_state: MachineState, pair, lo: float, hi: float,
                       tol: float = 0.02, steps: int = 24) -> float | None:
    """First gantry angle in [lo, hi] (sweeping from lo) where the pair
    intersects: coarse scan, then bisection on the bracketing step.
    None when the sweep never makes contact; lo itself when already hit."""
    def hits(angle):
        scene = forward_kinematics(geom, set_joints(base_state, {"gantry_deg": angle}))
        return _pair_intersects(scene, *pair)

    if hits(lo):
        return lo
    grid = np.linspace(lo, hi, steps + 1)
    bracket = None
    for a, b in zip(grid[:-1], grid[1:]):
        if hits(b):
            bracket = (a, b)
            break
    if bracket is None:
        return None
    clear, hit = bracket
    while abs(hit - clear) > tol:
        mid = (clear + hit) / 2.0
        if hits(mid):
            hit = mid
        else:
            clear = mid
    return hit


_FAMILIES = (
    # (pair, couch_x range, couch_y range, couch_z range, gantry search range);
    # positive couch_x ranges are mirrored to the sweep side per scenario
    (("collimator_housing", "couch_top"), (300, 480), (-250, 250), (250, 500), (15.0, 110.0)),
    (("collimator_housing", "patient"), (250, 420), (-140, 140), (380, 500), (10.0, 90.0)),
    (("jaw_xp", "couch_top"), (300, 480), (-250, 250), (250, 500), (20.0, 120.0)),
    (("collimator_housing", "head_fixation"), (250, 400), (-860, -760), (400, 500), (10.0, 70.0)),
)


def make_scenario_fixture(geom=None, n: int = 20, seed: int = 0,
                          measurement_sigma_mm: float = 0.5):
    """n near-collision scenarios against the stand-in machine + torso.

    Each scenario's "measured" clearance is the simulated clearance plus
    N(0, sigma) caliper noise, clamped non-negative, mirroring how the real
    assessment compared physical measurements to the virtual tool."""
    if geom is None:
        geom = machine_mod.standard_geometry()
    patient, offset = scenario_patient()
    geom = machine_mod.attach_patient(geom, patient, offset)
    rng = np.random.default_rng(seed)
    base = MachineState.default(geom.kind, geom.limits)

    scenarios = []
    attempts = 0
    while len(scenarios) < n and attempts < 40 * n:
        attempts += 1
        pair, xr, yr, zr, gr = _FAMILIES[len(scenarios) % len(_FAMILIES)]
        sign = 1.0 if rng.random() < 0.5 else -1.0
        couch = (sign * float(rng.uniform(*xr)) if xr[0] > 0 else float(rng.uniform(*xr)),
                 float(rng.uniform(*yr)), float(rng.uniform(*zr)))
        coll = float(rng.uniform(-45.0, 45.0))
        state = set_joints(base, {"couch_translation_mm": couch, "collimator_deg": coll})
        contact = find_contact_angle(geom, state, pair, sign * gr[0], sign * gr[1])
        if contact is None or contact == sign * gr[0]:
            continue
        backoff = float(rng.uniform(0.8, 5.0))
        angle = contact - sign * backoff
        near = set_joints(state, {"gantry_deg": angle})
        scene = forward_kinematics(geom, near)
        clearance = pair_clearance(scene, *pair)
        if not (1.0 <= clearance <= 120.0):
            continue
        measured = max(clearance + float(rng.normal(0.0, measurement_sigma_mm)), 0.0)
        scenarios.append(Scenario(
            id=f"S{len(scenarios) + 1:02d}",
            joints={"gantry_deg": angle, "collimator_deg": coll,
                    "couch_rotation_deg": 0.0, "couch_translation_mm": list(couch)},
            pair=pair,
            measured_clearance_mm=measured,
        ))
    if len(scenarios) < n:
        raise RuntimeError(f"contact search found only {len(scenarios)}/{n} scenarios")
    return scenarios, patient


def collision_demo_setup():
    """Machine + patient with a known colliding gantry pose and a clear one,
    used by the service tests and the UI fixture."""
    geom = machine_mod.standard_geometry()
    patient, offset = scenario_patient()
    geom = machine_mod.attach_patient(geom, patient, offset)
    couch = (330.0, 0.0, 430.0)
    base = set_joints(MachineState.default(geom.kind, geom.limits),
                      {"couch_translation_mm": couch})
    contact = find_contact_angle(geom, base, ("collimator_housing", "patient"), 10.0, 90.0)
    if contact is None:
        raise RuntimeError("demo setup found no contact angle")
    return {
        "geometry": geom,
        "base_joints": {"couch_translation_mm": list(couch)},
        "contact_gantry_deg": contact,
        "colliding_joints": {"couch_translation_mm": list(couch),
                             "gantry_deg": min(contact + 3.0, 185.0)},
        "clear_joints": {"couch_translation_mm": list(couch),
                         "gantry_deg": max(contact - 8.0, -185.0)},
    }
