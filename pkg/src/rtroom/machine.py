"""Parametric XRT/PT treatment machine: joint state with limits, component
tree, and forward kinematics.

Angle convention (IEC-flavored, documented because vendors differ): gantry
rotates about +Y through the isocenter, 0 deg puts the source straight above
at (0, 0, SAD), +90 deg puts it on the +X side; the collimator rotates about
the beam axis; the couch rotates about +Z through the isocenter and then
translates. Limits and zero offsets are per-machine configuration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, TriMesh, rotation_y, rotation_z
from . import shapes

DEFAULT_SAD_MM = 1000.0

DEFAULT_LIMITS = {
    "gantry_deg": (-185.0, 185.0),
    "collimator_deg": (-180.0, 180.0),
    "couch_rotation_deg": (-95.0, 95.0),
    "couch_x_mm": (-500.0, 500.0),
    "couch_y_mm": (-1000.0, 1000.0),
    "couch_z_mm": (-200.0, 500.0),
    "gap_x_mm": (5.0, 400.0),
    "gap_y_mm": (5.0, 400.0),
}


class LimitViolation(ValueError):
    def __init__(self, joint, value, interval):
        self.joint = joint
        self.value = float(value)
        self.interval = (float(interval[0]), float(interval[1]))
        super().__init__(f"{joint}={value} outside [{interval[0]}, {interval[1]}]")

    def to_json(self):
        return {"joint": self.joint, "value": self.value, "interval": list(self.interval)}


@dataclass(frozen=True)
class MachineState:
    gantry_deg: float = 0.0
    collimator_deg: float = 0.0
    couch_rotation_deg: float = 0.0
    couch_translation_mm: tuple = (0.0, 0.0, 0.0)
    collimator_gap_mm: tuple = (100.0, 100.0)
    machine_kind: str = "xrt"
    limits: dict = field(default_factory=lambda: DEFAULT_LIMITS)

    def __post_init__(self):
        if self.machine_kind not in ("xrt", "pt"):
            raise ValueError(f"unknown machine kind {self.machine_kind!r}")
        object.__setattr__(self, "couch_translation_mm",
                           tuple(float(v) for v in self.couch_translation_mm))
        object.__setattr__(self, "collimator_gap_mm",
                           tuple(float(v) for v in self.collimator_gap_mm))
        if len(self.couch_translation_mm) != 3 or len(self.collimator_gap_mm) != 2:
            raise ValueError("couch translation needs 3 values, collimator gap 2")
        self._check("gantry_deg", self.gantry_deg)
        self._check("collimator_deg", self.collimator_deg)
        self._check("couch_rotation_deg", self.couch_rotation_deg)
        for axis, v in zip(("x", "y", "z"), self.couch_translation_mm):
            self._check(f"couch_{axis}_mm", v)
        for axis, v in zip(("x", "y"), self.collimator_gap_mm):
            if v <= 0:
                raise LimitViolation(f"gap_{axis}_mm", v, self.limits[f"gap_{axis}_mm"])
            self._check(f"gap_{axis}_mm", v)

    def _check(self, joint, value):
        lo, hi = self.limits[joint]
        if not (lo <= value <= hi) or not np.isfinite(value):
            raise LimitViolation(joint, value, (lo, hi))

    @staticmethod
    def default(kind: str = "xrt", limits: dict | None = None) -> "MachineState":
        return MachineState(machine_kind=kind, limits=limits or DEFAULT_LIMITS)

    def to_json(self) -> dict:
        return {
            "gantry_deg": self.gantry_deg,
            "collimator_deg": self.collimator_deg,
            "couch_rotation_deg": self.couch_rotation_deg,
            "couch_translation_mm": list(self.couch_translation_mm),
            "collimator_gap_mm": list(self.collimator_gap_mm),
            "machine_kind": self.machine_kind,
        }


def set_joints(state: MachineState, updates: dict) -> MachineState:
    """Apply a partial joint map; limit validation happens here."""
    known = {"gantry_deg", "collimator_deg", "couch_rotation_deg",
             "couch_translation_mm", "collimator_gap_mm"}
    unknown = set(updates) - known
    if unknown:
        raise KeyError(f"unknown joints: {sorted(unknown)}")
    return replace(state, **updates)


@dataclass(frozen=True, eq=False)
class Component:
    """One machine part: a mesh mounted in a parent frame.

    parent is a kinematic frame name (room/gantry/collimator/couch) or
    another component's name. gap_axis marks collimator jaws that ride on
    the gap setting (x+/x-/y+/y-).
    """

    name: str
    mesh: TriMesh
    parent: str = "room"
    mount: RigidTransform = field(default_factory=RigidTransform.identity)
    gap_axis: str | None = None


@dataclass(frozen=True, eq=False)
class MachineGeometry:
    kind: str
    sad_mm: float
    components: tuple
    limits: dict = field(default_factory=lambda: DEFAULT_LIMITS)
    patient: TriMesh | None = None
    patient_offset: RigidTransform = field(default_factory=RigidTransform.identity)
    # pairs that touch by construction (mounted interfaces), never collision-tested
    excluded_pairs: frozenset = frozenset()

    def __post_init__(self):
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise ValueError("component names must be unique")

    def component(self, name: str) -> Component:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class PosedComponent:
    name: str
    mesh: TriMesh
    world: RigidTransform
    group: str          # room | gantry | couch | patient
    parent: str

    def world_mesh(self) -> TriMesh:
        key = (id(self.mesh), _key(self.world))
        hit = _posed_mesh_cache.get(key)
        if hit is not None:
            return hit[1]
        m = self.mesh.transformed(self.world)
        if len(_posed_mesh_cache) >= 256:
            _posed_mesh_cache.pop(next(iter(_posed_mesh_cache)))
        # keep the source mesh alive so its id cannot be recycled
        _posed_mesh_cache[key] = (self.mesh, m)
        return m


def _key(t: RigidTransform):
    return (t.rotation.tobytes(), t.translation.tobytes())


_posed_mesh_cache: dict = {}


@dataclass(frozen=True, eq=False)
class PosedScene:
    components: tuple
    state: MachineState
    excluded_pairs: frozenset

    def component(self, name: str) -> PosedComponent:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self):
        return [c.name for c in self.components]

    def candidate_pairs(self, pair_filter=None):
        """Non-adjacent component pairs to collision-test."""
        comps = self.components
        out = []
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                key = frozenset((comps[i].name, comps[j].name))
                if key in self.excluded_pairs:
                    continue
                if pair_filter is not None and key not in pair_filter:
                    continue
                out.append((comps[i], comps[j]))
        return out


def _frame_transforms(state: MachineState) -> dict:
    gantry = RigidTransform.from_rotation(rotation_y(state.gantry_deg))
    collimator = gantry @ RigidTransform.from_rotation(rotation_z(state.collimator_deg))
    couch = RigidTransform.from_translation(state.couch_translation_mm) @ \
        RigidTransform.from_rotation(rotation_z(state.couch_rotation_deg))
    return {"room": RigidTransform.identity(), "gantry": gantry,
            "collimator": collimator, "couch": couch}


_GAP_DIRS = {"x+": np.array([1.0, 0, 0]), "x-": np.array([-1.0, 0, 0]),
             "y+": np.array([0, 1.0, 0]), "y-": np.array([0, -1.0, 0])}

_FRAME_GROUP = {"room": "room", "gantry": "gantry", "collimator": "gantry", "couch": "couch"}


def forward_kinematics(geom: MachineGeometry, state: MachineState) -> PosedScene:
    """Pose every component (and the attached patient) for a joint state.

    States are validated at construction against their own limits; FK
    re-checks against the machine's limits in case they differ."""
    for joint, value in (("gantry_deg", state.gantry_deg),
                         ("collimator_deg", state.collimator_deg),
                         ("couch_rotation_deg", state.couch_rotation_deg)):
        lo, hi = geom.limits[joint]
        if not (lo <= value <= hi):
            raise LimitViolation(joint, value, (lo, hi))
    frames = _frame_transforms(state)
    posed = {}
    groups = {}
    pending = list(geom.components)
    excluded = set()
    guard = 0
    while pending:
        guard += 1
        if guard > 10 * (len(geom.components) + 1):
            raise ValueError("component parent cycle or missing parent")
        comp = pending.pop(0)
        if comp.parent in frames:
            base = frames[comp.parent]
            group = _FRAME_GROUP[comp.parent]
        elif comp.parent in posed:
            base = posed[comp.parent].world
            group = groups[comp.parent]
            excluded.add(frozenset((comp.name, comp.parent)))
        else:
            pending.append(comp)
            continue
        world = base @ comp.mount
        if comp.gap_axis is not None:
            gap = state.collimator_gap_mm[0 if comp.gap_axis[0] == "x" else 1]
            world = world @ RigidTransform.from_translation(_GAP_DIRS[comp.gap_axis] * gap / 2.0)
        posed[comp.name] = PosedComponent(comp.name, comp.mesh, world, group, comp.parent)
        groups[comp.name] = group

    if geom.patient is not None:
        couch_top = posed.get("couch_top")
        base = couch_top.world if couch_top is not None else frames["couch"]
        posed["patient"] = PosedComponent("patient", geom.patient,
                                          base @ geom.patient_offset, "couch",
                                          "couch_top" if couch_top else "couch")
        if couch_top is not None:
            excluded.add(frozenset(("patient", "couch_top")))

    excluded.update(geom.excluded_pairs)

    return PosedScene(tuple(posed.values()), state, frozenset(excluded))


def attach_patient(geom: MachineGeometry, patient: TriMesh,
                   couch_offset: RigidTransform | None = None) -> MachineGeometry:
    """Register (or replace) the patient mesh as a couch_top child."""
    return replace(geom, patient=patient,
                   patient_offset=couch_offset or RigidTransform.identity())


def source_position(geom: MachineGeometry, state: MachineState) -> np.ndarray:
    """World position of the radiation source for the given state."""
    return rotation_y(state.gantry_deg) @ np.array([0.0, 0.0, geom.sad_mm])


# ---------------------------------------------------------------------------
# bundled stand-in geometry

def standard_geometry(kind: str = "xrt", sad_mm: float = DEFAULT_SAD_MM,
                      with_head_fixation: bool = True) -> MachineGeometry:
    """Procedural stand-in machine at realistic dimensions.

    The PT bundle swaps the collimator housing for a longer, wider snout;
    the kinematic chain is identical.
    """
    couch_top_z = -180.0
    comps = [
        Component("gantry_head",
                  shapes.cylinder_mesh(260.0, 1080.0, 1450.0, segments=48, rings=6),
                  parent="gantry"),
        Component("gantry_arm",
                  shapes.merge_meshes(
                      shapes.box_mesh((320.0, 900.0, 280.0), center=(0.0, 780.0, 1520.0), segments=8),
                      shapes.box_mesh((320.0, 320.0, 260.0), center=(0.0, 160.0, 1530.0), segments=6)),
                  parent="gantry"),
    ]
    if kind == "pt":
        comps.append(Component(
            "collimator_housing",
            shapes.cylinder_mesh(200.0, 420.0, 1080.0, segments=48, rings=8, radius_top=240.0),
            parent="collimator"))
        jaw_z = (340.0, 420.0)
    else:
        comps.append(Component(
            "collimator_housing",
            shapes.cylinder_mesh(160.0, 560.0, 1080.0, segments=48, rings=6, radius_top=230.0),
            parent="collimator"))
        jaw_z = (480.0, 560.0)
    jz = (jaw_z[0] + jaw_z[1]) / 2.0
    jh = jaw_z[1] - jaw_z[0]
    for axis in ("x+", "x-", "y+", "y-"):
        if axis[0] == "x":
            size, off = (44.0, 180.0, jh), (22.0, 0.0, 0.0)
        else:
            size, off = (180.0, 44.0, jh), (0.0, 22.0, 0.0)
        direction = _GAP_DIRS[axis]
        comps.append(Component(
            f"jaw_{axis[0]}{'p' if axis[1] == '+' else 'n'}",
            shapes.box_mesh(size, center=(0.0, 0.0, jz), segments=3),
            parent="collimator",
            mount=RigidTransform.from_translation(direction * (off[0] + off[1])),
            gap_axis=axis))
    comps += [
        Component("couch_top",
                  shapes.box_mesh((500.0, 2300.0, 60.0), center=(0.0, -150.0, couch_top_z - 30.0), segments=10),
                  parent="couch"),
        Component("couch_base",
                  shapes.box_mesh((420.0, 900.0, 680.0), center=(0.0, -700.0, couch_top_z - 60.0 - 340.0), segments=6),
                  parent="couch"),
        Component("stand",
                  shapes.cylinder_mesh(850.0, 1300.0, 1900.0, segments=48, rings=4, axis="y"),
                  parent="room"),
    ]
    if with_head_fixation:
        comps.append(Component(
            "head_fixation",
            shapes.merge_meshes(
                shapes.box_mesh((36.0, 180.0, 150.0), center=(-130.0, 810.0, couch_top_z + 75.0), segments=3),
                shapes.box_mesh((36.0, 180.0, 150.0), center=(130.0, 810.0, couch_top_z + 75.0), segments=3),
                shapes.box_mesh((296.0, 180.0, 34.0), center=(0.0, 810.0, couch_top_z + 150.0 + 17.0), segments=4)),
            parent="couch_top"))
    jaws = ["jaw_xp", "jaw_xn", "jaw_yp", "jaw_yn"]
    touching = [("gantry_head", "collimator_housing"),
                ("gantry_head", "gantry_arm"),
                ("couch_top", "couch_base"),
                ("head_fixation", "patient")]
    touching += [("collimator_housing", j) for j in jaws]
    touching += [(jaws[i], jaws[j]) for i in range(4) for j in range(i + 1, 4)]
    excluded = frozenset(frozenset(p) for p in touching)
    return MachineGeometry(kind, float(sad_mm), tuple(comps), excluded_pairs=excluded)


COUCH_TOP_SURFACE_Z = -180.0


# ---------------------------------------------------------------------------
# machine definition files

def save_machine(path, geom: MachineGeometry, mesh_dir=None) -> None:
    from .ply import save_mesh
    path = Path(path)
    mesh_dir = Path(mesh_dir) if mesh_dir else path.parent
    mesh_dir.mkdir(parents=True, exist_ok=True)
    comp_rows = []
    for c in geom.components:
        mesh_file = mesh_dir / f"{c.name}.ply"
        save_mesh(mesh_file, c.mesh)
        row = {"name": c.name, "mesh": str(mesh_file.relative_to(path.parent)),
               "parent": c.parent,
               "mount": {"rotation": [float(v) for v in c.mount.rotation.ravel()],
                         "translation_mm": [float(v) for v in c.mount.translation]}}
        if c.gap_axis:
            row["gap_axis"] = c.gap_axis
        comp_rows.append(row)
    path.write_text(json.dumps({
        "kind": geom.kind,
        "sad_mm": geom.sad_mm,
        "joints": {name: {"min": lo, "max": hi, "default": _default_joint(name)}
                   for name, (lo, hi) in geom.limits.items()},
        "components": comp_rows,
        "excluded_pairs": sorted(sorted(p) for p in geom.excluded_pairs),
    }, indent=2))


def _default_joint(name):
    if name.startswith("gap"):
        return 100.0
    return 0.0


def load_machine(path) -> MachineGeometry:
    from .ply import load_mesh
    path = Path(path)
    spec = json.loads(path.read_text())
    limits = {name: (float(j["min"]), float(j["max"]))
              for name, j in spec.get("joints", {}).items()}
    for name, bounds in DEFAULT_LIMITS.items():
        limits.setdefault(name, bounds)
    comps = []
    for row in spec["components"]:
        mount = RigidTransform(
            np.asarray(row["mount"]["rotation"], dtype=np.float64).reshape(3, 3),
            np.asarray(row["mount"]["translation_mm"], dtype=np.float64))
        comps.append(Component(row["name"], load_mesh(path.parent / row["mesh"]),
                               row.get("parent", "room"), mount, row.get("gap_axis")))
    excluded = frozenset(frozenset(p) for p in spec.get("excluded_pairs", []))
    return MachineGeometry(spec.get("kind", "xrt"), float(spec.get("sad_mm", DEFAULT_SAD_MM)),
                           tuple(comps), limits, excluded_pairs=excluded)
