"""Accuracy assessment harness: MAE/RMSE/max metrics, the flat-surface
scanner protocol, stage error budgets, and the near-collision scenario
comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    mae_mm: float
    rmse_mm: float
    max_mm: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("metrics need at least one sample")

    def to_json(self) -> dict:
        return {"mae_mm": self.mae_mm, "rmse_mm": self.rmse_mm,
                "max_mm": self.max_mm, "n": self.n}

    def format(self, digits: int = 1) -> str:
        """Display rounding only; stored values keep full precision."""
        return (f"MAE {self.mae_mm:.{digits}f} mm, RMSE {self.rmse_mm:.{digits}f} mm, "
                f"max {self.max_mm:.{digits}f} mm (n={self.n})")


def metrics(errors) -> MetricsReport:
    """Mean-absolute, root-mean-square, and maximum of signed errors (mm)."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("empty error list")
    if not np.all(np.isfinite(e)):
        raise ValueError("errors contain non-finite values")
    ae = np.abs(e)
    return MetricsReport(float(ae.mean()), float(np.sqrt(np.mean(e * e))),
                         float(ae.max()), int(e.size))


@dataclass(frozen=True)
class FlatSurfaceSpec:
    """One flat-target accuracy experiment: board size, standoff, repeats."""

    width_m: float = 1.0
    height_m: float = 0.6
    distance_m: float = 1.0
    repeats: int = 5

    STANDARD_SIZES = ((1.0, 0.6), (0.6, 0.6), (0.4, 0.4))
    STANDARD_DISTANCES = (1.0, 2.0)

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0 or self.distance_m <= 0:
            raise ValueError("dimensions must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def flat_surface_protocol(spec: FlatSurfaceSpec, noise=None, seed: int = 0) -> MetricsReport:
    """Scan a flat board head-on, keep returns from the board, and report
    signed point-to-plane residual metrics averaged over the repeats."""
    from . import scan as scan_mod
    from .geometry import RigidTransform, TriMesh

    if noise is None:
        noise = scan_mod.NoiseModel()
    intr = scan_mod.CameraIntrinsics.kinect_v2()

    w = spec.width_m * 1000.0
    h = spec.height_m * 1000.0
    z = spec.distance_m * 1000.0
    # board in the camera frame at depth z, 2 triangles per quadrant corner
    verts = np.array([
        [-w / 2, -h / 2, z], [w / 2, -h / 2, z], [w / 2, h / 2, z], [-w / 2, h / 2, z],
        [0.0, 0.0, z],
    ])
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    board = TriMesh(verts, tris)
    pose = scan_mod.CameraPose("flat", RigidTransform.identity())

    per_run = []
    for r in range(spec.repeats):
        frame = scan_mod.render_depth(board, pose, intr, noise, seed=seed * 1000 + r)
        cloud = scan_mod.unproject(frame, estimate_normals=False)
        if len(cloud) == 0:
            raise ValueError("board out of view: no returns")
        residuals = cloud.points[:, 2] - z
        per_run.append(metrics(residuals))
    return MetricsReport(
        float(np.mean([m.mae_mm for m in per_run])),
        float(np.mean([m.rmse_mm for m in per_run])),
        float(np.mean([m.max_mm for m in per_run])),
        int(np.sum([m.n for m in per_run])),
    )


@dataclass(frozen=True)
class ErrorBudget:
    """Additive worst-case composition of per-stage errors."""

    scanner_mae_mm: float
    scanner_max_mm: float
    recon_mae_mm: float
    recon_max_mm: float
    decimation_bound_mm: float
    composed_mae_mm: float
    composed_max_mm: float

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "scanner_mae_mm", "scanner_max_mm", "recon_mae_mm", "recon_max_mm",
            "decimation_bound_mm", "composed_mae_mm", "composed_max_mm")}


def compose_budget(scanner: MetricsReport, recon: MetricsReport,
                   decim_bound_mm: float) -> ErrorBudget:
    """Upper-bound stage composition: stage errors add."""
    return ErrorBudget(
        scanner.mae_mm, scanner.max_mm, recon.mae_mm, recon.max_mm,
        float(decim_bound_mm),
        scanner.mae_mm + recon.mae_mm + float(decim_bound_mm),
        scanner.max_mm + recon.max_mm + float(decim_bound_mm),
    )


@dataclass(frozen=True)
class Scenario:
    id: str
    joints: dict
    pair: tuple
    measured_clearance_mm: float

    def __post_init__(self):
        if self.measured_clearance_mm < 0:
            raise ValueError("measured clearance cannot be negative")


def load_scenarios(path) -> list:
    rows = json.loads(Path(path).read_text())
    return [Scenario(str(r["id"]), dict(r["joints"]), tuple(r["pair"]),
                     float(r["measured_clearance_mm"])) for r in rows]


def save_scenarios(path, scenarios) -> None:
    Path(path).write_text(json.dumps([{
        "id": s.id, "joints": s.joints, "pair": list(s.pair),
        "measured_clearance_mm": s.measured_clearance_mm,
    } for s in scenarios], indent=2))


@dataclass
class ScenarioRow:
    id: str
    pair: tuple
    measured_mm: float
    simulated_mm: float | None
    difference_mm: float | None
    error: str | None = None


@dataclass
class ScenarioComparison:
    rows: list
    mean_difference_mm: float
    std_difference_mm: float

    def to_json(self) -> dict:
        return {
            "rows": [{
                "id": r.id, "pair": list(r.pair), "measured_mm": r.measured_mm,
                "simulated_mm": r.simulated_mm, "difference_mm": r.difference_mm,
                "error": r.error,
            } for r in self.rows],
            "mean_difference_mm": self.mean_difference_mm,
            "std_difference_mm": self.std_difference_mm,
        }

    def format_table(self) -> str:
        lines = [f"{'id':<12} {'pair':<36} {'measured':>10} {'simulated':>10} {'diff':>8}"]
        for r in self.rows:
            sim = "failed" if r.simulated_mm is None else f"{r.simulated_mm:10.2f}"
            diff = "" if r.difference_mm is None else f"{r.difference_mm:8.2f}"
            lines.append(f"{r.id:<12} {'/'.join(r.pair):<36} {r.measured_mm:10.2f} {sim:>10} {diff:>8}")
        lines.append(f"mean difference {self.mean_difference_mm:.3f} mm, "
                     f"std {self.std_difference_mm:.3f} mm")
        return "\n".join(lines)


def run_scenarios(scenarios, geom, patient=None, couch_offset=None) -> ScenarioComparison:
    """Reproduce each measured setup in the simulator and compare clearances.

    Per-scenario failures (unknown components, out-of-limit joints) are
    recorded without aborting the sweep."""
    from . import machine as machine_mod
    from .collide import pair_clearance

    if patient is not None:
        geom = machine_mod.attach_patient(geom, patient, couch_offset)
    rows = []
    for s in scenarios:
        try:
            state = machine_mod.set_joints(machine_mod.MachineState.default(geom.kind), s.joints)
            scene = machine_mod.forward_kinematics(geom, state)
            names = {c.name for c in scene.components}
            for comp in s.pair:
                if comp not in names:
                    raise KeyError(f"unknown component {comp!r}")
            sim = pair_clearance(scene, s.pair[0], s.pair[1])
            rows.append(ScenarioRow(s.id, s.pair, s.measured_clearance_mm,
                                    sim, sim - s.measured_clearance_mm))
        except Exception as e:  # per-scenario failure entry
            rows.append(ScenarioRow(s.id, s.pair, s.measured_clearance_mm,
                                    None, None, error=str(e)))
    diffs = [r.difference_mm for r in rows if r.difference_mm is not None]
    mean = float(np.mean(diffs)) if diffs else float("nan")
    std = float(np.std(diffs, ddof=1)) if len(diffs) > 1 else 0.0
    return ScenarioComparison(rows, mean, std)
