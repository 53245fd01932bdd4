"""Run the accuracy-assessment harness end to end.

Covers the flat-surface scanner protocol over the full size/distance
matrix, the additive error budget across pipeline stages, and the
20-scenario clearance comparison against synthetic "caliper" measurements.
"""

from rtroom.evalkit import (FlatSurfaceSpec, compose_budget,
                            flat_surface_protocol, metrics, run_scenarios)
from rtroom.fixtures import make_scenario_fixture, scenario_patient
from rtroom.machine import standard_geometry

print("flat-surface protocol (5 repeats each):")
reports = {}
for w, h in FlatSurfaceSpec.STANDARD_SIZES:
    for d in FlatSurfaceSpec.STANDARD_DISTANCES:
        rep = flat_surface_protocol(FlatSurfaceSpec(w, h, d), seed=0)
        reports[(w, h, d)] = rep
        print(f"  {w} x {h} m at {d} m: {rep.format(1)}")

scanner = reports[(1.0, 0.6, 1.0)]
recon_stage = metrics([1.3, -1.3, 1.4, -1.5, 1.2])   # representative stage residuals
budget = compose_budget(scanner, recon_stage, decim_bound_mm=0.5)
print("\nadditive error budget (scanner + reconstruction + decimation):")
print(f"  composed MAE {budget.composed_mae_mm:.1f} mm, "
      f"composed max {budget.composed_max_mm:.1f} mm")

print("\n20 near-collision scenarios vs synthetic caliper measurements:")
geom = standard_geometry("xrt")
scenarios, patient = make_scenario_fixture(geom, seed=0)
_, offset = scenario_patient()
comparison = run_scenarios(scenarios, geom, patient, offset)
print(comparison.format_table())
