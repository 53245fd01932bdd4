"""Command line front end for the scan/reconstruct/simulate workflow."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    return args.func(args) or 0


def build_parser():
    p = argparse.ArgumentParser(prog="rtroom",
                                description="Treatment-room scan + simulation toolkit")
    sub = p.add_subparsers(dest="command")

    scan_p = sub.add_parser("scan", help="depth-camera simulation")
    scan_sub = scan_p.add_subparsers(dest="subcommand")
    sim = scan_sub.add_parser("simulate", help="render the bundled scene (or a mesh) to depth frames")
    sim.add_argument("--scene", default="mannequin", help="'mannequin' or a PLY mesh path")
    sim.add_argument("--rig", help="rig JSON (defaults to the bundled 4-camera rig)")
    sim.add_argument("--out", required=True, help="output directory for .dpf frames")
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_scan_simulate)

    rec = sub.add_parser("recon", help="point cloud -> surface")
    rec.add_argument("--cloud", required=True)
    rec.add_argument("--out", required=True)
    rec.add_argument("--grid", type=int, default=512)
    rec.set_defaults(func=cmd_recon)

    dec = sub.add_parser("decimate", help="quadric edge collapse")
    dec.add_argument("--mesh", required=True)
    dec.add_argument("--out", required=True)
    dec.add_argument("--target-tris", type=int, default=None)
    dec.add_argument("--fraction", type=float, default=0.10)
    dec.set_defaults(func=cmd_decimate)

    qual = sub.add_parser("quality", help="per-vertex Hausdorff quality vs a scan cloud")
    qual.add_argument("--mesh", required=True)
    qual.add_argument("--cloud", required=True)
    qual.add_argument("--out", required=True)
    qual.add_argument("--filter-k", type=float, default=None,
                      help="also write <out>.filtered.ply trimmed at k*RMSE")
    qual.set_defaults(func=cmd_quality)

    mc = sub.add_parser("mc", help="scalar volume -> isosurface mesh")
    mc.add_argument("--volume", required=True, help="volume JSON header")
    mc.add_argument("--iso", type=float, required=True)
    mc.add_argument("--out", required=True)
    mc.set_defaults(func=cmd_mc)

    pipe = sub.add_parser("pipeline", help="scan -> reconstruct -> decimate -> filter")
    pipe.add_argument("--scene", default="mannequin", help="'mannequin' or a PLY mesh path")
    pipe.add_argument("--frames", nargs="*", help="pre-rendered .dpf frames (skip rendering)")
    pipe.add_argument("--rig", help="rig JSON for --frames or a custom scene")
    pipe.add_argument("--out", required=True)
    pipe.add_argument("--seed", type=int, default=0)
    pipe.add_argument("--grid", type=int, default=512)
    pipe.add_argument("--target-tris", type=int, default=None)
    pipe.add_argument("--z-cut", type=float, default=None)
    pipe.set_defaults(func=cmd_pipeline)

    ev = sub.add_parser("eval", help="accuracy assessment")
    ev_sub = ev.add_subparsers(dest="subcommand")
    flat = ev_sub.add_parser("flat", help="flat-surface scanner protocol")
    flat.add_argument("--width-m", type=float, default=1.0)
    flat.add_argument("--height-m", type=float, default=0.6)
    flat.add_argument("--distance-m", type=float, default=1.0)
    flat.add_argument("--repeats", type=int, default=5)
    flat.add_argument("--seed", type=int, default=0)
    flat.add_argument("--all", action="store_true", help="run the full size/distance matrix")
    flat.set_defaults(func=cmd_eval_flat)
    scen = ev_sub.add_parser("scenarios", help="clearance comparison over a scenario file")
    scen.add_argument("--file", help="scenario JSON (omit to generate the synthetic fixture)")
    scen.add_argument("--machine", help="machine definition JSON (default: bundled stand-in)")
    scen.add_argument("--out", help="write the comparison JSON here")
    scen.add_argument("--seed", type=int, default=0)
    scen.set_defaults(func=cmd_eval_scenarios)

    exp = sub.add_parser("export", help="exporters")
    exp_sub = exp.add_subparsers(dest="subcommand")
    ex3d = exp_sub.add_parser("x3d", help="mesh or posed machine scene to X3D")
    ex3d.add_argument("--mesh", help="PLY mesh to export")
    ex3d.add_argument("--scene", action="store_true", help="export the posed default machine")
    ex3d.add_argument("--machine", help="machine definition JSON")
    ex3d.add_argument("--precision", type=int, default=6)
    ex3d.add_argument("--out", required=True)
    ex3d.set_defaults(func=cmd_export_x3d)

    srv = sub.add_parser("serve", help="run the scene HTTP service")
    srv.add_argument("--bind", default="127.0.0.1:8776")
    srv.add_argument("--machine", help="machine definition JSON (default: bundled stand-in)")
    srv.add_argument("--kind", default="xrt", choices=("xrt", "pt"))
    srv.add_argument("--patient", help="patient PLY to attach at startup")
    srv.add_argument("--static", help="directory with the built UI")
    srv.set_defaults(func=cmd_serve)

    return p


def _load_scene(args):
    from . import ply, shapes
    if args.scene == "mannequin":
        return shapes.mannequin_scan_scene()
    from .scan import NoiseModel, TableSliceParams, load_rig
    mesh = ply.load_mesh(args.scene)
    if not args.rig:
        raise SystemExit("a custom scene needs --rig")
    z_cut = getattr(args, "z_cut", None)
    return mesh, load_rig(args.rig), TableSliceParams(z_cut if z_cut is not None else 6.0), NoiseModel()


def cmd_scan_simulate(args):
    from . import scan as scan_mod
    mesh, rig, _, noise = _load_scene(args)
    if args.rig:
        rig = scan_mod.load_rig(args.rig)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    intr = scan_mod.CameraIntrinsics.kinect_v2()
    for i, pose in enumerate(rig):
        frame = scan_mod.render_depth(mesh, pose, intr, noise, seed=args.seed + i)
        path = out / f"{pose.camera_id}.dpf"
        scan_mod.save_frame(path, frame)
        print(f"{path}  {frame.n_returns} returns")
    scan_mod.save_rig(out / "rig.json", rig)
    print(out / "rig.json")


def cmd_recon(args):
    from . import ply
    from .surface import ReconParams, reconstruct
    cloud = ply.load_cloud(args.cloud)
    mesh = reconstruct(cloud, ReconParams(grid_resolution=args.grid))
    ply.save_mesh(args.out, mesh)
    print(f"{args.out}  {mesh.n_triangles} triangles from {len(cloud)} points")


def cmd_decimate(args):
    from . import ply
    from .surface import DecimationParams, decimate_detailed
    mesh = ply.load_mesh(args.mesh)
    target = args.target_tris if args.target_tris else mesh.n_triangles // 10
    run = decimate_detailed(mesh, DecimationParams(args.fraction, target))
    ply.save_mesh(args.out, run.mesh)
    print(f"{args.out}  {mesh.n_triangles} -> {run.mesh.n_triangles} triangles "
          f"in {len(run.rounds)} rounds")


def cmd_quality(args):
    from . import ply
    from .surface import export_quality_ply, filter_by_quality, quality_map
    mesh = ply.load_mesh(args.mesh)
    cloud = ply.load_cloud(args.cloud)
    qmap = quality_map(mesh, cloud)
    export_quality_ply(args.out, mesh, qmap)
    counts = qmap.bin_counts()
    print(f"{args.out}  {qmap.summary.format(2)}")
    print(f"bins <1/<3/<5/>=5 mm: {counts[0]}/{counts[1]}/{counts[2]}/{counts[3]}")
    if args.filter_k is not None:
        cutoff = args.filter_k * qmap.summary.rmse_mm
        filtered = filter_by_quality(mesh, qmap, args.filter_k)
        out2 = str(args.out) + ".filtered.ply"
        ply.save_mesh(out2, filtered)
        print(f"{out2}  cutoff {cutoff:.2f} mm "
              f"({args.filter_k} x RMSE), {filtered.n_triangles} triangles kept")


def cmd_mc(args):
    from . import ply
    from .surface import load_volume, marching_cubes
    vol = load_volume(args.volume)
    mesh = marching_cubes(vol, args.iso)
    ply.save_mesh(args.out, mesh)
    print(f"{args.out}  {mesh.n_triangles} triangles at iso {args.iso}")


def cmd_pipeline(args):
    from . import scan as scan_mod
    from .service import PipelineParams, run_pipeline
    from .surface import ReconParams

    if args.frames:
        if not args.rig:
            raise SystemExit("--frames needs --rig")
        rig = {p.camera_id: p for p in scan_mod.load_rig(args.rig)}
        frames = []
        for f in args.frames:
            frame = scan_mod.load_frame(f)
            frames.append((frame, rig[Path(f).stem]))
        z = args.z_cut if args.z_cut is not None else 6.0
        source = (frames, scan_mod.TableSliceParams(z))
    else:
        mesh, rig, slice_params, noise = _load_scene(args)
        if args.z_cut is not None:
            slice_params = scan_mod.TableSliceParams(args.z_cut)
        source = (mesh, rig, slice_params, noise)

    params = PipelineParams(recon=ReconParams(grid_resolution=args.grid),
                            target_triangles=args.target_tris)
    final, qmap, run = run_pipeline(source, args.out, params, seed=args.seed)
    for name, ms in run.stage_ms.items():
        print(f"{name:>12}: {ms:8.1f} ms")
    print(f"{'total':>12}: {run.total_ms:8.1f} ms")
    print(f"final mesh: {final.n_triangles} triangles, quality {qmap.summary.format(2)}")
    print(f"quality filter cutoff: {3.0 * qmap.summary.rmse_mm:.2f} mm (3 x RMSE)")
    for k, v in run.artifacts.items():
        print(f"  {k}: {v}")


def cmd_eval_flat(args):
    from .evalkit import FlatSurfaceSpec, flat_surface_protocol
    specs = []
    if args.all:
        for w, h in FlatSurfaceSpec.STANDARD_SIZES:
            for d in FlatSurfaceSpec.STANDARD_DISTANCES:
                specs.append(FlatSurfaceSpec(w, h, d, args.repeats))
    else:
        specs.append(FlatSurfaceSpec(args.width_m, args.height_m, args.distance_m, args.repeats))
    for spec in specs:
        rep = flat_surface_protocol(spec, seed=args.seed)
        print(f"{spec.width_m} x {spec.height_m} m @ {spec.distance_m} m: {rep.format(1)}")


def cmd_eval_scenarios(args):
    from . import machine as machine_mod
    from .evalkit import load_scenarios, run_scenarios
    from .fixtures import make_scenario_fixture

    geom = (machine_mod.load_machine(args.machine) if args.machine
            else machine_mod.standard_geometry())
    if args.file:
        scenarios = load_scenarios(args.file)
        patient = None
    else:
        scenarios, patient = make_scenario_fixture(geom, seed=args.seed)
        print(f"generated {len(scenarios)} synthetic scenarios (no --file given)")
    comparison = run_scenarios(scenarios, geom, patient)
    print(comparison.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(comparison.to_json(), indent=2))
        print(f"wrote {args.out}")


def cmd_export_x3d(args):
    from . import machine as machine_mod, ply
    from .x3d import export_x3d
    if args.mesh:
        doc = export_x3d(ply.load_mesh(args.mesh), precision=args.precision)
    elif args.scene:
        geom = (machine_mod.load_machine(args.machine) if args.machine
                else machine_mod.standard_geometry())
        scene = machine_mod.forward_kinematics(geom, machine_mod.MachineState.default(geom.kind))
        doc = export_x3d(scene, precision=args.precision)
    else:
        raise SystemExit("export x3d needs --mesh or --scene")
    Path(args.out).write_text(doc)
    print(f"{args.out}  {len(doc)} bytes")


def cmd_serve(args):
    from . import machine as machine_mod, ply
    from .service import SceneDocument, serve
    host, _, port = args.bind.rpartition(":")
    geom = (machine_mod.load_machine(args.machine) if args.machine
            else machine_mod.standard_geometry(args.kind))
    if args.patient:
        geom = machine_mod.attach_patient(geom, ply.load_mesh(args.patient))
    doc = SceneDocument(geom, machine_mod.MachineState.default(geom.kind, geom.limits))
    server = serve(doc, (host or "127.0.0.1", int(port)), static_dir=args.static)
    print(f"scene service on http://{host or '127.0.0.1'}:{port}  (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
