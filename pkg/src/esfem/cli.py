"""Command-line entry point: ``esfem {info,synth,diffuse,frap,rds,fit}``.

Exit codes: 0 success, 2 usage, 3 validation failure, 4 numerical failure.
Failures print one ``esfem: error[<category>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .core import StepError, assemble_mass, discrete_mass, run_diffusion
from .frap import FrapConfig, RoiSpec, run_frap
from .geometry import MeshError, MeshSequence, max_element_diameter, synth_sequence, validate_mesh
from .io import (
    FormatError,
    load_sequence,
    read_manifest,
    read_recovery_csv,
    write_json,
    write_manifest,
    write_mesh_frame,
    write_recovery_csv,
    write_vtk_frame,
)
from .lsq import FitError
from .pattern import RdsConfig, SchnakenbergParams, run_rds
from .sparse import SolverError, SolverOptions

logger = logging.getLogger("esfem")

EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


def _sequence(cfg: RunConfig) -> tuple[MeshSequence, float]:
    """Sequence from the manifest or a synthetic generator, and its unit scale."""
    s = cfg.sequence
    if s.manifest:
        manifest = read_manifest(s.manifest)
        return load_sequence(manifest, s.frames), manifest.unit_scale
    count = s.frames if s.frames is not None else s.frame_count
    seq = synth_sequence(
        s.synthetic, count, s.frame_dt, subdivisions=s.subdivisions,
        radius=s.radius, rate=s.rate, amplitude=s.amplitude, period=s.period,
    )
    return seq, 1.0


def _solver(cfg: RunConfig) -> SolverOptions:
    return SolverOptions(cfg.solver.rtol, cfg.solver.max_iter, cfg.solver.preconditioner)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg: RunConfig, out: Path, command: str) -> None:
    write_json(out / "resolved_config.json", {"command": command, "version": __version__, **cfg.to_dict()})


def cmd_info(cfg: RunConfig, args) -> int:
    seq, scale = _sequence(cfg)
    report = validate_mesh(seq[0])
    rows = []
    for i, f in enumerate(seq.frames):
        rows.append({
            "frame": i,
            "time": f.frame_time,
            "vertices": f.n_vertices,
            "triangles": f.n_triangles,
            "euler": f.euler_characteristic(),
            "h": max_element_diameter(f),
            "area": f.total_area(),
        })
    print(f"frames: {len(seq)}  unit_scale: {scale:g}  valid: {report.accepted}")
    for v in report.violations():
        print(f"  violation: {v}")
    print(f"{'frame':>5} {'time':>10} {'V':>7} {'F':>7} {'chi':>4} {'h':>12} {'area':>14}")
    for r in rows:
        print(f"{r['frame']:>5} {r['time']:>10.4g} {r['vertices']:>7} {r['triangles']:>7} "
              f"{r['euler']:>4} {r['h']:>12.6g} {r['area']:>14.8g}")
    if args.json:
        write_json(args.json, {"unit_scale": scale, "valid": report.accepted, "frames": rows})
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    seq, _ = _sequence(cfg)
    out = _outdir(cfg)
    ext = args.format
    names = []
    for i, f in enumerate(seq.frames):
        name = f"frame.{i:04d}.{ext}"
        write_mesh_frame(out / name, f, ext)
        names.append(name)
    write_manifest(out / "manifest.toml", names, seq.times, 1.0, ext)
    _echo(cfg, out, "synth")
    print(f"wrote {len(names)} frames and manifest.toml to {out}")
    return 0


def cmd_diffuse(cfg: RunConfig, args) -> int:
    seq, _ = _sequence(cfg)
    d = cfg.diffusion
    mesh0 = seq[0]
    if d.initial == "constant":
        u0 = np.full(mesh0.n_vertices, d.value)
    elif d.initial in ("x", "y", "z"):
        u0 = mesh0.vertices[:, "xyz".index(d.initial)].copy()
    else:
        raise ConfigError(f"diffusion.initial must be constant, x, y or z, got {d.initial!r}")
    out = _outdir(cfg)
    _echo(cfg, out, "diffuse")
    rows = []
    # |M u0|_1: scale for relative drift that stays meaningful for sign-changing fields
    scale = float(np.abs(assemble_mass(mesh0) @ u0).sum()) or 1.0

    def record(n, t, mesh, u):
        rows.append((t, discrete_mass(mesh, u), float(u.min()), float(u.max())))
        if cfg.output.vtk and d.vtk_every and n % d.vtk_every == 0:
            write_vtk_frame(out / f"diffuse.{n:05d}.vtk", mesh, {"u": u})

    run_diffusion(seq, u0, d.D, d.dt, t_end=d.t_end, streamline=d.streamline,
                  opts=_solver(cfg), callback=record, keep=False)
    with open(out / "diffuse_mass.csv", "w") as fh:
        fh.write("time_s,mass,u_min,u_max\n")
        for r in rows:
            fh.write(",".join(f"{x:.17g}" for x in r) + "\n")
    m0 = rows[0][1]
    drift = max(abs(r[1] - m0) for r in rows) / scale
    write_json(out / "diffuse_result.json", {"steps": len(rows) - 1, "t_end": rows[-1][0],
                                              "mass_initial": m0, "max_relative_mass_drift": drift})
    print(f"{len(rows) - 1} steps to t={rows[-1][0]:g}; max relative mass drift {drift:.3e}")
    return 0


def _frap_one(seq, scale, cfg: RunConfig, start: int, out: Path):
    f = cfg.frap
    frame = seq[start]
    roi = RoiSpec(tuple(f.roi_center), f.roi_radius) if f.roi_radius else RoiSpec.quarter_radius(frame, f.roi_center)
    fc = FrapConfig(
        D=f.D_um2_per_s / scale**2, dt=f.dt, fit_window=f.fit_window, duration=f.duration,
        roi=roi, start_frame=start, sampling=f.sampling, membership=f.membership, streamline=f.streamline,
    )
    res = run_frap(seq, fc, _solver(cfg))
    write_recovery_csv(out / f"recovery.{start:04d}.csv", res.times, res.mean_concentration, res.roi_area)
    record = res.summary()
    record["config"] = {
        "D_mesh_units2_per_s": fc.D, "D_um2_per_s": f.D_um2_per_s, "unit_scale": scale,
        "dt": fc.dt, "fit_window": fc.fit_window, "duration": fc.simulated_duration,
        "roi_center": list(roi.center), "roi_radius": roi.radius, "start_frame": start,
        "sampling": fc.sampling, "membership": fc.membership,
    }
    write_json(out / f"frap.{start:04d}.json", record)
    return start, record


def cmd_frap(cfg: RunConfig, args) -> int:
    seq, scale = _sequence(cfg)
    out = _outdir(cfg)
    _echo(cfg, out, "frap")
    starts = cfg.frap.start_frames
    with ThreadPoolExecutor(max_workers=max(1, cfg.solver.threads)) as pool:
        results = list(pool.map(lambda s: _frap_one(seq, scale, cfg, s, out), starts))
    print(f"{'start':>5} {'A':>10} {'B (s)':>10} {'T1/2 (s)':>10} {'bleached':>9}  note")
    for start, r in results:
        def fmt(x):
            return f"{x:>10.4g}" if x is not None else f"{'-':>10}"
        note = "degenerate fit" if r["degenerate"] else ""
        print(f"{start:>5} {fmt(r['A'])} {fmt(r['B'])} {fmt(r['T_half'])} {r['bleached_fraction']:>9.4f}  {note}")
    return 0


def cmd_rds(cfg: RunConfig, args) -> int:
    r = cfg.rds
    seq, _ = _sequence(cfg)
    params = SchnakenbergParams(r.D_u, r.D_w, r.gamma, r.a, r.b)
    rc = RdsConfig(params, r.dt, r.swap_interval, r.t_end, r.amplitude, r.seed, r.snapshot_every, r.streamline)
    out = _outdir(cfg)
    _echo(cfg, out, "rds")
    source = seq[0] if cfg.sequence.manifest is None and cfg.sequence.synthetic == "static_sphere" else seq
    entries = []

    def save(snap):
        name = None
        if cfg.output.vtk:
            name = f"rds.{len(entries):04d}.vtk"
            write_vtk_frame(out / name, snap.mesh, {"u": snap.u, "w": snap.w})
        entries.append({"file": name, **snap.stats()})
        logger.info("t=%g u_std=%.4g", snap.time, entries[-1]["u_std"])

    run_rds(source, rc, _solver(cfg), on_snapshot=save)
    write_json(out / "rds_manifest.json", {"seed": r.seed, "config": cfg.to_dict()["rds"], "snapshots": entries})
    last = entries[-1]
    print(f"{len(entries)} snapshots; t={last['time']:g} u_std={last['u_std']:.4g} "
          f"u in [{last['u_min']:.4g}, {last['u_max']:.4g}]")
    return 0


def cmd_fit(cfg: RunConfig, args) -> int:
    from .frap import recovery_fit

    t, y, _ = read_recovery_csv(args.csv)
    window = args.window if args.window is not None else float(t.max())
    fit, t_half = recovery_fit(t, y, window)
    record = {
        "A": fit.A, "B": fit.B, "A_stderr": fit.stderr[0], "B_stderr": fit.stderr[1],
        "T_half": t_half, "rss": fit.rss, "degenerate": fit.degenerate, "converged": fit.converged,
        "window": window, "samples": int((t <= window).sum()), "source": str(args.csv),
    }
    if fit.degenerate:
        print(f"degenerate fit: {fit.message}")
    print(f"A = {fit.A:.6g} (+/- {fit.stderr[0]:.2g})")
    print(f"B = {fit.B:.6g} s (+/- {fit.stderr[1]:.2g})")
    print(f"T1/2 = {t_half:.6g} s")
    if args.output_dir:
        out = _outdir(cfg)
        _echo(cfg, out, "fit")
        write_json(out / "fit.json", record)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--output-dir", help="output directory (overrides [output] directory)")
    common.add_argument("--manifest", help="frame sequence manifest (overrides [sequence] manifest)")
    common.add_argument("--synthetic", choices=["static_sphere", "expanding_sphere", "oscillating_ellipsoid"])
    common.add_argument("--subdivisions", type=int)
    common.add_argument("--frames", type=int, help="number of frames to generate or read")
    common.add_argument("--frame-dt", type=float)
    common.add_argument("--dt", type=float, help="time step of the selected run")
    common.add_argument("--seed", type=int)
    common.add_argument("--no-vtk", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="esfem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("info", parents=[common], help="frame statistics")
    q.add_argument("--json", help="also write the statistics as JSON")
    q = sub.add_parser("synth", parents=[common], help="write a synthetic sequence")
    q.add_argument("--format", choices=["off", "bin"], default="off")
    q = sub.add_parser("diffuse", parents=[common], help="advection-diffusion run")
    q.add_argument("--D", type=float)
    q.add_argument("--t-end", type=float)
    q.add_argument("--initial", choices=["constant", "x", "y", "z"])
    q = sub.add_parser("frap", parents=[common], help="FRAP simulation and recovery fit")
    q.add_argument("--D", type=float, help="diffusivity in um^2/s")
    q.add_argument("--roi-center", type=float, nargs=3)
    q.add_argument("--roi-radius", type=float)
    q.add_argument("--start-frames", type=int, nargs="+")
    q.add_argument("--fit-window", type=float)
    q.add_argument("--duration", type=float)
    q.add_argument("--sampling", choices=["frozen", "fixed-ball"])
    q = sub.add_parser("rds", parents=[common], help="reaction-diffusion pattern run")
    q.add_argument("--t-end", type=float)
    q.add_argument("--snapshot-every", type=float)
    q = sub.add_parser("fit", parents=[common], help="fit a recovery CSV")
    q.add_argument("csv")
    q.add_argument("--window", type=float)
    return p


def _apply_overrides(cfg: RunConfig, args) -> None:
    def put(key, value):
        if value is not None:
            cfg.set(key, value)

    put("output.directory", args.output_dir)
    put("sequence.manifest", args.manifest)
    put("sequence.synthetic", args.synthetic)
    put("sequence.subdivisions", args.subdivisions)
    put("sequence.frames", args.frames)
    put("sequence.frame_dt", args.frame_dt)
    if args.no_vtk:
        cfg.output.vtk = False
    section = {"diffuse": "diffusion", "frap": "frap", "rds": "rds"}.get(args.command)
    if section:
        put(f"{section}.dt", args.dt)
    put("rds.seed", args.seed)
    if args.command == "diffuse":
        put("diffusion.D", args.D)
        put("diffusion.t_end", args.t_end)
        put("diffusion.initial", args.initial)
    elif args.command == "frap":
        put("frap.D_um2_per_s", args.D)
        put("frap.roi_center", args.roi_center)
        put("frap.roi_radius", args.roi_radius)
        put("frap.start_frames", args.start_frames)
        put("frap.fit_window", args.fit_window)
        put("frap.duration", args.duration)
        put("frap.sampling", args.sampling)
    elif args.command == "rds":
        put("rds.t_end", args.t_end)
        put("rds.snapshot_every", args.snapshot_every)


COMMANDS = {
    "info": cmd_info, "synth": cmd_synth, "diffuse": cmd_diffuse,
    "frap": cmd_frap, "rds": cmd_rds, "fit": cmd_fit,
}


def _fail(category: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"esfem: error[{category}]: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, args)
    except (StepError, SolverError, FitError, FloatingPointError) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except (ConfigError, FormatError, MeshError, ValueError, FileNotFoundError) as exc:
        return _fail("validation", exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
