"""Command-line interface: simulate, integrate-history, bench, approx-check.

The run configuration is a JSON file (tree of sections, SI units); a fully
resolved copy is written into every run directory as the manifest, together
with wall-clock per phase, so runs are reproducible from their outputs.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime error.
"""

import argparse
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .bench import (
    BLOCK_SIZES,
    count_flops,
    generate_layout,
    measure_bandwidth,
    measure_peak_flops,
    measure_throughput,
    roofline,
)
from .fastmath import error_sweep
from .integrator import IntegratorConfig, integrate_history
from .kinetics import DEFAULT_PARAMS, KineticsParams, PhaseState
from .output import write_csv, write_probe_csv, write_vtk_snapshot
from .scanpath import PathError, ScanPath, four_islands, parse_path_file, serpentine
from .thermal import (
    BuildGeometry,
    BuildSchedule,
    HeatSource,
    ThermalParams,
    run_build,
    stable_dt,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field."""


def _get(cfg, path, default=None, required=False):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if required:
                raise ConfigError(f"missing required config field: {path}")
            return default
        node = node[key]
    return node


def load_config(path):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    return cfg


def _build_geometry(cfg):
    g = _get(cfg, "geometry", {}, required=True)
    geom = BuildGeometry(
        plate_size=tuple(g.get("plate_size", (1.2e-3, 1.2e-3, 0.2e-3))),
        part_size=tuple(g.get("part_size", (1.0e-3, 1.0e-3, 0.25e-3))),
        voxel=float(g.get("voxel", 0.05e-3)),
    )
    for name, v in (("voxel", geom.voxel),):
        if v <= 0:
            raise ConfigError(f"geometry.{name} must be positive")
    return geom


def _build_schedule(cfg):
    s = _get(cfg, "schedule", {})
    sched = BuildSchedule(
        dt_active=float(s.get("dt_active", 2e-5)),
        interlayer_dwell=float(s.get("interlayer_dwell", 1.0)),
        initial_dwell_steps=int(s.get("initial_dwell_steps", 2000)),
        growth_every=int(s.get("growth_every", 10)),
        dt_max=float(s.get("dt_max", 0.1)),
        final_cooldown=float(s.get("final_cooldown", 100.0)),
        preheat=float(s.get("preheat", 293.0)),
        room=float(s.get("room", 293.0)),
    )
    if sched.dt_active <= 0 or sched.dt_max <= 0:
        raise ConfigError("schedule.dt_active and schedule.dt_max must be positive")
    return sched


def _build_params(cfg):
    kp = KineticsParams(**_get(cfg, "kinetics", {}))
    tp = ThermalParams(**_get(cfg, "thermal", {}))
    return kp, tp


def _build_integrator(cfg):
    i = _get(cfg, "integrator", {})
    return IntegratorConfig(
        scheme=i.get("scheme", "explicit"),
        dt_sub_max=float(i.get("dt_sub_max", 0.01)),
        eps_abs=float(i.get("eps_abs", 1e-10)),
        eps_rel=float(i.get("eps_rel", 1e-3)),
        max_fixed_point_iters=int(i.get("max_fixed_point_iters", 50)),
        initiation_threshold=float(i.get("initiation_threshold", 1e-15)),
    )


def _build_scan(cfg, geometry):
    scan = _get(cfg, "scan", {}, required=True)
    strategy = scan.get("strategy", "serpentine")
    dwell = float(scan.get("dwell", 1.0))
    n_layers = geometry.grid[3]
    hatch = float(scan.get("hatch", 0.08e-3))
    speed = float(scan.get("speed", 0.960))
    power = float(scan.get("power", 180.0))
    if strategy.startswith("file:"):
        with open(strategy[5:]) as f:
            return parse_path_file(f.read())
    gen = {"serpentine": serpentine, "four_islands": four_islands}.get(strategy)
    if gen is None:
        raise ConfigError(f"scan.strategy must be serpentine, four_islands or file:<path>, "
                          f"got {strategy!r}")
    segs = []
    for layer in range(n_layers):
        segs.extend(gen(geometry.part_extent, hatch, speed, power, layer))
    return ScanPath(segs, dwell)


def cmd_simulate(args):
    cfg = load_config(args.config)
    geometry = _build_geometry(cfg)
    schedule = _build_schedule(cfg)
    kin_params, th_params = _build_params(cfg)
    icfg = _build_integrator(cfg)
    scan = _build_scan(cfg, geometry)
    source = HeatSource(
        w_eff=float(_get(cfg, "scan.power", 180.0)),
        radius=float(_get(cfg, "scan.beam_radius", 0.06e-3)),
        h_powder=geometry.voxel,
    )
    out_dir = _get(cfg, "output.directory", args.out or "run_out")
    os.makedirs(out_dir, exist_ok=True)
    probe_points = [tuple(p) for p in _get(cfg, "output.probe_points", [])]
    nx, ny, nz_plate, n_layers = geometry.grid
    for p in probe_points:
        lims = (geometry.plate_size[0], geometry.plate_size[1],
                geometry.plate_size[2] + geometry.part_size[2])
        if not all(0 <= v <= lim for v, lim in zip(p, lims)):
            raise ConfigError(f"output.probe_points entry {p} outside the domain")
    snapshot_every = _get(cfg, "output.snapshot_every_layers", 1)
    threads = args.threads

    wall = {}
    t0 = time.perf_counter()
    snaps = []

    def snapshot_hook(label, t_now, field, fields):
        is_layer = label.startswith("layer_")
        if is_layer and snapshot_every:
            layer = int(label.split("_")[1])
            if (layer + 1) % snapshot_every != 0:
                return
        path = os.path.join(out_dir, f"{label}.vtk")
        write_vtk_snapshot(path, field, fields, label)
        snaps.append({"label": label, "t": t_now, "file": os.path.basename(path)})

    field, fields, probes = run_build(
        geometry, scan, schedule, th_params, kin_params, icfg, source,
        n_lanes=args.lanes, threads=threads, probe_points=probe_points,
        snapshot_hook=snapshot_hook)
    wall["build_s"] = time.perf_counter() - t0
    wall.update(probes.timings)

    for pi, rows in probes.items():
        write_probe_csv(os.path.join(out_dir, f"probe_{pi}.csv"), rows)

    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "config": cfg,
        "resolved": {
            "grid": geometry.grid,
            "stable_dt_s": stable_dt(geometry.voxel, th_params),
            "n_segments": len(scan.segments),
            "lanes": args.lanes,
            "threads": threads,
        },
        "wall_clock": wall,
        "snapshots": snaps,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    print(f"simulate: wrote {len(snaps)} snapshots and {len(probes)} probes to {out_dir}")
    return EXIT_OK


def cmd_integrate_history(args):
    data = np.loadtxt(args.history, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise ConfigError("history CSV needs columns t,T")
    times, temps = data[:, 0], data[:, 1]
    if np.any(np.diff(times) <= 0):
        raise ConfigError("history times must be strictly increasing")
    params = DEFAULT_PARAMS
    config = IntegratorConfig(scheme=args.scheme, dt_sub_max=args.dt_sub_max)
    if args.config:
        cfg = load_config(args.config)
        params = KineticsParams(**_get(cfg, "kinetics", {}))
        config = _build_integrator(cfg).with_overrides(scheme=args.scheme)
    out = integrate_history(times, temps, params=params, config=config)
    rows = [(t, T, *phases) for t, T, phases in zip(times, temps, out)]
    write_probe_csv(args.out, rows)
    print(f"integrate-history: wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_bench(args):
    threads = args.threads
    bw = measure_bandwidth(threads=threads)
    pk = measure_peak_flops()
    runs = []
    rows = [("block_size", "n_lanes", "scheme", "dof_per_s", "seconds",
             "gflops", "intensity")]
    for bs in (args.block_size or list(BLOCK_SIZES)):
        layout = generate_layout(bs, args.points, seed=args.seed)
        for lanes in (args.lanes or [1, 2, 4, 8]):
            for scheme in (args.scheme or ["explicit"]):
                dof_s, sec, iters = measure_throughput(
                    layout, scheme=scheme, n_lanes=lanes,
                    repetitions=args.reps, threads=threads)
                flops = count_flops(layout, scheme=scheme, n_lanes=lanes, iters=iters)
                bytes_modeled = 72 * layout.n_points
                runs.append({"label": f"b{bs}_l{lanes}_{scheme}", "flops": flops,
                             "bytes": bytes_modeled, "seconds": sec})
                rows.append((bs, lanes, scheme, dof_s, sec,
                             flops / sec / 1e9, flops / bytes_modeled))
                print(f"block={bs:4d} lanes={lanes} {scheme:15s}: "
                      f"{dof_s/1e9:.4f} GDoF/s  ({flops/sec/1e9:.2f} GFlop/s)")
    rep = roofline(runs, measured_bandwidth=bw, peak_flops=pk,
                   instruction_mix_factor=args.mix_factor)
    print(f"bandwidth: {bw:.1f} GB/s  peak: {pk:.1f} GFlop/s  "
          f"memory-bound kinetics ceiling: {rep.memory_bound_dof_rate:.3f} GDoF/s")
    if args.out:
        with open(args.out, "w") as f:
            f.write("# " + ",".join(str(c) for c in rows[0]) + "\n")
            for r in rows[1:]:
                f.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                 for v in r) + "\n")
        base = os.path.splitext(args.out)[0]
        with open(base + "_roofline.csv", "w") as f:
            f.write(rep.to_csv())
        with open(base + "_roofline.dat", "w") as f:
            f.write(rep.to_gnuplot())
        print(f"bench: wrote {args.out} and {base}_roofline.{{csv,dat}}")
    return EXIT_OK


def cmd_approx_check(args):
    lo, hi = args.range
    rng = np.random.default_rng(0)
    if args.fn == "exp":
        xs = np.linspace(lo, hi, args.samples)
        exact, approx, rel = error_sweep("exp", xs)
    elif args.fn == "ln":
        if lo <= 0:
            raise ConfigError("ln range must be positive")
        xs = np.exp(np.linspace(np.log(lo), np.log(hi), args.samples))
        exact, approx, rel = error_sweep("ln", xs)
    elif args.fn == "pow":
        bases = 10.0 ** rng.uniform(np.log10(max(lo, 1e-12)), np.log10(hi), args.samples)
        expos = rng.uniform(0.0, 2.0, args.samples)
        xs = np.stack([bases, expos], axis=1)
        exact, approx, rel = error_sweep("pow", xs)
    else:
        raise ConfigError(f"unknown function {args.fn}")
    finite = np.isfinite(rel)
    print(f"approx-check {args.fn}: {args.samples} samples, "
          f"max rel err {np.nanmax(rel[finite]):.3e}")
    if args.out:
        x_col = xs if xs.ndim == 1 else xs[:, 0]
        write_csv(args.out, ["x", "exact", "approx", "rel_err"],
                  list(zip(x_col, exact, approx, rel)))
        print(f"approx-check: wrote {args.out}")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(
        prog="ti64micro",
        description="Scan-resolved Ti-6Al-4V microstructure simulation")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("TI64MICRO_THREADS", "1")),
                   help="worker threads (default: TI64MICRO_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a coupled layer build from a config file")
    s.add_argument("config", help="JSON run configuration")
    s.add_argument("--out", help="output directory override")
    s.add_argument("--lanes", type=int, default=8, choices=(1, 2, 4, 8))
    s.set_defaults(handler=cmd_simulate)

    s = sub.add_parser("integrate-history",
                       help="integrate the kinetics along a t,T history CSV")
    s.add_argument("history", help="CSV with header and columns t,T")
    s.add_argument("--out", default="phases.csv")
    s.add_argument("--scheme", default="explicit",
                   choices=("explicit", "crank_nicolson"))
    s.add_argument("--dt-sub-max", type=float, default=0.01)
    s.add_argument("--config", help="optional JSON config for parameter overrides")
    s.set_defaults(handler=cmd_integrate_history)

    s = sub.add_parser("bench", help="throughput and roofline benchmarks")
    s.add_argument("--block-size", type=int, action="append",
                   help="layout block size (repeatable; default 1 10 100)")
    s.add_argument("--points", type=int, default=400_000)
    s.add_argument("--lanes", type=int, action="append", choices=(1, 2, 4, 8))
    s.add_argument("--scheme", action="append",
                   choices=("explicit", "crank_nicolson"))
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mix-factor", type=float, default=1.0)
    s.add_argument("--out", help="CSV output path")
    s.set_defaults(handler=cmd_bench)

    s = sub.add_parser("approx-check", help="fast-math error sweep CSV")
    s.add_argument("--fn", default="exp", choices=("exp", "ln", "pow"))
    s.add_argument("--range", type=float, nargs=2, default=(-700.0, 709.0))
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--out", help="CSV output path")
    s.set_defaults(handler=cmd_approx_check)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except PathError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TypeError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
