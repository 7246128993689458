"""Command-line front end: one subcommand per workflow, JSON/CSV artifacts.

Every run echoes its resolved configuration (defaults applied) next to the
outputs, and every artifact header carries the configuration hash so files
can be traced back. Writes are atomic (temp file + rename). Exit codes:
0 success, 1 user error (arguments or configuration), 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import statistics
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    config_hash,
    crack_from_config,
    ga_from_config,
    integrator_from_config,
    load_config,
    material_from_config,
    mesh_from_config,
    penalty_from_config,
    sensors_from_config,
    space_from_config,
    split_from_config,
    validate_config,
)
from .hbm import AftConfig, ConvergenceError, SweepFailure, solve_mhb, sweep
from .identify import (
    Scenario,
    SurrogateEvaluator,
    measurement_records,
    monte_carlo,
    run_ga,
    synthesize_clean_measurement,
)
from .mesh import export_csv, insert_crack
from .model import assemble, calibrate, eigenmodes
from .rom import build_rb_model, build_sub_model, reduce_substructure_b
from .sdof import SdofParams, simulate_sdof, spectrum
from .timedomain import add_noise, extract_harmonics, integrate
from .transmissibility import (
    UndefinedTransmissibilityError,
    ordered_pairs,
    rmse_per_pair,
    tr_nonlinear,
    tr_surrogate,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write(path, text: str):
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload: dict, cfg_sha: str):
    payload = dict(payload)
    payload["_meta"] = {
        "config_sha256": cfg_sha,
        "tool": f"hotrkit {__version__}",
    }
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path, columns, rows, units: str, cfg_sha: str):
    lines = [
        f"# config_sha256: {cfg_sha}",
        f"# units: {units}",
    ]
    buf = [",".join(columns)]
    for row in rows:
        buf.append(",".join(
            f"{v:.12g}" if isinstance(v, float) else str(v) for v in row
        ))
    _atomic_write(path, "\n".join(lines + buf) + "\n")


def _echo_config(cfg, out_dir):
    sha = config_hash(cfg)
    _atomic_write(os.path.join(out_dir, "resolved_config.json"),
                  json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return sha


def _build_context(cfg):
    mesh = mesh_from_config(cfg)
    mat = material_from_config(cfg)
    cal = calibrate(mesh, mat, cfg["beam"]["thickness_mm"],
                    cfg["damping"]["zeta"],
                    cfg["load"]["midspan_deflection_mm"])
    sensors = sensors_from_config(cfg, mesh)
    k_p = penalty_from_config(cfg, mesh, mat)
    return mesh, mat, cal, sensors, k_p


def _build_system(cfg, cache_dir=None):
    """Model per the configured ROM kind; returns (system, info dict)."""
    mesh, mat, cal, sensors, k_p = _build_context(cfg)
    crack = crack_from_config(cfg)
    kind = cfg["rom"]["kind"]
    t0 = time.perf_counter()
    if kind == "full":
        system = assemble(mesh, mat, crack=crack, k_p=k_p,
                          thickness=cfg["beam"]["thickness_mm"],
                          sensors=sensors, calibration=cal)
        info = {"kind": "full", "size": system.n}
    elif kind == "RB":
        rm = build_rb_model(mesh, mat, crack, n_modes=cfg["rom"]["modes"],
                            calibration=cal, k_p=k_p,
                            thickness=cfg["beam"]["thickness_mm"],
                            sensors=sensors)
        system = rm.system
        info = {"kind": "RB", "size": rm.size,
                "timing": {"construct_s": rm.meta["construct_seconds"]}}
    else:
        rm = build_sub_model(mesh, mat, split_from_config(cfg), crack,
                             n_modes=cfg["rom"]["modes"], calibration=cal,
                             k_p=k_p, thickness=cfg["beam"]["thickness_mm"],
                             sensors=sensors, cache_dir=cache_dir)
        system = rm.system
        info = {"kind": "SUB", "size": rm.size,
                "timing": {"construct_s": rm.meta["construct_seconds"],
                           "offline_s": rm.meta["offline_seconds"]}}
    info.setdefault("timing", {})["build_total_s"] = time.perf_counter() - t0
    return system, info


def _sweep_omegas(cfg):
    sw = cfg["frequency"]["sweep"]
    freqs = np.linspace(sw["start_hz"], sw["stop_hz"], sw["count"])
    return freqs, 2 * np.pi * freqs


def _aft(cfg) -> AftConfig:
    return AftConfig(h=cfg["aft"]["harmonics"], n_samples=cfg["aft"]["samples"])


# --- subcommand handlers ----------------------------------------------------

def cmd_mesh(cfg, args, out_dir, sha):
    mesh = mesh_from_config(cfg)
    crack = crack_from_config(cfg)
    if crack is not None:
        mesh_out = insert_crack(mesh, crack)
    else:
        mesh_out = mesh
    export_csv(mesh_out, os.path.join(out_dir, "nodes.csv"),
               os.path.join(out_dir, "elements.csv"),
               header_lines=[f"config_sha256: {sha}", "units: mm"])
    return {"nodes": mesh_out.n_nodes, "elements": mesh_out.n_elements,
            "split_pairs": int(mesh_out.split_pairs.shape[0])}


def cmd_modes(cfg, args, out_dir, sha):
    system, info = _build_system(cfg, cache_dir=args.cache_dir)
    freqs, shapes = eigenmodes(system, args.count)
    rows = []
    for k, f in enumerate(freqs):
        v = shapes[:, k]
        kind = "n/a"
        if getattr(system, "dof_dir", None) is not None:
            ux = np.sqrt(np.mean(v[system.dof_dir == 0] ** 2))
            uy = np.sqrt(np.mean(v[system.dof_dir == 1] ** 2))
            kind = "bending" if uy > ux else "axial"
        rows.append((k + 1, float(f), kind))
    write_csv(os.path.join(out_dir, "modes.csv"),
              ["mode", "frequency_hz", "character"], rows,
              "frequency_hz: Hz", sha)
    return {"model": info, "frequencies_hz": [float(f) for f in freqs]}


def cmd_simulate_hbm(cfg, args, out_dir, sha):
    system, info = _build_system(cfg, cache_dir=args.cache_dir)
    aft = _aft(cfg)
    if args.sweep:
        freqs, omegas = _sweep_omegas(cfg)
    else:
        f = args.freq_hz or cfg["frequency"]["single_hz"]
        freqs = np.array([f])
        omegas = 2 * np.pi * freqs
    results = sweep(system, omegas, aft) if len(omegas) > 1 else \
        [solve_mhb(system, omegas[0], aft)]
    out = []
    rows = []
    n_sensors = system.sensor_rows.shape[0]
    for f_hz, sol in zip(freqs, results):
        if isinstance(sol, SweepFailure):
            out.append({"frequency_hz": float(f_hz), "converged": False,
                        "message": sol.message})
            continue
        eps = sol.sensor_coefficients(system.sensor_rows)
        out.append({
            "frequency_hz": float(f_hz),
            "converged": bool(sol.converged),
            "iterations": sol.iterations,
            "residual": sol.residual_norm,
            "sensor_coefficients": [
                [[float(c.real), float(c.imag)] for c in eps[p]]
                for p in range(aft.h + 1)
            ],
        })
        for p in range(aft.h + 1):
            rows.append((float(f_hz), p,
                         *[float(abs(eps[p, j])) for j in range(n_sensors)]))
    write_csv(os.path.join(out_dir, "hbm_spectra.csv"),
              ["frequency_hz", "order",
               *[f"abs_eps_sensor{j + 1}" for j in range(n_sensors)]],
              rows, "frequency_hz: Hz; strain coefficients: mm/mm", sha)
    write_json(os.path.join(out_dir, "hbm_results.json"),
               {"model": info, "results": out}, sha)
    n_fail = sum(1 for o in out if not o.get("converged"))
    return {"solved": len(out) - n_fail, "failed": n_fail, "model": info}


def cmd_simulate_time(cfg, args, out_dir, sha):
    system, info = _build_system(cfg, cache_dir=args.cache_dir)
    icfg = integrator_from_config(cfg)
    f_hz = args.freq_hz or cfg["frequency"]["single_hz"]
    omega = 2 * np.pi * f_hz
    hist = integrate(system, omega, icfg)
    level = cfg["noise"]["level_percent"]
    noisy = add_noise(hist.strains, level, args.seed).noisy if level > 0 \
        else hist.strains
    h = cfg["aft"]["harmonics"]
    coeffs = extract_harmonics(noisy, omega, hist.dt, h, t0=hist.t[0])
    n_sensors = system.sensor_rows.shape[0]
    rows = [(float(t), *[float(v) for v in noisy[i]])
            for i, t in enumerate(hist.t)]
    write_csv(os.path.join(out_dir, "time_series.csv"),
              ["t_s", *[f"sensor{j + 1}" for j in range(n_sensors)]],
              rows, "t_s: s; sensors: strain mm/mm", sha)
    write_json(os.path.join(out_dir, "harmonics.json"), {
        "model": info,
        "frequency_hz": float(f_hz),
        "noise_percent": level,
        "periods_to_steady": hist.periods_to_steady,
        "coefficients": [
            [[float(c.real), float(c.imag)] for c in coeffs[p]]
            for p in range(h + 1)
        ],
    }, sha)
    return {"periods_to_steady": hist.periods_to_steady, "model": info}


def cmd_reduce(cfg, args, out_dir, sha):
    mesh, mat, cal, sensors, k_p = _build_context(cfg)
    crack = crack_from_config(cfg)
    kind = cfg["rom"]["kind"]
    if kind == "full":
        raise UsageError("reduce needs rom.kind RB or SUB")
    if kind == "RB":
        rm = build_rb_model(mesh, mat, crack, n_modes=cfg["rom"]["modes"],
                            calibration=cal, k_p=k_p, sensors=sensors)
        report = {"kind": "RB", "size": rm.size,
                  "modal_coordinates": rm.modal_count,
                  "retained": int(len(rm.retained_map)),
                  "timing": {"construct_s": rm.meta["construct_seconds"]}}
    else:
        rm = build_sub_model(mesh, mat, split_from_config(cfg), crack,
                             n_modes=cfg["rom"]["modes"], calibration=cal,
                             k_p=k_p, sensors=sensors,
                             cache_dir=args.cache_dir)
        report = {"kind": "SUB", "size": rm.size,
                  "size_a": rm.meta["size_a"], "size_b": rm.meta["size_b"],
                  "interface_dofs": rm.meta["interface_dofs"],
                  "timing": {"online_s": rm.meta["construct_seconds"],
                             "offline_s": rm.meta["offline_seconds"]}}
    write_json(os.path.join(out_dir, "reduce_report.json"), report, sha)
    return report


def cmd_hotr(cfg, args, out_dir, sha):
    system, info = _build_system(cfg, cache_dir=args.cache_dir)
    if not system.contact_pairs:
        raise UsageError("transmissibility needs a cracked model (set crack)")
    aft = _aft(cfg)
    order = args.order
    freqs, omegas = _sweep_omegas(cfg)
    pairs = ordered_pairs(system.sensor_rows.shape[0])
    curves_n = {p: np.full(len(omegas), np.nan + 0j) for p in pairs}
    curves_s = {p: np.full(len(omegas), np.nan + 0j) for p in pairs}

    rows = []
    if args.method in ("nonlinear", "both"):
        for i, sol in enumerate(sweep(system, omegas, aft)):
            if isinstance(sol, SweepFailure):
                continue
            try:
                recs = tr_nonlinear(sol, system.sensor_rows, order, pairs)
            except UndefinedTransmissibilityError:
                continue
            for r in recs:
                curves_n[r.pair][i] = r.value
    if args.method in ("surrogate", "both"):
        for i, w in enumerate(omegas):
            try:
                recs = tr_surrogate(system, w, order, pairs)
            except UndefinedTransmissibilityError:
                continue
            for r in recs:
                curves_s[r.pair][i] = r.value
    for i, f_hz in enumerate(freqs):
        for pair in pairs:
            for method, curves in (("nonlinear", curves_n),
                                   ("surrogate", curves_s)):
                v = curves[pair][i]
                if np.isfinite(v):
                    rows.append((float(f_hz), pair[0] + 1, pair[1] + 1,
                                 method, float(abs(v)),
                                 float(np.angle(v))))
    write_csv(os.path.join(out_dir, "transmissibility.csv"),
              ["frequency_hz", "sensor_m", "sensor_n", "method",
               "abs_tr", "phase_rad"], rows,
              "frequency_hz: Hz; abs_tr: dimensionless; phase_rad: rad", sha)
    summary = {"model": info, "order": order, "method": args.method}
    if args.method == "both":
        rmse = rmse_per_pair(curves_n, curves_s)
        vals = [v for v in rmse.values() if math.isfinite(v)]
        summary["rmse"] = {
            "per_pair": {f"{m + 1},{n + 1}": v for (m, n), v in rmse.items()},
            "average": float(np.mean(vals)) if vals else None,
            "max": float(np.max(vals)) if vals else None,
        }
    write_json(os.path.join(out_dir, "hotr_report.json"), summary, sha)
    return summary


def _evaluator_from_config(cfg, cache_dir):
    mesh, mat, cal, sensors, k_p = _build_context(cfg)
    space = space_from_config(cfg)
    omega = 2 * np.pi * cfg["frequency"]["single_hz"]
    return SurrogateEvaluator(
        mesh, mat, space, omega, order=2,
        split=split_from_config(cfg), calibration=cal, k_p=k_p,
        thickness=cfg["beam"]["thickness_mm"], sensors=sensors,
        cache_dir=cache_dir,
    ), mesh, mat, cal, space


def _require_crack(cfg):
    crack = crack_from_config(cfg)
    if crack is None:
        raise UsageError("this command needs a crack in the configuration")
    return crack


def cmd_identify(cfg, args, out_dir, sha):
    evaluator, mesh, mat, cal, space = _evaluator_from_config(cfg, args.cache_dir)
    level = cfg["noise"]["level_percent"]
    if args.measurement:
        with open(args.measurement) as fh:
            meas_doc = json.load(fh)
        measured = {
            (int(m) - 1, int(n) - 1): complex(re, im)
            for (m, n), (re, im) in zip(meas_doc["pairs"], meas_doc["values"])
        }
    else:
        crack = _require_crack(cfg)
        theta = (crack.location_index,
                 list(space.depths).index(crack.depth_percent))
        clean = synthesize_clean_measurement(
            mesh, mat, space, theta, evaluator.omega,
            periods=cfg["measurement"]["periods"], calibration=cal,
        )
        measured = measurement_records(clean, level, args.seed,
                                       pairs=evaluator.pairs)
    ga_cfg = ga_from_config(cfg, args.seed)
    threshold = max(2.0 * level, 0.5)
    res = run_ga(space, ga_cfg, measured, evaluator, threshold=threshold)
    report = {
        "theta": {"location_index": res.theta[0],
                  "depth_percent": space.depths[res.theta[1]]},
        "objective_percent": res.J,
        "converged": res.converged,
        "generations": res.generations_run,
        "evaluations": res.evaluations,
        "trace": [[g, b, m] for g, b, m in res.trace],
        "seed": args.seed,
    }
    write_json(os.path.join(out_dir, "identification.json"), report, sha)
    return report


def cmd_montecarlo(cfg, args, out_dir, sha):
    replicates = args.replicates or cfg["montecarlo"]["replicates"]
    if replicates < 1:
        raise UsageError("replicates must be at least 1")
    evaluator, mesh, mat, cal, space = _evaluator_from_config(cfg, args.cache_dir)
    crack = _require_crack(cfg)
    theta = (crack.location_index,
             list(space.depths).index(crack.depth_percent))
    scenario = Scenario(
        true_theta=theta,
        noise_percent=cfg["noise"]["level_percent"],
        replicates=replicates,
        frequency_hz=cfg["frequency"]["single_hz"],
        measurement_periods=cfg["measurement"]["periods"],
        seed=args.seed,
    )
    result = monte_carlo(space, ga_from_config(cfg, args.seed), scenario,
                         evaluator, mesh=mesh, mat=mat, calibration=cal,
                         threads=args.threads)
    rows = [(loc, count) for loc, count in sorted(result.histogram.items())]
    write_csv(os.path.join(out_dir, "localization_histogram.csv"),
              ["location_index", "count"], rows,
              "location_index: vertical node line; count: replicates", sha)
    report = {
        "true_location": theta[0],
        "replicates": replicates,
        "noise_percent": scenario.noise_percent,
        "exact_location_probability": result.exact_location_prob,
        "exact_theta_probability": result.exact_theta_prob,
        "median_location_error_cells": result.median_location_error,
        "failures": len(result.failures),
    }
    write_json(os.path.join(out_dir, "montecarlo_summary.json"), report, sha)
    return report


def cmd_sdof_demo(cfg, args, out_dir, sha):
    s = cfg["sdof"]
    h = s["harmonics"]
    healthy = SdofParams(m=s["m"], c=s["c"], k=s["k"] + s["k0"], k0=0.0,
                         omega_f=s["omega_f"])
    cracked = SdofParams(m=s["m"], c=s["c"], k=s["k"], k0=s["k0"],
                         delta=s["delta"], omega_f=s["omega_f"])
    rows = []
    mags = {}
    for name, params in (("healthy", healthy), ("cracked", cracked)):
        hist = simulate_sdof(params)
        mags[name] = spectrum(hist.strains[:, 0], params.omega_f, hist.dt,
                              h=h, t0=hist.t[0])
    for p in range(h + 1):
        rows.append((p, p * s["omega_f"], float(mags["healthy"][p]),
                     float(mags["cracked"][p])))
    write_csv(os.path.join(out_dir, "sdof_spectrum.csv"),
              ["order", "frequency_rad_s", "healthy_mag", "cracked_mag"],
              rows, "frequency_rad_s: rad/s; magnitudes: displacement", sha)
    return {"harmonic_ratio_cracked": float(mags["cracked"][2]
                                            / mags["cracked"][1]),
            "harmonic_ratio_healthy": float(mags["healthy"][2]
                                            / mags["healthy"][1])}


def cmd_bench(cfg, args, out_dir, sha):
    mesh, mat, cal, sensors, k_p = _build_context(cfg)
    crack = _require_crack(cfg)
    aft = _aft(cfg)
    omega = 2 * np.pi * cfg["frequency"]["single_hz"]
    repeats = args.repeats
    table = {}
    for kind in ("RB", "SUB"):
        t_build = []
        models = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            if kind == "RB":
                rm = build_rb_model(mesh, mat, crack, cfg["rom"]["modes"],
                                    calibration=cal, k_p=k_p, sensors=sensors)
            else:
                rm = build_sub_model(mesh, mat, split_from_config(cfg), crack,
                                     cfg["rom"]["modes"], calibration=cal,
                                     k_p=k_p, sensors=sensors,
                                     cache_dir=args.cache_dir)
            t_build.append(time.perf_counter() - t0)
            models.append(rm)
        rm = models[-1]
        t_nl, t_apx = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            solve_mhb(rm.system, omega, aft)
            t_nl.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            tr_surrogate(rm.system, omega, 2)
            t_apx.append(time.perf_counter() - t0)
        construct = statistics.median(t_build)
        nl = statistics.median(t_nl)
        apx = statistics.median(t_apx)
        table[kind] = {
            "size": rm.size,
            "timing": {
                "construction_s": construct,
                "solution_nonlinear_s": nl,
                "solution_surrogate_s": apx,
                "solution_speedup": nl / apx,
                "total_nonlinear_s": construct + nl,
                "total_surrogate_s": construct + apx,
                "total_speedup": (construct + nl) / (construct + apx),
            },
        }
    report = {
        "frequency_hz": cfg["frequency"]["single_hz"],
        "repeats": repeats,
        "models": table,
        "timing": {"machine": platform.processor() or platform.machine(),
                   "python": platform.python_version()},
    }
    write_json(os.path.join(out_dir, "bench.json"), report, sha)
    return report


HANDLERS = {
    "mesh": cmd_mesh,
    "modes": cmd_modes,
    "simulate-hbm": cmd_simulate_hbm,
    "simulate-time": cmd_simulate_time,
    "reduce": cmd_reduce,
    "hotr": cmd_hotr,
    "identify": cmd_identify,
    "montecarlo": cmd_montecarlo,
    "sdof-demo": cmd_sdof_demo,
    "bench": cmd_bench,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="hotrkit",
                     description="Breathing-crack beam toolkit")
    parser.add_argument("--version", action="version",
                        version=f"hotrkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int,
                       default=os.cpu_count() or 1)
        p.add_argument("--out", default=".",
                       help="output directory (default: current)")
        p.add_argument("--cache-dir",
                       default=os.environ.get("HOTRKIT_CACHE_DIR"),
                       help="reduced-model cache directory")

    common(sub.add_parser("mesh", help="export the grid as CSV"))
    p = sub.add_parser("modes", help="natural frequencies of the model")
    common(p)
    p.add_argument("--count", type=int, default=6)
    p = sub.add_parser("simulate-hbm", help="harmonic-balance steady states")
    common(p)
    p.add_argument("--freq-hz", type=float)
    p.add_argument("--sweep", action="store_true",
                   help="run the configured frequency sweep")
    p = sub.add_parser("simulate-time", help="generalized-alpha time march")
    common(p)
    p.add_argument("--freq-hz", type=float)
    p = sub.add_parser("reduce", help="build a reduced model and report sizes")
    common(p)
    p = sub.add_parser("hotr", help="transmissibility curves and comparison")
    common(p)
    p.add_argument("--method", choices=["nonlinear", "surrogate", "both"],
                   default="both")
    p.add_argument("--order", type=int, default=2)
    p = sub.add_parser("identify", help="GA crack identification")
    common(p)
    p.add_argument("--measurement",
                   help="JSON file with measured transmissibility records")
    p = sub.add_parser("montecarlo", help="noise-robustness campaign")
    common(p)
    p.add_argument("--replicates", type=int)
    common(sub.add_parser("sdof-demo", help="bilinear oscillator spectrum"))
    p = sub.add_parser("bench", help="construction/solution timing table")
    common(p)
    p.add_argument("--repeats", type=int, default=5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = validate_config({})
        out_dir = args.out
        os.makedirs(out_dir, exist_ok=True)
        sha = _echo_config(cfg, out_dir)
        summary = HANDLERS[args.command](cfg, args, out_dir, sha)
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
        return 0
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(json.dumps({"error": {"kind": "user", "message": str(exc)}}),
              file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception as exc:   # machine-readable internal failure
        print(json.dumps({"error": {"kind": "internal",
                                    "type": type(exc).__name__,
                                    "message": str(exc)}}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
