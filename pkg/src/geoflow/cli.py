"""Command-line entry points: experiment runners with persisted, reproducible
outputs.

Exit status: 0 on pass, 1 on scientific failure (an asserted property did not
hold), 2 on usage errors (malformed configs emit machine-readable JSON on
stderr).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import experiments
from .birkhoff import annuli_of, boundary_budget, scan
from .curves import chart_circle, figure_eight, perturbed_geodesic_curve, perturbed_parallel
from .flow import run
from .geodesics import (
    exact_meridian,
    exact_meridian_circle,
    exact_parallel,
    exact_torus_line,
    refine_closed,
)
from .knots import FlatKnotSignature, signature, spectrum
from .curves import curve_from_closed_geodesic
from .profiles import build_cap
from .reporting import RunWriter, deterministic_json
from .surfaces import FlatTorus, factor_from_json, surface_from_json
from .variational import cap_jacobi_transfer_check, make_index_report


class UsageError(ValueError):
    pass


def _require_keys(doc: dict, allowed: set[str], context: str):
    extra = set(doc) - allowed
    if extra:
        raise UsageError(f"unknown keys in {context}: {sorted(extra)}")


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _resolve_geodesic(surface, doc: dict):
    _require_keys(doc, {"kind", "r", "theta0", "m", "n", "offset_x", "offset_y"}, "geodesic spec")
    kind = doc.get("kind")
    if kind == "parallel":
        return exact_parallel(surface, float(doc["r"]))
    if kind == "meridian":
        return exact_meridian(surface, float(doc.get("theta0", 0.0)))
    if kind == "meridian_circle":
        return exact_meridian_circle(surface, float(doc.get("theta0", 0.0)))
    if kind == "torus_line":
        return exact_torus_line(
            surface, int(doc.get("m", 1)), int(doc.get("n", 0)),
            (float(doc.get("offset_x", 0.0)), float(doc.get("offset_y", 0.0))),
        )
    raise UsageError(f"unknown geodesic kind {kind!r}")


def _resolve_curve(surface, doc: dict, spacing: float):
    _require_keys(
        doc,
        {"generator", "chart_id", "center", "radius", "size", "r", "amplitude", "mode",
         "phase", "theta0"},
        "curve spec",
    )
    gen = doc.get("generator")
    if gen == "chart_circle":
        return chart_circle(
            surface, int(doc.get("chart_id", 0)), tuple(doc["center"]), float(doc["radius"]),
            spacing,
        )
    if gen == "figure_eight":
        return figure_eight(
            surface, int(doc.get("chart_id", 0)), tuple(doc["center"]), float(doc["size"]),
            spacing,
        )
    if gen == "perturbed_parallel":
        return perturbed_parallel(
            surface, float(doc["r"]), float(doc.get("amplitude", 0.05)),
            int(doc.get("mode", 2)), spacing, float(doc.get("phase", 0.0)),
        )
    if gen == "perturbed_meridian":
        base = surface
        while hasattr(base, "base"):
            base = base.base
        mer = exact_meridian(base, float(doc.get("theta0", 0.0)))
        return perturbed_geodesic_curve(
            mer, float(doc.get("amplitude", 0.02)), int(doc.get("mode", 2)), spacing,
            float(doc.get("phase", 0.0)),
        )
    raise UsageError(f"unknown curve generator {gen!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_cap(config, writer, seed, fmt):
    _require_keys(config, {"r0", "shoot_tolerance", "xi_grid_points"}, "cap config")
    cap = build_cap(float(config.get("r0", 2.0)),
                    shoot_tolerance=float(config.get("shoot_tolerance", 1e-10)))
    n_grid = int(config.get("xi_grid_points", 12))
    xis = np.linspace(0.1, math.pi / 2, n_grid)
    from .geodesics import cap_rotation

    thetas = []
    exits = []
    for xi in xis:
        th, te = cap_rotation(cap, float(xi))
        thetas.append(th)
        exits.append(te)
    residuals = [cap_jacobi_transfer_check(cap, float(xi)) for xi in xis[:: max(1, n_grid // 6)]]
    checks = cap.check_invariants()
    report = {
        "r0": cap.r0,
        "scale_param": cap.scale_param,
        "invariants": checks,
        "invariants_pass": cap.is_valid(),
        "theta": {"xi": xis.tolist(), "value": thetas, "t_exit": exits},
        "theta_strictly_decreasing": bool(np.all(np.diff(thetas) < 0)),
        "theta_above_pi": bool(np.all(np.asarray(thetas) >= math.pi - 1e-9)),
        "jacobi_transfer_max_residual": float(max(residuals)),
    }
    if fmt == "csv":
        import io

        buf = io.StringIO()
        data = np.column_stack([cap.r_grid, cap.rho_grid, cap.rho_dot_grid,
                                cap.curvature(cap.r_grid)])
        np.savetxt(buf, data, delimiter=",", header="r,rho,rho_dot,R", comments="")
        writer.write_text("profile.csv", buf.getvalue())
    writer.write_json("report.json", report)
    ok = report["invariants_pass"] and report["theta_strictly_decreasing"] and (
        report["jacobi_transfer_max_residual"] <= 1e-5
    )
    return 0 if ok else 1


def cmd_flow(config, writer, seed, fmt):
    _require_keys(config, {"surface", "curve", "scheme", "t_max", "spacing", "tolerances"},
                  "flow config")
    surface = surface_from_json(config["surface"])
    spacing = float(config.get("spacing", 0.02))
    c0 = _resolve_curve(surface, config["curve"], spacing)
    tol = config.get("tolerances", {})
    _require_keys(tol, {"kappa_tol", "rho_stop"}, "tolerances")
    result = run(
        surface,
        c0,
        t_max=float(config.get("t_max", 10.0)),
        scheme=config.get("scheme", "semi_implicit"),
        kappa_tol=float(tol.get("kappa_tol", 1e-5)),
        rho_stop=tol.get("rho_stop"),
    )
    writer.write_frames_jsonl("frames.jsonl", result)
    report = {
        "fate": result.fate,
        "fate_detail": result.fate_detail,
        "steps": result.steps,
        "initial_length": float(result.lengths[0]),
        "final_length": float(result.lengths[-1]),
        "length_monotone": bool(np.all(np.diff(result.lengths) <= 1e-12)),
    }
    writer.write_json("report.json", report)
    return 0 if report["length_monotone"] else 1


def cmd_spectrum(config, writer, seed, fmt):
    _require_keys(
        config,
        {"surface", "filter", "n_seeds", "spacing", "flow_t_max", "generator"},
        "spectrum config",
    )
    surface = surface_from_json(config["surface"])
    spacing = float(config.get("spacing", 0.02))
    base = surface
    while hasattr(base, "base"):
        base = base.base
    filt_doc = config.get("filter")
    refs = []
    if hasattr(base, "equator_r"):
        refs = [
            curve_from_closed_geodesic(exact_parallel(surface, r), spacing)
            for r in base.equator_r
        ]
    filt = None
    if filt_doc is not None:
        _require_keys(filt_doc, {"self_x", "ref_x", "htpy"}, "signature filter")
        htpy = filt_doc.get("htpy", "trivial")
        filt = FlatKnotSignature(
            self_x=int(filt_doc.get("self_x", 0)),
            ref_x=tuple(filt_doc.get("ref_x", [])),
            htpy=tuple(htpy) if isinstance(htpy, list) else htpy,
            primitive=True,
        )
    rng = np.random.Generator(np.random.Philox(key=seed))
    gen_doc = config.get("generator", {"kind": "perturbed_meridian"})
    seeds = []
    n_seeds = int(config.get("n_seeds", 8))
    for i in range(n_seeds):
        amp = 0.01 + 0.03 * rng.random()
        mode = int(rng.integers(2, 4))
        phase = float(rng.random() * 2 * math.pi)
        if gen_doc.get("kind") == "perturbed_parallel":
            seeds.append(perturbed_parallel(surface, float(gen_doc["r"]), amp, mode, spacing, phase))
        else:
            mer = exact_meridian(base, float(rng.random() * 2 * math.pi))
            seeds.append(perturbed_geodesic_curve(mer, amp, mode, spacing, phase))
    rep = spectrum(
        surface, filt, refs, seeds,
        flow_policy={"t_max": float(config.get("flow_t_max", 40.0)),
                     "kappa_tol": 3e-4, "dwell_steps": 20},
    )
    writer.write_json("report.json", rep.to_json_dict())
    return 0 if (filt is None or rep.entries or rep.diagnostics) else 1


def cmd_index(config, writer, seed, fmt):
    _require_keys(config, {"surface", "geodesic", "n_nodes"}, "index config")
    surface = surface_from_json(config["surface"])
    geo = _resolve_geodesic(surface, config["geodesic"])
    report = make_index_report(surface, geo, n_nodes=int(config.get("n_nodes", 256)))
    doc = report.to_json_dict()
    doc["length"] = geo.length
    writer.write_json("report.json", doc)
    return 0 if report.method_agreement else 1


def cmd_scan(config, writer, seed, fmt):
    _require_keys(
        config, {"surface", "geodesics", "n_samples", "t_cap", "h_base", "probes"},
        "scan config",
    )
    surface = surface_from_json(config["surface"])
    geos = [_resolve_geodesic(surface, g) for g in config["geodesics"]]
    annuli = annuli_of(surface, geos)
    report = scan(
        surface,
        annuli,
        n_samples=int(config.get("n_samples", 10000)),
        t_cap=config.get("t_cap"),
        seed=seed,
        h_base=float(config.get("h_base", 0.01)),
    )
    doc = report.to_json_dict()
    doc["boundary_budget"] = boundary_budget(surface, len(geos))
    writer.write_json("report.json", doc)
    return 0


def cmd_stability(config, writer, seed, fmt):
    _require_keys(config, {"surface", "factor", "epsilon", "n_extra_seeds", "spacing"},
                  "stability config")
    surface = None
    if "surface" in config:
        surface = surface_from_json(config["surface"])
    factor = factor_from_json(config["factor"]) if "factor" in config else None
    report = experiments.stability_experiment(
        base_surface=surface,
        factor=factor,
        epsilon=float(config.get("epsilon", 0.05)),
        seed=seed,
        n_extra_seeds=int(config.get("n_extra_seeds", 2)),
        spacing=float(config.get("spacing", 0.015)),
    )
    writer.write_json("report.json", report)
    return 0 if report.get("verdict") == "pass" else 1


def cmd_theorem_c(config, writer, seed, fmt):
    _require_keys(
        config,
        {"cap_r0", "cylinder_length", "factor", "n_seeds", "spacing", "flow_t_max"},
        "theorem-c config",
    )
    factor = factor_from_json(config["factor"]) if "factor" in config else None
    report = experiments.theorem_c_experiment(
        cap_r0=float(config.get("cap_r0", 2.0)),
        cylinder_length=float(config.get("cylinder_length", 1.0)),
        factor=factor,
        n_seeds=int(config.get("n_seeds", 3)),
        seed=seed,
        spacing=float(config.get("spacing", 0.02)),
        flow_t_max=float(config.get("flow_t_max", 40.0)),
    )
    writer.write_json("report.json", report)
    return 0 if report.get("verdict") == "pass" else 1


COMMANDS = {
    "cap": cmd_cap,
    "flow": cmd_flow,
    "spectrum": cmd_spectrum,
    "index": cmd_index,
    "scan": cmd_scan,
    "stability": cmd_stability,
    "theorem-c": cmd_theorem_c,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="geoflow",
        description="Geodesic dynamics workbench: flows, spectra, scans, experiments",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=False, help="JSON config path")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="64-bit experiment seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (falls back to GEOFLOW_THREADS)")
    parser.add_argument("--format", choices=["json", "csv"], default="json")
    args = parser.parse_args(argv)

    if args.threads is None:
        args.threads = int(os.environ.get("GEOFLOW_THREADS", "1"))

    config = {}
    if args.config:
        try:
            config = _load_config(args.config)
        except UsageError as exc:
            sys.stderr.write(deterministic_json({"error": str(exc)}))
            return 2
    t0 = time.time()
    writer = RunWriter(args.out, args.command, {"command": args.command, "seed": args.seed,
                                                **config})
    try:
        status = COMMANDS[args.command](config, writer, args.seed, args.format)
    except UsageError as exc:
        sys.stderr.write(deterministic_json({"error": str(exc)}))
        return 2
    except Exception as exc:  # scientific/runtime failure with diagnostics
        writer.write_json("error.json", {"error": str(exc), "type": type(exc).__name__})
        writer.finish(time.time() - t0)
        sys.stderr.write(deterministic_json({"error": str(exc)}))
        return 1
    writer.finish(time.time() - t0)
    print(str(writer.dir))
    return status


if __name__ == "__main__":
    sys.exit(main())
