"""Scenario-driven experiment runner.

Scenario files are flat key-value text with sections (INI), diff-friendly
for archiving runs.  `run` executes one scenario and writes a trajectory
CSV, a JSON summary, and optional SVG plots, all atomically; `refine`
repeats a scenario across halved grids and prints observed convergence
orders; `selberg` evaluates the constant-curvature baselines from a length
spectrum file.

Exit codes: 0 success, 1 input error, 2 invariant violation (e.g. a
negative Polyakov increment on a qualifying run).
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import determinant as det
from . import flow as flowmod
from . import potential as potmod
from .renorm import construct_area_prescribing_factor, renormalized_area
from .surface import InputError, build_model_surface, factor_from_json

FORMAT_VERSION = 1

CSV_COLUMNS = ["t", "sup_dev", "renorm_area", "omega_left", "omega_right",
               "r_left", "r_right", "logdet_increment", "h_max"]


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


# ---------------------------------------------------------------------------
# svg plots (hand-rolled; conveniences, not acceptance surfaces)


def svg_line_plot(xs, series, title, ylog=False, width=640, height=420):
    pad = 56
    xs = np.asarray(xs, dtype=float)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width/2:.0f}" y="20" text-anchor="middle" '
             f'font-size="14">{title}</text>']
    ys_all = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    if ylog:
        ys_all = ys_all[ys_all > 0]
        if len(ys_all) == 0:
            ys_all = np.array([1e-16, 1.0])
        lo, hi = math.log10(ys_all.min()), math.log10(ys_all.max())
    else:
        lo, hi = float(ys_all.min()), float(ys_all.max())
    if hi - lo < 1e-300:
        hi = lo + 1.0
    x0, x1 = float(xs.min()), float(xs.max())
    if x1 - x0 < 1e-300:
        x1 = x0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        if ylog:
            y = math.log10(y) if y > 0 else lo
        return height - pad - (y - lo) / (hi - lo) * (height - 2 * pad)

    lines.append(f'<rect x="{pad}" y="{pad}" width="{width-2*pad}" '
                 f'height="{height-2*pad}" fill="none" stroke="black"/>')
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    for i, (name, ys) in enumerate(sorted(series.items())):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}"
                       for x, y in zip(xs, np.asarray(ys, dtype=float)))
        col = colors[i % len(colors)]
        lines.append(f'<polyline points="{pts}" fill="none" stroke="{col}" '
                     f'stroke-width="1.5"/>')
        lines.append(f'<text x="{width-pad+4}" y="{pad+14*(i+1)}" '
                     f'font-size="11" fill="{col}">{name}</text>')
    lines.append(f'<text x="{pad}" y="{height-pad+28}" font-size="11">'
                 f'{x0:.4g}</text>')
    lines.append(f'<text x="{width-pad}" y="{height-pad+28}" font-size="11" '
                 f'text-anchor="end">{x1:.4g}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scenario parsing


def load_scenario(path):
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise InputError(f"cannot read scenario file {path}")
    if "surface" not in cp:
        raise InputError("scenario needs a [surface] section")
    return cp


def build_from_scenario(cp, grid_override=None):
    sconf = cp["surface"]
    n = grid_override or sconf.getint("grid_size", 512)
    surface = build_model_surface(
        sconf.get("left", "funnel"), sconf.get("right", "cusp"), n,
        scale=sconf.getfloat("scale", 0.0),
        core_length=sconf.getfloat("core_length", 1.0))
    iconf = cp["initial"] if "initial" in cp else {}
    kind = iconf.get("type", "none")
    amp = float(iconf.get("amplitude", 0.2))
    center = float(iconf.get("center", 0.5))
    width = float(iconf.get("width", 0.12))
    if kind == "none":
        omega0 = np.zeros(surface.n + 1)
    elif kind == "bump":
        omega0 = flowmod.bump_field(surface, amp, center, width)
    elif kind == "gaussian":
        omega0 = flowmod.gaussian_field(surface, amp, center, width)
    elif kind == "balanced_bump":
        omega0 = flowmod.balanced_area_bump(
            surface, amp, center=float(iconf.get("center", 0.60)),
            width=float(iconf.get("width", 0.08)),
            center2=float(iconf.get("center2", 0.44)),
            width2=float(iconf.get("width2", 0.08)))
    elif kind == "area_factor":
        target = float(iconf["target"])
        _, factor = construct_area_prescribing_factor(surface, target)
        omega0 = np.log(factor)
    elif kind == "file":
        omega0 = factor_from_json(Path(iconf["path"]).read_text()).omega
        if len(omega0) != surface.n + 1:
            raise InputError("initial factor file does not match the grid")
    else:
        raise InputError(f"unknown initial type {kind!r}")
    return surface, omega0


def flow_config_from_scenario(cp):
    fconf = cp["flow"] if "flow" in cp else {}
    norm_kind = fconf.get("normalization", "fixed")
    if norm_kind == "fixed":
        norm = flowmod.Fixed(float(fconf.get("constant", -2.0)))
    elif norm_kind == "average":
        norm = flowmod.RenormalizedAverage()
    elif norm_kind == "asymptotic":
        norm = flowmod.AsymptoticCurvature(fconf.get("end", "left"))
    else:
        raise InputError(f"unknown normalization {norm_kind!r}")
    dt = fconf.get("dt", None)
    return flowmod.FlowConfig(
        normalization=norm,
        dt=float(dt) if dt not in (None, "", "auto") else None,
        t_end=float(fconf.get("t_end", 5.0)),
        stepper=fconf.get("stepper", "imex"),
        convergence_threshold=float(fconf.get("threshold", 1e-8)),
        sample_interval=float(fconf.get("sample_interval", 0.02)))


# ---------------------------------------------------------------------------
# run


def _scenario_echo(cp):
    return {s: dict(cp[s]) for s in cp.sections()}


def run_scenario(path, out_dir=".", seed=0):
    """Execute a scenario; returns the exit status (0/1/2)."""
    cp = load_scenario(path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = cp.get("output", "prefix", fallback=Path(path).stem)
    want_svg = cp.getboolean("output", "svg", fallback=True)
    monitor_pot = cp.getboolean("monitor", "potential", fallback=True)
    monitor_led = cp.getboolean("monitor", "polyakov", fallback=True)
    pot_bc = cp.get("monitor", "bc", fallback="dirichlet")
    spectrum_path = cp.get("monitor", "selberg_spectrum", fallback=None)
    corrupt = cp.getfloat("debug", "corrupt_increments", fallback=0.0)

    surface, omega0 = build_from_scenario(cp)
    config = flow_config_from_scenario(cp)
    c = flowmod.normalization_constant(surface, omega0, config.normalization)
    trajectory, report = flowmod.run_flow(surface, omega0, config)

    ts = np.array([st.t for st in trajectory])
    areas = np.array([st.area.finite_part for st in trajectory])
    a0 = float(areas[0])
    law = flowmod.predicted_renormalized_area(
        ts, a0, surface.euler_characteristic, c) if c != 0 else areas
    area_dev = float(np.max(np.abs(areas - law)))

    # determinant ledger
    ledger = None
    increments = np.zeros(len(trajectory))
    qualifying = False
    status = 0
    f_closed = None
    if monitor_led:
        try:
            ledger = det.integrate_polyakov_along_flow(surface, trajectory, c)
            qualifying = True
        except InputError:
            ledger = None
        if ledger is not None:
            increments = np.array([r for _, r in ledger.increments])
            if corrupt:
                increments = increments + corrupt
                if float(np.min(increments)) < -1e-10:
                    status = 2
            w_total = trajectory[0].omega.omega - trajectory[-1].omega.omega
            try:
                f_closed = det.polyakov_increment_closed_form(
                    surface, trajectory[-1].omega.omega, w_total)
            except det.AdmissibilityError:
                f_closed = None

    hmax = None
    monitor = None
    if monitor_pot:
        try:
            monitor = potmod.monitor_entropy(surface, trajectory, c, bc=pot_bc)
            hmax = monitor.h_max
        except potmod.SolvabilityError:
            monitor = None

    # trajectory csv
    rows = [",".join(CSV_COLUMNS)]
    for k, st in enumerate(trajectory):
        w = st.omega.omega
        r_l = math.exp(-w[0]) * surface.ends[0].curvature_asymptote
        r_r = math.exp(-w[-1]) * surface.ends[1].curvature_asymptote
        rows.append(",".join([
            _fmt(st.t), _fmt(st.sup_deviation), _fmt(st.area.finite_part),
            _fmt(w[0]), _fmt(w[-1]), _fmt(r_l), _fmt(r_r),
            _fmt(increments[k] if ledger is not None else 0.0),
            _fmt(hmax[k]) if hmax is not None else ""]))
    _atomic_write(out / f"{prefix}_trajectory.csv", "\n".join(rows) + "\n")

    selberg_report = None
    if spectrum_path:
        spectrum = det.LengthSpectrum.from_text(Path(spectrum_path).read_text())
        params = det.SelbergParams.for_surface(surface)
        finite = all(e.kind == "cusp" for e in surface.ends)
        selberg_report = {
            "z_at_2": det.selberg_zeta(spectrum, 2.0),
            "det_laplacian": det.det_hyperbolic(spectrum, params, finite),
            "n_entries": len(spectrum.entries),
        }

    consistency = None
    if ledger is not None and f_closed is not None:
        consistency = ledger.accumulated + f_closed
    summary = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "scenario": _scenario_echo(cp),
        "constant_C": c,
        "report": {
            "converged": report.converged,
            "fitted_rate": report.fitted_rate,
            "c_low": report.c_low,
            "k_high": report.k_high,
            "final_sup_deviation": report.final_sup_deviation,
        },
        "area_law": {
            "initial_area": a0,
            "initial_area_error": trajectory[0].area.estimated_error,
            "max_abs_deviation_from_closed_form": area_dev,
        },
        "determinant": None if ledger is None else {
            "qualifying": qualifying,
            "ledger_total": float(np.trapezoid(increments, ts)),
            "min_increment": float(np.min(increments)),
            "area_defect": ledger.area_defect,
            "closed_form_F": f_closed,
            "consistency_residual": consistency,
        },
        "potential": None if monitor is None else {
            "fitted_decay_rate": monitor.fitted_decay_rate,
            "normalized_drift": monitor.normalized_drift,
            "non_increasing": monitor.non_increasing,
            "r_min_lower_ok": monitor.r_min_lower_ok,
        },
        "selberg": selberg_report,
    }
    _atomic_write(out / f"{prefix}_summary.json",
                  json.dumps(summary, indent=2, sort_keys=True) + "\n")

    if want_svg:
        devs = np.array([st.sup_deviation for st in trajectory])
        _atomic_write(out / f"{prefix}_supdev.svg",
                      svg_line_plot(ts, {"sup|R-C|": np.maximum(devs, 1e-300)},
                                    "sup deviation (log scale)", ylog=True))
        _atomic_write(out / f"{prefix}_area.svg",
                      svg_line_plot(ts, {"measured": areas, "closed form": law},
                                    "renormalized area vs closed form"))
        if ledger is not None:
            _atomic_write(out / f"{prefix}_ledger.svg",
                          svg_line_plot(ts, {"increment": increments},
                                        "Polyakov increments"))
    if status == 0 and ledger is not None and ledger.min_increment < -1e-10:
        status = 2
    return status


def refine_study(path, levels, out_dir=".", seed=0):
    """Grid-refinement table for curvature, area, and ledger total."""
    if levels < 2:
        raise InputError("refinement study needs levels >= 2")
    cp = load_scenario(path)
    base_n = cp["surface"].getint("grid_size", 512)
    sizes = [base_n // 2 ** (levels - 1 - k) for k in range(levels)]
    if sizes[0] < 32:
        raise InputError("coarsest grid too small; raise grid_size or lower levels")
    config = flow_config_from_scenario(cp)
    if config.dt is None:
        config = flowmod.FlowConfig(
            normalization=config.normalization, dt=2e-3, t_end=config.t_end,
            stepper="imex", convergence_threshold=config.convergence_threshold,
            sample_interval=config.sample_interval)

    results = []
    for n in sizes:
        surface, omega0 = build_from_scenario(cp, grid_override=n)
        c = flowmod.normalization_constant(surface, omega0,
                                           config.normalization)
        trajectory, _ = flowmod.run_flow(surface, omega0, config)
        from .surface import scalar_curvature
        try:
            ledger = det.integrate_polyakov_along_flow(surface, trajectory, c)
            total = ledger.accumulated
        except (InputError, det.InvariantViolationError):
            total = None
        results.append({
            "n": n,
            "curvature": scalar_curvature(surface, omega0),
            "area": trajectory[0].area.finite_part,
            "ledger": total,
        })

    fine = results[-1]
    table = []
    for res in results[:-1]:
        stride = fine["n"] // res["n"]
        curv_err = float(np.max(np.abs(
            res["curvature"][1:-1] - fine["curvature"][stride:-stride:stride])))
        area_err = abs(res["area"] - fine["area"])
        ledger_err = (abs(res["ledger"] - fine["ledger"])
                      if res["ledger"] is not None and fine["ledger"] is not None
                      else None)
        table.append({"n": res["n"], "curvature_error": curv_err,
                      "area_error": area_err, "ledger_error": ledger_err})
    orders = {}
    for key in ("curvature_error", "area_error", "ledger_error"):
        errs = [row[key] for row in table if row[key] is not None]
        if len(errs) >= 2 and all(e > 0 for e in errs):
            orders[key] = [math.log2(errs[k] / errs[k + 1])
                           for k in range(len(errs) - 1)]
        else:
            orders[key] = []
    doc = {"format_version": FORMAT_VERSION, "seed": seed,
           "grid_sizes": sizes, "table": table, "observed_orders": orders}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = cp.get("output", "prefix", fallback=Path(path).stem)
    _atomic_write(out / f"{prefix}_refine.json",
                  json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"{'N':>6} {'curvature':>12} {'area':>12} {'ledger':>12}")
    for row in table:
        led = f"{row['ledger_error']:.3e}" if row["ledger_error"] is not None \
            else "-"
        print(f"{row['n']:>6} {row['curvature_error']:>12.3e} "
              f"{row['area_error']:>12.3e} {led:>12}")
    for key, vals in orders.items():
        if vals:
            print(f"observed order ({key.split('_')[0]}): "
                  + ", ".join(f"{v:.2f}" for v in vals))
    return doc


def run_selberg(spectrum_path, chi, ncusps, s, out_dir=None):
    spectrum = det.LengthSpectrum.from_text(Path(spectrum_path).read_text())
    params = det.SelbergParams.make(chi, ncusps)
    doc = {
        "format_version": FORMAT_VERSION,
        "spectrum_file": str(spectrum_path),
        "chi": chi,
        "n_cusps": ncusps,
        "s": s,
        "E": params.E,
        "F": params.F,
        "Z": det.selberg_zeta(spectrum, s) if s > 0 else None,
        "det_shifted": det.det_from_selberg(spectrum, params, s)
        if s > 0.5 else None,
        "det_laplacian_infinite_area": det.det_hyperbolic(
            spectrum, params, False),
        "prefactor_convention": det.CUSP_PREFACTOR_CONVENTION,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / (Path(spectrum_path).stem + "_selberg.json"), text)
    sys.stdout.write(text)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="renormflow",
        description="funnel/cusp surface flows and determinant diagnostics")
    parser.add_argument("--out-dir", default=".")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario")
    p_ref = sub.add_parser("refine", help="grid refinement study")
    p_ref.add_argument("scenario")
    p_ref.add_argument("--levels", type=int, required=True)
    p_sel = sub.add_parser("selberg", help="Selberg baselines from a spectrum")
    p_sel.add_argument("spectrum")
    p_sel.add_argument("--chi", type=int, default=0)
    p_sel.add_argument("--ncusps", type=int, default=0)
    p_sel.add_argument("--s", type=float, default=2.0)
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            return run_scenario(args.scenario, args.out_dir, args.seed)
        if args.command == "refine":
            refine_study(args.scenario, args.levels, args.out_dir, args.seed)
            return 0
        if args.command == "selberg":
            return run_selberg(args.spectrum, args.chi, args.ncusps, args.s,
                               args.out_dir)
    except det.InvariantViolationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError, KeyError, ValueError,
            configparser.Error) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
