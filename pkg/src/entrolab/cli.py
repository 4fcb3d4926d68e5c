"""Command-line scenario runner.

    entrolab bridge|sweep|verify --config scenario.json [--out DIR] [--workers K]

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid config,
3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis as an
from .heat import HeatError, spectral_decompose
from .interpolation import interpolate, self_adjoint_defect
from .ot_reference import quantile_geodesic_1d
from .scenario import (ConfigError, ScenarioConfig, build_testfield, config_from_dict,
                       load_config, materialize, with_resolution)
from .schrodinger import ConvergenceError, MarginalError, solve_schrodinger_system
from .space import UnsupportedSpaceError, build_interval_grid, integrate
from .svg import line_chart

log = logging.getLogger("entrolab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _row(check, value, tolerance, passed, **extra):
    out = {"check": check, "value": float(value), "tolerance": tolerance, "passed": bool(passed)}
    out.update(extra)
    return out


def _is_1d_neumann(space):
    return space.kind == "interval" and space.boundary == "neumann"


# ---------------------------------------------------------------------------
# per-eps job (runs in worker processes for sweeps)

_STATE = {}


def _init_worker(cfg_doc, H, ref):
    cfg = config_from_dict(cfg_doc)
    sc = materialize(cfg)
    # the heat operator is shared read-only; rebind it to this process's space
    _STATE.update(cfg=cfg, sc=sc, H=dataclasses.replace(H, space=sc.space), ref=ref)


def _identity_rows(cfg: ScenarioConfig, sc, H, sol, curve, K) -> list[dict]:
    eps = sol.eps
    tag = f"[eps={eps!r}]"
    tol_id = cfg.tolerance("identity")
    rows = [_row(f"marginal_residual{tag}", sol.marginal_residual, 1e-8,
                 sol.marginal_residual <= 1e-8)]
    mass = float(np.max(np.abs(integrate(sc.space, curve.rho) - 1.0)))
    rows.append(_row(f"mass{tag}", mass, tol_id, mass <= tol_id))
    lr = curve.log_rho
    ok = np.isfinite(lr)
    split = float(np.max(np.abs((curve.phi + curve.psi - eps * lr)[ok]))) if ok.any() else 0.0
    rows.append(_row(f"phi_plus_psi{tag}", split, tol_id, split <= tol_id))
    sa = self_adjoint_defect(curve)
    rows.append(_row(f"semigroup_self_adjoint{tag}", sa, tol_id, sa <= tol_id))
    e2 = an.entropy_second_derivative(curve)
    tol_par = cfg.tolerance("parallelogram")
    rows.append(_row(f"parallelogram_E1_E2{tag}", e2["parallelogram_defect"], tol_par,
                     e2["parallelogram_defect"] <= tol_par))
    g = an.gauge_invariance_defect(sol, H, curve.J)
    rows.append(_row(f"gauge_invariance{tag}", g, tol_id, g <= tol_id))
    r = an.time_reversal_defect(sc.space, H, sc.rho0, sc.rho1, eps, curve.J,
                                tol=cfg.tolerance("sinkhorn"), log_kernel=K, forward=curve)
    rows.append(_row(f"time_reversal{tag}", r, tol_id, r <= tol_id))
    return rows


def _eps_job(eps: float, with_identities: bool = True) -> dict:
    cfg, sc, H, ref = _STATE["cfg"], _STATE["sc"], _STATE["H"], _STATE["ref"]
    K = H.log_kernel(eps / 2)
    sol = solve_schrodinger_system(sc.space, H, sc.rho0, sc.rho1, eps,
                                   tol=cfg.tolerance("sinkhorn"),
                                   max_iter=int(cfg.tolerance("max_iter")), log_kernel=K)
    curve = interpolate(sol, H, cfg.J)
    summary = an.curve_summary(curve, ref, sc.testfields, cfg.delta)
    out = {"eps": eps, "summary": summary, "iterations": sol.iterations}
    if with_identities:
        out["identities"] = _identity_rows(cfg, sc, H, sol, curve, K)
    try:
        out["bounds"] = an.convexity_and_window_bound(curve, cfg.delta)
    except an.PreconditionError as exc:
        out["bounds"] = {"skipped": str(exc)}
    return out


def _run_ladder(cfg: ScenarioConfig, workers: int, with_identities: bool = True):
    sc = materialize(cfg)
    H = spectral_decompose(sc.space)
    ref = None
    if _is_1d_neumann(sc.space):
        ref = quantile_geodesic_1d(sc.space, sc.rho0, sc.rho1, np.arange(cfg.J + 1) / cfg.J)
    doc = cfg.to_dict()
    if workers > 1 and len(cfg.eps_ladder) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(doc, H, ref)) as pool:
            futs = [pool.submit(_eps_job, e, with_identities) for e in cfg.eps_ladder]
            results = [f.result() for f in futs]
    else:
        _init_worker(doc, H, ref)
        results = [_eps_job(e, with_identities) for e in cfg.eps_ladder]
    return sc, H, ref, results


# ---------------------------------------------------------------------------
# outputs


def _write_rows(path, rows):
    """Columns ``check, value, tolerance, passed``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "value", "tolerance", "passed"])
        for r in rows:
            w.writerow([r["check"], repr(r["value"]), r["tolerance"], int(r["passed"])])


def _write_summary(path, command, rows, extra=None):
    doc = {"command": command, "passed": all(r["passed"] for r in rows),
           "failures": [r["check"] for r in rows if not r["passed"]], "checks": rows}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _bound_rows(results):
    rows = []
    for res in results:
        b = res["bounds"]
        tag = f"[eps={res['eps']!r}]"
        if "skipped" in b:
            continue
        rows.append(_row(f"entropy_convexity{tag}", b["min_second_difference"],
                         f">= {b['convex_threshold']!r}", b["convex"]))
        rows.append(_row(f"window_bound_margin{tag}", b["margin"], ">= 0", b["bound_holds"]))
    return rows


def _sweep_plots(out: Path, report: an.EpsSweepReport):
    eps = report.eps_list
    if "w2_deviation" in report.summaries[0]:
        line_chart(out / "w2_deviation.svg", [("sup_t W2 deviation", eps,
                                               report.column("w2_deviation"))],
                   "W2 deviation from the geodesic", "eps", "W2", logx=True, logy=True)
    flux = [(f"|A| {name}", eps, np.abs(report.flux(name)))
            for name in report.summaries[0]["accel_flux"]]
    if flux:
        line_chart(out / "accel_flux.svg", flux, "acceleration flux", "eps", "|A|",
                   logx=True, logy=True)
    if "I_hess" in report.summaries[0]:
        line_chart(out / "second_order.svg",
                   [("I_hess", eps, report.column("I_hess")),
                    ("I_lap", eps, report.column("I_lap"))],
                   "second-order integrals", "eps", "value", logx=True, logy=True)


# ---------------------------------------------------------------------------
# commands


def run_bridge(cfg: ScenarioConfig, out: Path, workers: int = 1) -> int:
    if len(cfg.eps_ladder) != 1:
        raise ConfigError(f"bridge needs exactly one eps, got {len(cfg.eps_ladder)}")
    sc = materialize(cfg)
    H = spectral_decompose(sc.space)
    eps = cfg.eps_ladder[0]
    K = H.log_kernel(eps / 2)
    sol = solve_schrodinger_system(sc.space, H, sc.rho0, sc.rho1, eps,
                                   tol=cfg.tolerance("sinkhorn"),
                                   max_iter=int(cfg.tolerance("max_iter")), log_kernel=K)
    curve = interpolate(sol, H, cfg.J)
    curve.write_csv(out / "curve.csv")
    sol.write_trace_csv(out / "trace.csv")
    rows = _identity_rows(cfg, sc, H, sol, curve, K)
    _write_rows(out / "identities.csv", rows)
    _write_summary(out / "summary.json", "bridge", rows,
                   {"eps": eps, "iterations": sol.iterations})
    H_t = an.entropy_profile(curve)
    line_chart(out / "entropy.svg", [("H(t)", curve.tgrid, H_t)], f"entropy, eps={eps:g}",
               "t", "H")
    xs = sc.space.coords[:, 0] if sc.space.kind == "interval" else np.arange(sc.space.n)
    picks = [0, cfg.J // 4, cfg.J // 2, 3 * cfg.J // 4, cfg.J]
    line_chart(out / "density.svg",
               [(f"t={curve.tgrid[j]:.2f}", xs, curve.rho[j]) for j in picks],
               f"density, eps={eps:g}", "x", "rho")
    line_chart(out / "potentials.svg",
               [(f"{name} t={curve.tgrid[j]:.2f}", xs, getattr(curve, name)[j])
                for j in picks[1:4] for name in ("phi", "psi")],
               f"potentials, eps={eps:g}", "x", "value")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_CHECK


def run_sweep(cfg: ScenarioConfig, out: Path, workers: int = 1) -> int:
    if len(cfg.eps_ladder) < 3:
        raise ConfigError(f"sweep needs at least 3 eps values, got {len(cfg.eps_ladder)}")
    sc, H, ref, results = _run_ladder(cfg, workers, with_identities=False)
    report = an.convergence_report(None, summaries=[r["summary"] for r in results],
                                   delta=cfg.delta)
    report.write_csv(out / "sweep.csv")
    report.write_entropy_csv(out / "entropy.csv")
    rows = report.checks()
    checks = [_row(r["check"], r["value"], r["threshold"], r["passed"]) for r in rows]
    _write_rows(out / "sweep_checks.csv", checks)
    _write_summary(out / "summary.json", "sweep", checks,
                   {"eps_list": report.eps_list, "n": report.n, "J": report.J,
                    "note": an.LITERATURE_NOTE})
    _sweep_plots(out, report)
    return EXIT_OK if report.passed else EXIT_CHECK


def _refinement_curves(cfg: ScenarioConfig, eps: float):
    for n, J in cfg.refinement:
        sc = materialize(with_resolution(cfg, n, J))
        H = spectral_decompose(sc.space)
        sol = solve_schrodinger_system(sc.space, H, sc.rho0, sc.rho1, eps,
                                       tol=cfg.tolerance("sinkhorn"),
                                       max_iter=int(cfg.tolerance("max_iter")))
        yield n, J, sc, interpolate(sol, H, J)


def _order_row(name, errors_by_level, levels):
    res = [n for n, _ in levels]
    orders = an.refinement_orders(res, errors_by_level)
    return _row(name, orders["fitted"], ">= 1", orders["fitted"] >= 1,
                errors=orders["errors"], resolutions=[list(p) for p in levels])


def _refinement_rows(cfg: ScenarioConfig, checks) -> list[dict]:
    space = materialize(cfg).space
    if not cfg.refinement or space.kind != "interval":
        return []
    eps = cfg.eps_ladder[len(cfg.eps_ladder) // 2]
    first, second, fixed, geo = [], [], {}, {}
    block = block_level = None
    for n, J, sc, curve in _refinement_curves(cfg, eps):
        d1 = an.entropy_first_derivative(curve)
        d2 = an.entropy_second_derivative(curve)
        first.append(d1["fd_deviation"])
        second.append(d2["fd_deviation"])
        for name, h in sc.testfields.items():
            fixed.setdefault(name, []).append(
                an.fixed_eps_second_derivative_check(curve, h)["relative_deviation"])
        if _is_1d_neumann(sc.space):
            ref = quantile_geodesic_1d(sc.space, sc.rho0, sc.rho1, curve.tgrid)
            for name, h in sc.testfields.items():
                geo.setdefault(name, []).append(
                    an.geodesic_formula_check(ref, h, cfg.delta)["relative_deviation"])
            block_level = (sc.space, J)
    if block_level is not None:
        block = block_geodesic_deviation(*block_level, cfg.delta)
    levels = [tuple(p) for p in cfg.refinement]
    tag = f"[eps={eps!r}]"
    rows = []
    if "prop5" in checks:
        rows.append(_order_row(f"entropy_first_derivative_order{tag}", first, levels))
        rows.append(_order_row(f"entropy_second_derivative_order{tag}", second, levels))
    if "geodesic_formula" in checks:
        for name, errs in fixed.items():
            rows.append(_order_row(f"fixed_eps_formula_order[{name}]{tag}", errs, levels))
        for name, errs in geo.items():
            rows.append(_order_row(f"geodesic_formula_order[{name}]", errs, levels))
        if block is not None:
            rows.append(_row(f"geodesic_formula_block[n={levels[-1][0]}]", block, "< 0.02",
                             block < 0.02))
    return rows


def block_geodesic_deviation(space, J: int, delta: float = 0.1) -> float:
    """Translated uniform block with ``h = x^2/2``: relative deviation of the two sides."""
    x = space.coords[:, 0]
    L = x[-1]
    width = max(int(round(0.125 * space.n)), 2)
    i0 = int(round(0.1875 * space.n))
    shift = int(round(0.375 * space.n))
    b0 = np.zeros(space.n)
    b0[i0:i0 + width] = 1.0
    b1 = np.roll(b0, shift)
    b0, b1 = b0 / (b0 @ space.measure), b1 / (b1 @ space.measure)
    ref = quantile_geodesic_1d(space, b0, b1, np.arange(J + 1) / J)
    h = build_testfield(space, {"preset": "quadratic", "center": float(L / 2)})
    return an.geodesic_formula_check(ref, h, delta)["relative_deviation"]


def _heat_rows(cfg: ScenarioConfig) -> list[dict]:
    sc = materialize(cfg)
    space = sc.space
    if space.kind == "interval":
        n = max([800] + [p[0] for p in cfg.refinement])
        space = build_interval_grid(n, cfg.space["length"], "periodic")
    elif not space.is_grid:
        return [_row("heat_estimates", 0.0, "n/a", True,
                     skipped="heat estimates need a flat grid space")]
    H = spectral_decompose(space)
    spike = np.zeros(space.n)
    spike[space.n // 2] = 1.0 / space.measure[space.n // 2]
    tol = cfg.tolerance("heat_estimate")
    rep = an.heat_estimate_diagnostics(H, spike, [0.05, 0.2, 1.0], tol=tol)
    rows = []
    for r in rep["rows"]:
        rows.append(_row(f"li_yau[t={r['t']!r},n={space.n}]", r["li_yau_excess"], "<= 0",
                         r["li_yau_violations"] == 0))
        rows.append(_row(f"hamilton[t={r['t']!r},n={space.n}]", r["hamilton_excess"], "<= 0",
                         r["hamilton_violations"] == 0))
    return rows


def run_verify(cfg: ScenarioConfig, out: Path, workers: int = 1) -> int:
    checks = set(cfg.checks)
    rows = []
    need_ladder = checks & {"identities", "bounds", "sweep"}
    if need_ladder:
        sc, H, ref, results = _run_ladder(cfg, workers, with_identities="identities" in checks)
        if "identities" in checks:
            for res in results:
                rows.extend(res["identities"])
        if "bounds" in checks:
            rows.extend(_bound_rows(results))
        if "sweep" in checks and len(cfg.eps_ladder) >= 3:
            report = an.convergence_report(None, summaries=[r["summary"] for r in results],
                                           delta=cfg.delta)
            report.write_csv(out / "sweep.csv")
            report.write_entropy_csv(out / "entropy.csv")
            rows.extend(_row(r["check"], r["value"], r["threshold"], r["passed"])
                        for r in report.checks())
            _sweep_plots(out, report)
    if checks & {"prop5", "geodesic_formula"}:
        rows.extend(_refinement_rows(cfg, checks))
    if "heat_estimates" in checks:
        rows.extend(_heat_rows(cfg))
    _write_rows(out / "verify.csv", rows)
    _write_summary(out / "summary.json", "verify", rows, {"note": an.LITERATURE_NOTE})
    failed = [r["check"] for r in rows if not r["passed"]]
    for name in failed:
        log.warning("check failed: %s", name)
    return EXIT_OK if not failed else EXIT_CHECK


COMMANDS = {"bridge": run_bridge, "sweep": run_sweep, "verify": run_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entrolab", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="scenario JSON document")
    p.add_argument("--out", default=None, help="output directory (default: config 'output')")
    p.add_argument("--workers", type=int, default=1, help="parallel eps workers")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.workers)
    except (ConfigError, MarginalError, UnsupportedSpaceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, HeatError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
