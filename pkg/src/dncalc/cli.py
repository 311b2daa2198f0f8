"""Config-driven experiment runner.

One pipeline per invocation:

    dncalc --config experiment.json --out results/ [--seed N] [--stamp]

The config is JSON with a versioned schema; the ``command`` field selects
the pipeline.  Every run writes ``report.json`` plus command-specific CSV
tables, and renders a companion PNG figure for each table.  Exit codes:
0 pass, 1 check failure (diagnostics and witnesses in the report), 2 input
error, 3 numerical error.

Randomized draws use the counter-based philox4x64 generator seeded from the
config (or ``--seed``), so identical configs produce byte-identical CSV
bodies; headers carry a timestamp only under ``--stamp``.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import figures, report as rep
from .descriptors import plate_params_from_descriptor, system_from_descriptor
from .diagonalize import (build_conjugator, diag_lambda_ellipticity_check,
                          offdiag_decay_probe, reduce_orders)
from .discretize import (TorusGrid, assemble_dense, multiplier_operator,
                         parametrix_vs_resolvent, ray_slope, resolvent_sweep)
from .ellipticity import (Sector, check_det_ellipticity, check_minor_ellipticity,
                          find_shift)
from .errors import (DNCalcError, InputError, NumericalError, ResourceError,
                     ShiftNotFoundError)
from .funcalc import hinfty_bound_probe, rational_test_family
from .parametrix import decay_probe
from .symbols import SampleGrid
from .thermoplate import (PlateParams, atil_matrix, build_plate_system,
                          evolve_plate, max_spectral_angle, plate_minor_dets,
                          suggest_sector_angle, trajectory_energy)

SCHEMA_VERSION = 1
COMMANDS = ("check-ellipticity", "find-shift", "parametrix-probe",
            "diagonalize", "resolvent-sweep", "hinfty", "plate-demo")


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise InputError(f"config is missing required field {key!r}")
    return cfg[key]


def _sector_from(cfg: dict) -> Sector:
    sec = _require(cfg, "sector")
    return Sector(theta=float(_require(sec, "theta")),
                  radius_exp_min=int(sec.get("radius_exp_min", -4)),
                  radius_exp_max=int(sec.get("radius_exp_max", 40)))


def _grid_from(cfg: dict, n: int) -> SampleGrid:
    g = cfg.get("sample_grid", {})
    return SampleGrid.default(
        n=n,
        xi_exp_min=int(g.get("xi_exp_min", -2)),
        xi_exp_max=int(g.get("xi_exp_max", 12)),
        directions=int(g.get("directions", 8)),
        x_per_axis=int(g.get("x_per_axis", 16)))


def _torus_from(cfg: dict) -> TorusGrid:
    g = cfg.get("grid", {})
    n = int(g.get("n", 1))
    return TorusGrid(n=n, N=int(g.get("N", 32 if n == 1 else 16)),
                     L=float(g.get("L", 1.0)))


def _system_from(cfg: dict):
    n = int(cfg.get("grid", {}).get("n", 1))
    sysd = _require(cfg, "system")
    if sysd == "plate" or (isinstance(sysd, dict) and sysd.get("kind") == "plate"):
        plate = cfg.get("plate", sysd if isinstance(sysd, dict) else {})
        params = plate_params_from_descriptor(plate)
        return build_plate_system(params, n=n).system, params
    return system_from_descriptor(sysd, n=n), None


def _want_figures(cfg: dict) -> bool:
    return bool(cfg.get("output", {}).get("figures", True))


def _dyadic_lams(sector: Sector, n_points: int, exp_min: int, exp_max: int):
    per_ray = max(n_points // 3, 3)
    radii = 2.0 ** np.linspace(exp_min, exp_max, per_ray)
    args = (sector.theta, 2.0 * np.pi - sector.theta) + tuple(sector.interior_ray_args)
    lams = np.concatenate([radii * np.exp(1j * a) for a in args])
    return lams[:n_points] if len(lams) > n_points else lams


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _cmd_check_ellipticity(cfg, out, rng, stamp):
    sysm, _ = _system_from(cfg)
    sector = _sector_from(cfg)
    n = int(cfg.get("grid", {}).get("n", 1))
    grid = _grid_from(cfg, n)
    chk = cfg.get("check", {})
    R = float(chk.get("R", 0.0))
    threshold = float(chk.get("threshold", 1e-6))
    mode = chk.get("mode", "both")
    payload = {}
    passed = True
    if mode in ("determinant", "both"):
        det = check_det_ellipticity(sysm, sector, grid, R=R, threshold=threshold)
        payload["determinant"] = det.to_dict()
        passed = passed and det.passed
    if mode in ("minors", "both"):
        mino = check_minor_ellipticity(sysm, sector, grid, R=R, threshold=threshold)
        payload["minors"] = mino.to_dict()
        passed = passed and mino.passed
    return (0 if passed else 1), payload, []


def _cmd_find_shift(cfg, out, rng, stamp):
    sysm, _ = _system_from(cfg)
    sector = _sector_from(cfg)
    n = int(cfg.get("grid", {}).get("n", 1))
    grid = _grid_from(cfg, n)
    threshold = float(cfg.get("shift", {}).get("threshold", 1e-6))
    try:
        res = find_shift(sysm, sector, grid, threshold=threshold)
    except ShiftNotFoundError as exc:
        return 1, {"error": "shift-not-found", "detail": str(exc),
                   "alpha_cap": exc.alpha_cap}, []
    return 0, res.to_dict(), []


def _cmd_parametrix_probe(cfg, out, rng, stamp):
    sysm, _ = _system_from(cfg)
    sector = _sector_from(cfg)
    pr = cfg.get("probe", {})
    quantity = pr.get("quantity", "J_minus_1")
    N = int(pr.get("N", 2))
    n = int(cfg.get("grid", {}).get("n", 1))
    xi = SampleGrid.dyadic_radii(n=n, exp_min=int(pr.get("xi_exp_min", 0)),
                                 exp_max=int(pr.get("xi_exp_max", 8)))
    probe = decay_probe(sysm, quantity, N, sector, xi)
    files = []
    rep.probe_to_files(probe, out / "probe.csv", out / "probe.json", stamp=stamp)
    files += ["probe.csv", "probe.json"]
    if _want_figures(cfg):
        figures.render_probe(probe, out / "probe.png")
        files.append("probe.png")
    payload = probe.to_header_dict()
    status = 0
    if "expect_slope" in pr:
        target, tol = pr["expect_slope"]
        ok = abs(probe.fitted_slope - target) <= tol
        payload["expect_slope"] = {"target": target, "tol": tol, "ok": ok}
        status = 0 if ok else 1
    return status, payload, files


def _cmd_diagonalize(cfg, out, rng, stamp):
    sysm, _ = _system_from(cfg)
    sector = _sector_from(cfg)
    dg = cfg.get("diagonalize", {})
    N = int(dg.get("N", 1))
    n = int(cfg.get("grid", {}).get("n", 1))
    red = reduce_orders(sysm, n_c=int(dg.get("n_c", 2)))
    conj, diag = build_conjugator(red, N=N, method=dg.get("method", "auto"))
    xi = SampleGrid.dyadic_radii(n=n, exp_min=int(dg.get("xi_exp_min", 0)),
                                 exp_max=int(dg.get("xi_exp_max", 8)))
    probe = offdiag_decay_probe(red, conj, diag, xi)
    grid = _grid_from(cfg, n)
    check = diag_lambda_ellipticity_check(red, diag, sector, grid)
    # per-shell rows (xi_norm, j, d_abs, offdiag_residual)
    rows = []
    x0 = np.zeros(n)
    for xin in sorted({round(float(np.linalg.norm(v)), 12) for v in xi}):
        xi_pt = np.zeros(n)
        xi_pt[0] = xin
        d = diag.d(x0, xi_pt)
        resid = {}
        for rxin, _, i, j, v in probe.samples:
            if round(rxin, 12) == xin:
                resid[j] = max(resid.get(j, 0.0), v)
        for j in range(red.q):
            rows.append((xin, j, abs(d[j]), resid.get(j, 0.0)))
    files = []
    rep.write_csv(out / "diagonalize.csv",
                  ("xi_norm", "j", "d_abs", "offdiag_residual"), rows, stamp=stamp)
    files.append("diagonalize.csv")
    if _want_figures(cfg):
        figures.render_diagonalize(rows, out / "diagonalize.png")
        files.append("diagonalize.png")
    payload = {"offdiag_probe": probe.to_header_dict(),
               "diagonal_check": check.to_dict(), "conjugator_N": N,
               "method": conj.method}
    return (0 if check.passed else 1), payload, files


def _cmd_resolvent_sweep(cfg, out, rng, stamp):
    sysm, params = _system_from(cfg)
    torus = _torus_from(cfg)
    shift_cfg = cfg.get("shift", {})
    n = torus.n
    if "alpha" in shift_cfg:
        alpha = float(shift_cfg["alpha"])
    else:
        sector0 = _sector_from(cfg)
        alpha = find_shift(sysm, sector0, _grid_from(cfg, n),
                           threshold=float(shift_cfg.get("threshold", 1e-2))).alpha0
    sector = _sector_from(cfg)
    sw = cfg.get("sweep", {})
    lams = _dyadic_lams(sector, int(sw.get("n_points", 40)),
                        int(sw.get("exp_min", 0)), int(sw.get("exp_max", 13)))
    if params is not None:
        op = multiplier_operator(lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
                                 torus, shift=alpha, s=float(sw.get("s", 0.0)),
                                 l=sysm.l, m=sysm.m).to_dense()
    else:
        op = assemble_dense(sysm, torus, shift=alpha, s=float(sw.get("s", 0.0)))
    sweep = resolvent_sweep(op, sector, lams)
    bisector = [r for r in sweep.rows
                if abs(abs(np.angle(r[0])) - np.pi) < 1e-9 and np.isfinite(r[1])]
    slope = ray_slope(bisector) if len(bisector) >= 3 else float("nan")
    files = []
    rep.sweep_to_csv(sweep, out / "sweep.csv", stamp=stamp)
    files.append("sweep.csv")
    if _want_figures(cfg):
        figures.render_sweep(sweep.csv_rows(), out / "sweep.png")
        files.append("sweep.png")
    payload = {"shift": alpha, "max_weighted_bracket": sweep.max_weighted_bracket,
               "bisector_slope": slope, "findings": sweep.findings,
               "n_lambda": len(lams)}
    return (1 if sweep.findings else 0), payload, files


def _cmd_hinfty(cfg, out, rng, stamp):
    sysm, params = _system_from(cfg)
    torus = _torus_from(cfg)
    hc = cfg.get("hinfty", {})
    shift_cfg = cfg.get("shift", {})
    if "alpha" in shift_cfg:
        alpha = float(shift_cfg["alpha"])
    else:
        alpha = find_shift(sysm, _sector_from(cfg), _grid_from(cfg, torus.n),
                           threshold=float(shift_cfg.get("threshold", 1e-2))).alpha0
    theta = float(cfg.get("sector", {}).get("theta", np.pi / 2))
    if params is not None:
        op = multiplier_operator(lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
                                 torus, shift=alpha, s=float(hc.get("s", 0.0)),
                                 l=sysm.l, m=sysm.m)
    elif sysm.constant_coefficient:
        op = multiplier_operator(sysm, torus, shift=alpha, s=float(hc.get("s", 0.0)))
    else:
        op = assemble_dense(sysm, torus, shift=alpha, s=float(hc.get("s", 0.0)))
    family = rational_test_family(int(hc.get("k_max", 8)),
                                  rotations=tuple(hc.get("rotations", (0.15, -0.15))))
    result = hinfty_bound_probe(op, family=family, theta=theta)
    files = []
    rep.calculus_to_json(result, out / "hinfty.json")
    rep.write_csv(out / "hinfty.csv",
                  ("name", "decay_s", "sup_norm", "op_norm", "ratio"),
                  [(p["name"], p["decay_s"], p["sup_norm"], p["op_norm"], p["ratio"])
                   for p in result.per_function], stamp=stamp)
    files += ["hinfty.json", "hinfty.csv"]
    if _want_figures(cfg):
        figures.render_hinfty(result.per_function, out / "hinfty.png",
                              M_estimate=result.M_estimate)
        files.append("hinfty.png")
    payload = {"M_estimate": result.M_estimate, "shift": alpha,
               "theta": theta, "metadata": result.metadata}
    return 0, payload, files


def _cmd_plate_demo(cfg, out, rng, stamp):
    plate = cfg.get("plate", {})
    params = plate_params_from_descriptor(plate)
    torus = _torus_from(cfg)
    n = torus.n
    psys = build_plate_system(params, n=n)
    diagnostics = {"plate": psys.to_dict()}
    files = []

    # 1. closed-form corner minors vs the generic pencil evaluator
    from .ellipticity import minor_pencil_value
    unexcised = build_plate_system(params, excised=False, n=n).system
    draws = int(plate.get("minor_draws", 100))
    rows = []
    max_rel = 0.0
    for _ in range(draws):
        xi = np.zeros(n)
        xi[0] = float(rng.uniform(0.5, 8.0))
        lam = complex(rng.normal(), rng.normal()) * float(rng.uniform(0.5, 4.0))
        kappa = int(rng.integers(1, 4))
        closed = plate_minor_dets(params, xi, lam, kappa)
        generic = minor_pencil_value(unexcised, np.zeros(n), xi, lam, kappa)
        relerr = abs(closed - generic) / max(abs(generic), 1e-300)
        max_rel = max(max_rel, relerr)
        rows.append((float(xi[0]), lam.real, lam.imag, kappa, abs(closed),
                     abs(generic), relerr))
    rep.write_csv(out / "minors.csv",
                  ("xi_norm", "lambda_re", "lambda_im", "kappa",
                   "abs_closed_form", "abs_generic", "rel_err"), rows, stamp=stamp)
    files.append("minors.csv")
    if _want_figures(cfg):
        figures.render_minors(rows, out / "minors.png")
        files.append("minors.png")
    diagnostics["minors_max_rel_err"] = max_rel

    # 2. shift + resolvent sweep on the un-excised multiplier
    theta = float(cfg.get("sector", {}).get("theta", np.pi / 2))
    sector = Sector(theta=theta)
    shift_threshold = float(cfg.get("shift", {}).get("threshold", 1e-2))
    shift = find_shift(psys.system, sector, _grid_from(cfg, n),
                       threshold=shift_threshold)
    alpha = shift.alpha0
    diagnostics["shift"] = shift.to_dict()
    diagnostics["spectral_angle_after_shift"] = max_spectral_angle(params,
                                                                   shift=alpha)
    lams = _dyadic_lams(sector, int(cfg.get("sweep", {}).get("n_points", 40)),
                        0, 13)
    op = multiplier_operator(lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
                             torus, shift=alpha, s=0.0,
                             l=psys.l, m=psys.m).to_dense()
    sweep = resolvent_sweep(op, sector, lams)
    rep.sweep_to_csv(sweep, out / "sweep.csv", stamp=stamp)
    files.append("sweep.csv")
    if _want_figures(cfg):
        figures.render_sweep(sweep.csv_rows(), out / "sweep.png")
        files.append("sweep.png")
    diagnostics["sweep_max_weighted_bracket"] = sweep.max_weighted_bracket
    diagnostics["sweep_findings"] = sweep.findings

    # 3. evolution from a seeded smooth field
    ev = cfg.get("evolve", {})
    P = torus.npoints
    X = torus.x_points()
    u0 = np.stack([np.cos(X[:, 0]) + 0.5 * np.sin(2 * X[:, 0]),
                   0.3 * np.sin(X[:, 0]),
                   0.2 * np.cos(3 * X[:, 0])]).astype(complex)
    u0 += 0.05 * (rng.standard_normal((3, P)))
    traj = evolve_plate(params, torus, u0, T=float(ev.get("T", 1.0)),
                        steps=int(ev.get("steps", 64)), shift=alpha)
    rep.trajectory_to_files(traj, out / "trajectory.csv",
                            out / "trajectory.json", stamp=stamp)
    files += ["trajectory.csv", "trajectory.json"]
    if _want_figures(cfg):
        figures.render_trajectory(traj, out / "trajectory.png")
        files.append("trajectory.png")
    energy = trajectory_energy(traj)
    mono = bool(np.all(np.diff(energy) <= 1e-10 * energy[:-1] + 1e-300))
    diagnostics["energy_monotone"] = mono
    diagnostics["energy_initial_final"] = [float(energy[0]), float(energy[-1])]

    ok = (max_rel <= 1e-12 and not sweep.findings
          and np.isfinite(sweep.max_weighted_bracket) and mono)
    return (0 if ok else 1), diagnostics, files


_PIPELINES = {
    "check-ellipticity": _cmd_check_ellipticity,
    "find-shift": _cmd_find_shift,
    "parametrix-probe": _cmd_parametrix_probe,
    "diagonalize": _cmd_diagonalize,
    "resolvent-sweep": _cmd_resolvent_sweep,
    "hinfty": _cmd_hinfty,
    "plate-demo": _cmd_plate_demo,
}


def run_config(config: dict, out_dir, seed=None, stamp: bool = False) -> int:
    """Execute one pipeline; returns the process exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp_str = rep.now_stamp() if stamp else None
    report = {"schema_version": SCHEMA_VERSION}
    try:
        if not isinstance(config, dict):
            raise InputError("config must be a JSON object")
        if int(config.get("schema_version", 1)) != SCHEMA_VERSION:
            raise InputError(f"unsupported schema_version "
                             f"{config.get('schema_version')!r}")
        command = _require(config, "command")
        if command not in COMMANDS:
            raise InputError(f"unknown command {command!r}; "
                             f"expected one of {COMMANDS}")
        if seed is None:
            seed = int(config.get("seed", 0))
        rng = np.random.Generator(np.random.Philox(int(seed)))
        report.update({"command": command,
                       "rng": {"generator": "philox4x64", "seed": int(seed)}})
        if stamp_str:
            report["generated"] = stamp_str
        status, payload, outputs = _PIPELINES[command](config, out, rng, stamp_str)
        report["result"] = payload
        report["outputs"] = outputs
        report["passed"] = status == 0
        report["exit_code"] = status
    except InputError as exc:
        report.update({"passed": False, "exit_code": 2,
                       "error": {"kind": "input", "detail": str(exc)}})
        status = 2
    except (NumericalError, ResourceError, DNCalcError) as exc:
        report.update({"passed": False, "exit_code": 3,
                       "error": {"kind": type(exc).__name__, "detail": str(exc)}})
        status = 3
    except Exception as exc:  # unexpected: still leave a machine-readable report
        report.update({"passed": False, "exit_code": 3,
                       "error": {"kind": "unexpected", "detail": str(exc),
                                 "traceback": traceback.format_exc()}})
        status = 3
    rep.write_json(out / "report.json", report)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dncalc",
        description="Config-driven verification runner for sector-elliptic "
                    "operator calculus experiments.")
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", default="dncalc-out", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config RNG seed (64-bit)")
    parser.add_argument("--stamp", action="store_true",
                        help="include timestamps in headers")
    args = parser.parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"dncalc: cannot read config: {exc}", file=sys.stderr)
        return 2
    status = run_config(config, args.out, seed=args.seed, stamp=args.stamp)
    report_path = Path(args.out) / "report.json"
    print(f"dncalc: {config.get('command', '?')} finished with status "
          f"{status}; report at {report_path}")
    return status


if __name__ == "__main__":
    sys.exit(main())
