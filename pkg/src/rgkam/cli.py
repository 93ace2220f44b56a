"""Batch front end: solve, verify, scan and diagnose-scales.

Exit codes: 0 ok, 1 configuration error, 2 solve failure, 3 verification mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import oracle
from .assembly import cs_norm, solve, trajectory
from .config import ConfigError, RunConfig
from .lattice import (FourierMap, dumps, l1_norm, map_from_json, map_to_json, potential_from_json,
                      potential_to_json)
from .rg import unit_probes
from .scales import LatticeScales

log = logging.getLogger("rgkam")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVE, EXIT_VERIFY = 0, 1, 2, 3
REPORT_VERSION = 1


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def _err(msg: str) -> None:
    print(f"rgkam: {msg}", file=sys.stderr)


# ---------------------------------------------------------------- solve

def run_solve(cfg: RunConfig):
    """Run the solver for a config; returns (potential, lattice bound, SolveReport)."""
    pot = cfg.load_potential()
    Q = cfg.lattice_bound(pot)
    r = cfg.raw
    rep = solve(pot, cfg.omega, cfg.lam, cfg.ell(pot), lattice_bound=Q, eta=float(r["eta"]), M=int(r["M"]),
                jmax=r["jmax"], nu=float(r["nu"]), global_tol=float(cfg.tolerances["global_tol"]),
                solver=cfg.solver())
    return pot, Q, rep


def build_report(cfg: RunConfig, pot, Q: int, rep, probes) -> dict:
    X = rep.X
    return _clean({
        "report_version": REPORT_VERSION,
        "status": rep.status,
        "config": cfg.echo(),
        "omega": cfg.omega,
        "lambda": cfg.lam,
        "lattice_bound": Q,
        "probes": [list(p) for p in probes],
        "certificate": rep.certificate,
        "tolerances": cfg.tolerances,
        "stages": rep.stages,
        "final": {
            "residual": rep.residual,
            "residual_tail": rep.residual_tail,
            "x_l1": l1_norm(X),
            "y_act_l1": l1_norm(rep.Y_act),
            "hermitian_defect": X.hermitian_defect(),
        },
        "cs_norm": rep.cs_norms,
        "max_stable_s": rep.max_stable_s,
        "files": {"coefficients": "coefficients.json", "potential": "potential.json",
                  "trajectory": "trajectory.csv"},
    })


def _write_trajectory(path: Path, X: FourierMap, omega, cfg: RunConfig) -> None:
    tr = cfg.raw["trajectory"]
    theta0 = tr.get("theta0") or [0.0] * len(omega)
    t = np.linspace(0.0, float(tr.get("t_max", 50.0)), int(tr.get("samples", 201)))
    rows = trajectory(X, omega, theta0, t)
    d = len(omega)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"theta{i + 1}" for i in range(d)] + [f"I{i + 1}" for i in range(d)])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def cmd_solve(config_path, out_dir=None) -> int:
    t0 = time.perf_counter()
    try:
        cfg = RunConfig.load(config_path)
        pot = cfg.load_potential()
        Q = cfg.lattice_bound(pot)
        probes = [tuple(p) for p in cfg.raw["probes"]] if cfg.raw["probes"] else unit_probes(pot.dim)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    out = Path(out_dir or cfg.raw["output"]["dir"])
    try:
        _, _, rep = run_solve(cfg)
    except (ValueError, OverflowError) as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    except Exception as e:  # resonant frequency and the like
        _err(f"solve failed: {type(e).__name__}: {e}")
        return EXIT_SOLVE
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(cfg, pot, Q, rep, probes)
    (out / "report.json").write_text(dumps(report) + "\n")
    (out / "coefficients.json").write_text(dumps(map_to_json(rep.X)) + "\n")
    (out / "potential.json").write_text(dumps(potential_to_json(pot)) + "\n")
    _write_trajectory(out / "trajectory.csv", rep.X, cfg.omega, cfg)
    meta = {"wall_seconds": time.perf_counter() - t0, "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    if not rep.ok:
        _err(rep.status)
        return EXIT_SOLVE
    print(f"ok: residual {rep.residual:.3e}, |X| {l1_norm(rep.X):.3e}, report in {out / 'report.json'}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

def verify_report(report_path) -> list[str]:
    """Independent re-check of a report; returns the list of failed checks."""
    report_path = Path(report_path)
    base = report_path.parent
    rep = json.loads(report_path.read_text())
    files = rep["files"]
    X = map_from_json(json.loads((base / files["coefficients"]).read_text()))
    pot = potential_from_json(json.loads((base / files["potential"]).read_text()))
    omega = np.asarray(rep["omega"], float)
    lam = float(rep["lambda"])
    tol = {k: float(v) for k, v in rep["tolerances"].items()}
    failed = []

    herm = X.hermitian_defect()
    if herm > 2 * tol["hermitian_tol"] * max(1.0, l1_norm(X)):
        failed.append(f"hermitian symmetry: defect {herm:.3e}")
    mean = float(np.sum(np.abs(X.mean())))
    if mean > 2 * tol["hermitian_tol"]:
        failed.append(f"zero mean: |x(0)| = {mean:.3e}")

    res = oracle.direct_residual(X, pot, lam, omega)
    if res > 2 * tol["residual_tol"]:
        failed.append(f"residual: {res:.3e} > {2 * tol['residual_tol']:.1e}")
    claimed = float(rep["final"]["residual"])
    if abs(res - claimed) > 2 * tol["residual_tol"]:
        failed.append(f"residual mismatch: recomputed {res:.3e}, reported {claimed:.3e}")

    probes = [tuple(p) for p in rep.get("probes") or unit_probes(X.dim)]
    try:
        wc, wd = oracle.ward_check(X, pot, lam, omega, probes)
    except Exception as e:
        failed.append(f"ward: evaluation failed ({e})")
    else:
        if wc > 2 * tol["ward_tol"]:
            failed.append(f"ward constant: {wc:.3e}")
        if wd > 2 * tol["ward_tol"]:
            failed.append(f"ward derivative: {wd:.3e}")

    for row in rep.get("cs_norm", []):
        c = cs_norm(X, float(row["s"]))
        want = float(row["value"])
        if math.isinf(want) and math.isinf(c.value):
            continue
        if abs(c.value - want) > 2 * tol["cs_rtol"] * max(abs(want), 1e-300) and abs(c.value - want) > 0:
            failed.append(f"cs_norm s={row['s']}: recomputed {c.value:.6e}, reported {want:.6e}")
    return failed


def cmd_verify(report_path) -> int:
    try:
        failed = verify_report(report_path)
    except (OSError, KeyError, ValueError) as e:
        _err(f"cannot read report: {e}")
        return EXIT_VERIFY
    if failed:
        for f in failed:
            _err(f"FAILED {f}")
        return EXIT_VERIFY
    print("verify: all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------- scan

SCAN_PARAMS = ("lambda", "eta")


def _scan_one(args):
    raw, base_dir, param, value = args
    cfg = RunConfig.from_dict(raw, Path(base_dir)).with_param(param, value)
    row = {"param": value, "status": "ok", "residual": "", "y_norms": "", "max_s": ""}
    try:
        _, _, rep = run_solve(cfg)
    except Exception as e:
        row["status"] = f"{type(e).__name__}: {e}"
        return row
    row["status"] = rep.status
    row["residual"] = repr(float(rep.residual))
    row["y_norms"] = ";".join(repr(float(s["y_norm"])) for s in rep.stages if "y_norm" in s)
    finite = [c["s"] for c in rep.cs_norms if math.isfinite(c["value"])]
    if rep.ok and finite:
        row["max_s"] = repr(max(finite))
    return row


def run_scan(cfg: RunConfig, param: str, values, jobs: int = 1) -> list[dict]:
    if param not in SCAN_PARAMS:
        raise ConfigError(f"scan parameter must be one of {SCAN_PARAMS}")
    tasks = [(cfg.raw | {"lambda": cfg.lam}, str(cfg.base_dir), param, float(v)) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_scan_one, tasks))
    return [_scan_one(t) for t in tasks]


def breakdown_value(rows: list[dict]):
    """First parameter value, in increasing order, whose run failed."""
    bad = sorted(r["param"] for r in rows if r["status"] != "ok")
    return bad[0] if bad else None


def cmd_scan(config_path, param_list: str, out_dir=None, jobs: int = 1, param: str = "lambda") -> int:
    try:
        cfg = RunConfig.load(config_path)
        cfg.lattice_bound(cfg.load_potential())
        values = [float(v) for v in param_list.split(",") if v.strip()]
        if not values:
            raise ConfigError("empty parameter list")
        rows = run_scan(cfg, param, values, jobs)
    except (ConfigError, ValueError) as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    out = Path(out_dir or cfg.raw["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scan.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["param", "status", "residual", "y_norms", "max_s"])
        w.writeheader()
        for r in rows:
            w.writerow(r | {"param": repr(r["param"])})
    b = breakdown_value(rows)
    if b is not None:
        print(f"breakdown at {param} = {b!r}")
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"scan: {ok}/{len(rows)} runs succeeded, table in {out / 'scan.csv'}")
    return EXIT_OK if ok else EXIT_SOLVE


# ---------------------------------------------------------------- diagnose-scales

DIAG_COLUMNS = ["j", "n", "ward_const", "ward_deriv", "H_norm", "sigma00_abs", "dsigma00_abs",
                "final_residual", "z_norm", "dz_norm"]


def scale_table(omega, Q: int, eta: float) -> list[dict]:
    """Occupancy per cutoff piece, two pieces past the window so empty annuli show up."""
    sc = LatticeScales(np.asarray(omega, float), Q, eta)
    return sc.occupancy(sc.n_complete + 2)


def cmd_diagnose_scales(config_path, out_dir=None) -> int:
    try:
        cfg = RunConfig.load(config_path)
        pot = cfg.load_potential()
        Q = cfg.lattice_bound(pot)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    out = Path(out_dir or cfg.raw["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    occ = scale_table(cfg.omega, Q, float(cfg.raw["eta"]))
    with open(out / "scales.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(occ[0].keys()))
        w.writeheader()
        for r in occ:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    try:
        _, _, rep = run_solve(cfg)
    except Exception as e:
        _err(f"solve failed: {type(e).__name__}: {e}")
        return EXIT_SOLVE
    with open(out / "stage_diagnostics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DIAG_COLUMNS)
        w.writeheader()
        for st in rep.stages:
            for row in st.get("scales", []):
                w.writerow({k: (st["j"] if k == "j" else row.get(k)) for k in DIAG_COLUMNS})
    print(f"scales: {len(occ)} rows in {out / 'scales.csv'}; diagnostics in {out / 'stage_diagnostics.csv'}")
    if not rep.ok:
        _err(rep.status)
        return EXIT_SOLVE
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgkam", description="Multiscale invariant-torus solver.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve for the torus embedding and write a report")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    v = sub.add_parser("verify", help="independently re-check a report")
    v.add_argument("report", nargs="?")
    v.add_argument("--report", dest="report_opt")
    c = sub.add_parser("scan", help="one solve per parameter value")
    c.add_argument("--config", required=True)
    c.add_argument("--param", default="lambda", choices=SCAN_PARAMS)
    c.add_argument("--param-list", required=True)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    g = sub.add_parser("diagnose-scales", help="scale occupancy and per-scale diagnostics")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        return cmd_solve(args.config, args.out)
    if args.command == "verify":
        path = args.report or args.report_opt
        if not path:
            _err("verify needs a report path")
            return EXIT_CONFIG
        return cmd_verify(path)
    if args.command == "scan":
        return cmd_scan(args.config, args.param_list, args.out, args.jobs, args.param)
    return cmd_diagnose_scales(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
