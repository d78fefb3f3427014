"""Command-line driver: ``dppdg <subcommand> [--config FILE] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .problems import ConfigError, ScenarioConfig, build_scenario
from .solver import SolverError, solve
from .transport import layer_fronts, run_coupled
from .vtk import write_vtk

EXIT_CONFIG = 2
EXIT_SOLVER = 3

_KIND = {
    "patch": "layered-patch",
    "converge": "exact-2d",
    "pstudy": "nonconforming-orders",
    "fivespot": "five-spot",
    "massbalance": "mass-balance",
    "fingering": "fingering",
}

PSTUDY_GRID = (0.0, 1.0, 10.0, 100.0)
OVERSHOOT_SLACK = 1e-6


@dataclass
class RunManifest:
    subcommand: str
    config_path: str | None
    parameters: dict
    out_dir: str
    seed: int
    wall_clock: float = 0.0
    solver_stats: list = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def write(self, path: Path):
        """Write via a temporary file and rename so readers never see a partial manifest."""
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=_jsonable)
        os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dppdg", description="Stabilized mixed DG solver for DPP flow.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(_KIND) + "}")
    sub.required = True
    helps = {
        "patch": "layered velocity-driven patch test with line samples",
        "converge": "h- and p-convergence against the exact solution",
        "pstudy": "eta_u / eta_p study on the non-conforming orders problem",
        "fivespot": "quarter five-spot checkerboard",
        "massbalance": "element-wise mass balance for orders 1-3",
        "fingering": "coupled flow and transport run",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="JSON scenario config")
        p.add_argument("--out", type=Path, default=Path("out") / name, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--solver", choices=("direct", "gmres"), default="direct")
        p.add_argument("--tol", type=float, default=1e-7, help="GMRES relative tolerance")
        if name in ("converge", "massbalance"):
            p.add_argument("--orders", type=_int_list, default=[1, 2, 3])
        if name == "converge":
            p.add_argument("--meshes", type=_int_list, default=[4, 8, 16, 32])
            p.add_argument("--p-orders", type=_int_list, default=[1, 2, 3, 4, 5])
            p.add_argument("--p-mesh", type=int, default=5, help="cells per side for the p-series")
    return parser


def _load_config(args) -> ScenarioConfig:
    kind = _KIND[args.command]
    if args.config is None:
        cfg = ScenarioConfig.default(kind)
    else:
        cfg = ScenarioConfig.from_json(args.config)
        if cfg.kind != kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _variant(cfg: ScenarioConfig, **overrides) -> ScenarioConfig:
    data = cfg.to_dict()
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


class _Runner:
    def __init__(self, args, manifest: RunManifest):
        self.args = args
        self.manifest = manifest

    def solve(self, bundle, **kw):
        sol = solve(bundle.assemble(**kw), method=self.args.solver, tol=self.args.tol)
        self.manifest.solver_stats.append(asdict(sol.info))
        return sol


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def run_patch(cfg, run: _Runner, out: Path) -> dict:
    b = build_scenario(cfg)
    sol = run.solve(b)
    Lx, Ly = float(cfg.mesh.get("Lx", 1.0)), float(cfg.mesh.get("Ly", 1.0))
    k1 = np.atleast_1d(np.asarray(cfg.k1, dtype=float))
    targets = k1 / cfg.mu
    line = dg.line_sample(sol, (0.5 * Lx, 0.0), (0.5 * Lx, Ly), 201, "u1", component=0)
    lo, hi = targets.min() - OVERSHOOT_SLACK, targets.max() + OVERSHOOT_SLACK
    passed = bool(np.all((line.values >= lo) & (line.values <= hi)))
    _write_rows(out / "patch_line.csv", ["t", "x", "y", "element", "u1x"],
                [(t, p[0], p[1], e, v) for t, p, e, v in zip(line.t, line.points, line.elems, line.values)])
    elems = np.arange(b.mesh.n_elements)
    cen = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    write_vtk(out / "patch.vtk", b.mesh, cell_data={
        "p1": sol.values("p1", elems, cen)[:, 0], "p2": sol.values("p2", elems, cen)[:, 0],
        "u1": sol.values("u1", elems, cen)[:, 0], "u2": sol.values("u2", elems, cen)[:, 0]})
    print(f"overshoot detector: {'PASS' if passed else 'FAIL'}")
    return {"overshoot_pass": passed, "line_min": float(line.values.min()), "line_max": float(line.values.max())}


def run_converge(cfg, run: _Runner, out: Path) -> dict:
    args = run.args
    fields_ = ("l2_u1", "l2_u2", "l2_p1", "l2_p2", "h1_p1", "h1_p2")
    slopes = []
    reports, order_col = [], []
    for m in args.orders:
        series = []
        for n in args.meshes:
            b = build_scenario(_variant(cfg, orders=m, mesh={**cfg.mesh, "nx": n, "ny": n}))
            series.append(dg.error_norms(run.solve(b), b.exact, b.material, b.params))
        reports += series
        order_col += [m] * len(series)
        if len(series) >= 3:
            h = [r.h for r in series]
            for f in fields_:
                s, per = dg.convergence_slope(h, [getattr(r, f) for r in series])
                slopes.append((m, f, s, " ".join(f"{v:.4f}" for v in per)))
                print(f"order {m} {f:6s} slope {s:.3f}")
    dg.write_error_csv(out / "converge_h.csv", reports)
    _write_rows(out / "converge_slopes.csv", ["order", "field", "slope", "interval_slopes"], slopes)

    p_reports = []
    for m in args.p_orders:
        b = build_scenario(_variant(cfg, orders=m, mesh={**cfg.mesh, "nx": args.p_mesh, "ny": args.p_mesh}))
        p_reports.append(dg.error_norms(run.solve(b), b.exact, b.material, b.params))
    dg.write_error_csv(out / "converge_p.csv", p_reports)
    rates = {}
    if len(p_reports) >= 2:
        for f in ("l2_p1", "l2_p2"):
            rates[f] = dg.exponential_rate(args.p_orders, [getattr(r, f) for r in p_reports])
            print(f"p-series {f} log-rate {rates[f]:.3f}")
    return {"slopes": [dict(order=o, field=f, slope=s) for o, f, s, _ in slopes], "p_rates": rates}


def run_pstudy(cfg, run: _Runner, out: Path) -> dict:
    rows = []
    for eu in PSTUDY_GRID:
        for ep in PSTUDY_GRID:
            b = build_scenario(_variant(cfg, eta_u=eu, eta_p=ep))
            sol = run.solve(b)
            rep = dg.error_norms(sol, b.exact, b.material, b.params)
            j1 = dg.interface_jump_l2(sol, "u1", 0.5)
            j2 = dg.interface_jump_l2(sol, "u2", 0.5)
            rows.append((eu, ep, j1, j2, rep.l2_u1, rep.l2_u2, rep.l2_p1, rep.l2_p2))
            print(f"eta_u={eu:g} eta_p={ep:g} jump u1x {j1:.3e} u2x {j2:.3e}")
    _write_rows(out / "pstudy.csv", ["eta_u", "eta_p", "jump_u1x", "jump_u2x", "l2_u1", "l2_u2", "l2_p1", "l2_p2"], rows)
    return {"rows": len(rows)}


def run_fivespot(cfg, run: _Runner, out: Path) -> dict:
    b = build_scenario(cfg)
    sol = run.solve(b)
    mb = dg.elementwise_flux(sol)
    f = b.facets
    fluxes = {}
    for tag in ("inj", "prod"):
        sel = np.flatnonzero(f.ext_tag == tag)
        fluxes[tag] = float(b.bc.conditions[tag][0].value) * float(f.ext_length[sel].sum())
    elems = np.arange(b.mesh.n_elements)
    cen = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    write_vtk(out / "fivespot.vtk", b.mesh, cell_data={
        "p1": sol.values("p1", elems, cen)[:, 0], "p2": sol.values("p2", elems, cen)[:, 0],
        "u1": sol.values("u1", elems, cen)[:, 0], "u2": sol.values("u2", elems, cen)[:, 0],
        "m": mb.m})
    _write_rows(out / "fivespot_flux.csv", ["quantity", "value"], [
        ("boundary_flux", mb.boundary_flux), ("injector_flux", fluxes["inj"]), ("producer_flux", fluxes["prod"]),
        ("m_out_max", mb.m_out_max), ("m_in_max", mb.m_in_max)])
    print(f"global boundary flux {mb.boundary_flux:.3e}")
    return {"boundary_flux": mb.boundary_flux, **{f"{k}_flux": v for k, v in fluxes.items()}}


def run_massbalance(cfg, run: _Runner, out: Path) -> dict:
    rows = []
    for m in run.args.orders:
        b = build_scenario(_variant(cfg, orders=m))
        mb = dg.elementwise_flux(run.solve(b))
        dg.write_mass_balance_csv(out / f"massbalance_order{m}.csv", mb, b.mesh.centroids())
        rows.append((m, mb.m_out_max, mb.m_in_max, mb.boundary_flux))
        print(f"order {m}: m_out_max {mb.m_out_max:.3e} m_in_max {mb.m_in_max:.3e}")
    _write_rows(out / "massbalance.csv", ["order", "m_out_max", "m_in_max", "boundary_flux"], rows)
    return {"rows": [dict(order=r[0], m_out_max=r[1], m_in_max=r[2]) for r in rows]}


def run_fingering(cfg, run: _Runner, out: Path) -> dict:
    b = build_scenario(cfg)

    def progress(step, row):
        print(f"step {step:3d} t={row['t']:.2e} c in [{row['c_min']:.3f}, {row['c_max']:.3f}]", flush=True)

    res = run_coupled(b, seed=cfg.seed, out_dir=out, solver_method=run.args.solver, tol=run.args.tol,
                      progress=progress)
    Ly = float(cfg.mesh.get("Ly", 1.0))
    c = res.concentrations[-1]
    bottom, top = layer_fronts(b.mesh, c, 0.5 * Ly)
    print(f"front extent bottom {bottom:.3f} top {top:.3f}")
    return {"steps": len(res.audit), "front_bottom": bottom, "front_top": top,
            "max_relative_defect": max(r["relative_defect"] for r in res.audit)}


_DISPATCH = {
    "patch": run_patch,
    "converge": run_converge,
    "pstudy": run_pstudy,
    "fivespot": run_fivespot,
    "massbalance": run_massbalance,
    "fingering": run_fingering,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        cfg = _load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = RunManifest(args.command, str(args.config) if args.config else None, cfg.to_dict(),
                           str(args.out), cfg.seed)
    try:
        manifest.results = _DISPATCH[args.command](cfg, _Runner(args, manifest), args.out)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest.wall_clock = time.perf_counter() - t0
    manifest.write(args.out / "manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
