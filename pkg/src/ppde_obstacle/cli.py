"""Experiment runner: reproducible tables, JSON reports and figures.

Every artifact embeds the config hash and the seed; identical config and seed
produce byte-identical delimited outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import reporting
from .config import ExperimentConfig
from .errors import PpdeError
from .expectation import Lattice, envelope_to_csv, positive_hitting_check, snell_upper
from .frozen import envelope_values, hitting_gap_diagnostic
from .model import validate as validate_data
from .paths import PathPoint
from .rbsde import TreeSpec, dpp_residual, solve_penalized, solve_rbsde_tree, value_functional
from .simulate import ControlPolicy, euler_bundle

THREADS_ENV = "PPDE_OBSTACLE_THREADS"


def _meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed}


def _echo(cfg: ExperimentConfig) -> dict:
    body = cfg.merged()
    body.pop("outdir", None)
    return body


def _origin(cfg: ExperimentConfig) -> PathPoint:
    n = max(int(cfg.merged()["solver"]["n_steps"]), 1)
    return PathPoint.origin(dt=cfg.data().T / n)


def cmd_value(cfg: ExperimentConfig, out: str) -> int:
    data = cfg.data()
    solver = cfg.merged()["solver"]
    est = value_functional(
        data,
        _origin(cfg),
        n_steps=int(solver["n_steps"]),
        n_paths=int(solver["n_paths"]),
        seed=cfg.seed,
        method=solver["method"],
        basis=solver["basis"],
    )
    rows = [[data.label, est.meta["method"], solver["n_steps"], est.value, est.ci]]
    reporting.write_csv(
        os.path.join(out, "value.csv"),
        ["label", "method", "n_steps", "estimate", "ci"],
        rows,
        meta=_meta(cfg),
    )
    reporting.write_json(os.path.join(out, "value.json"), {"config": _echo(cfg), **_meta(cfg), "estimate": est.value, "ci": est.ci, "meta": est.meta})
    reporting.figure_value(os.path.join(out, "value.png"), est.value, est.ci, data.label or "instance")
    return 0


def cmd_converge(cfg: ExperimentConfig, out: str, threads: int) -> int:
    data = cfg.data()
    solver = cfg.merged()["solver"]
    base = _origin(cfg)
    sections: dict = {}

    sections["n_steps"] = [
        (n, solve_rbsde_tree(data, PathPoint.origin(dt=data.T / n), int(n)).y0)
        for n in solver["steps_sweep"]
    ]
    n_ref = int(solver["n_steps"])
    lsmc_rows = []
    for npaths in solver["paths_sweep"]:
        bundle = euler_bundle(data, PathPoint.origin(dt=data.T / n_ref), ControlPolicy.constant(0), n_ref, int(npaths), seed=cfg.seed)
        from .rbsde import solve_rbsde_lsmc

        lsmc_rows.append((int(npaths), solve_rbsde_lsmc(data, bundle, basis=solver["basis"]).y0))
    sections["n_paths"] = lsmc_rows
    spec = TreeSpec(PathPoint.origin(dt=data.T / n_ref), n_ref)
    sections["m"] = [(int(m), solve_penalized(data, spec, float(m)).y0) for m in solver["m_schedule"]]
    if solver.get("include_alpha_sweep", False):
        opt = cfg.cell_options()
        m_top = float(solver["m_schedule"][-1])
        sections["alpha"] = [
            (float(a), envelope_values(data, float(a), m_top, int(solver["depth_cap"]), opt)["phi0"]
             - envelope_values(data, float(a), m_top, int(solver["depth_cap"]), opt)["psi0"])
            for a in solver["alphas"]
        ]
    if "sigma_grids" in solver:
        rows = []
        for grid in solver["sigma_grids"]:
            d2 = cfg.__class__(problem={**cfg.merged()["problem"], "sigma": list(grid)},
                               solver=cfg.solver, seed=cfg.seed).data()
            rows.append((len(grid), solve_rbsde_tree(d2, PathPoint.origin(dt=d2.T / n_ref), n_ref).y0))
        sections["controls"] = rows

    all_rows = []
    for name, rows in sections.items():
        for x, y in rows:
            all_rows.append([name, x, y])
    reporting.write_csv(os.path.join(out, "converge.csv"), ["sweep", "parameter", "value"], all_rows, meta=_meta(cfg))
    reporting.figure_convergence(os.path.join(out, "converge.png"), sections)
    return 0


def cmd_sandwich(cfg: ExperimentConfig, out: str, threads: int) -> int:
    data = cfg.data()
    solver = cfg.merged()["solver"]
    est = value_functional(data, _origin(cfg), n_steps=int(solver["n_steps"]), seed=cfg.seed, method=solver["method"])
    m_top = float(solver["m_schedule"][-1])
    alphas = [float(a) for a in solver["alphas"]]
    opt = cfg.cell_options()
    slack = est.ci + 2e-2

    def one(alpha):
        return envelope_values(data, alpha, m_top, int(solver["depth_cap"]), opt)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, alphas))
    else:
        rows = [one(a) for a in alphas]
    for r in rows:
        r["u0"] = est.value
        r["slack"] = slack
        r["gap"] = r["phi0"] - r["psi0"]
        r["lower_ok"] = r["psi0"] - slack <= est.value
        r["upper_ok"] = est.value <= r["phi0"] + slack
    report = {
        "rows": rows,
        "all_contained": all(r["lower_ok"] and r["upper_ok"] for r in rows),
        "gaps_nonincreasing": all(a["gap"] >= b["gap"] - 1e-9 for a, b in zip(rows, rows[1:])),
        "u0": est.value,
        "config": _echo(cfg),
        **_meta(cfg),
    }
    reporting.write_csv(
        os.path.join(out, "sandwich.csv"),
        ["alpha", "m", "psi0", "phi0", "u0", "gap", "lower_ok", "upper_ok"],
        [[r["alpha"], r["m"], r["psi0"], r["phi0"], r["u0"], r["gap"], r["lower_ok"], r["upper_ok"]] for r in rows],
        meta=_meta(cfg),
    )
    reporting.write_json(os.path.join(out, "sandwich.json"), report)
    reporting.figure_sandwich(os.path.join(out, "sandwich.png"), rows)
    return 0 if report["all_contained"] else 1


def cmd_snell(cfg: ExperimentConfig, out: str) -> int:
    data = cfg.data()
    solver = cfg.merged()["solver"]
    lat = Lattice.build(
        L=float(solver["L"]), T=data.T, n_steps=int(solver["lattice_steps"]),
        dx=solver.get("lattice_dx"),
    )

    def reward(i, x):
        if i == lat.n_steps:
            return data.terminal.state(x)
        return data.barrier.state(i * lat.dt, x)

    res = snell_upper(lat, reward)
    envelope_to_csv(res, lat, os.path.join(out, "snell_envelope.csv"))
    hit = positive_hitting_check(lat, float(solver["delta"]))
    reporting.write_csv(
        os.path.join(out, "snell.csv"),
        ["root_value", "lower_hitting_expectation", "delta", "L", "n_steps"],
        [[res.value, hit, solver["delta"], solver["L"], lat.n_steps]],
        meta=_meta(cfg),
    )
    reporting.figure_snell(os.path.join(out, "snell.png"), lat, res)
    return 0


def cmd_dpp(cfg: ExperimentConfig, out: str) -> int:
    data = cfg.data()
    solver = cfg.merged()["solver"]
    n = int(solver["n_steps"])
    t1 = float(solver["t1"])
    delta = float(solver["delta"])
    base = PathPoint.origin(dt=data.T / n)
    rows = [
        ["deterministic", t1, "", n, dpp_residual(data, base, t1, n)],
        ["hitting", t1, delta, n, dpp_residual(data, base, t1, n, variant="hitting", delta=delta)],
    ]
    reporting.write_csv(os.path.join(out, "dpp.csv"), ["variant", "t1", "delta", "n_steps", "residual"], rows, meta=_meta(cfg))
    reporting.figure_dpp(os.path.join(out, "dpp.png"), rows)
    return 0


def cmd_diagnose_hitting(cfg: ExperimentConfig, out: str) -> int:
    solver = cfg.merged()["solver"]
    alphas = solver["alphas"]
    rep = hitting_gap_diagnostic(
        float(alphas[0]),
        [float(x) for x in solver["x_list"]],
        [float(d) for d in solver["delta_list"]],
        L=float(solver["L"]),
        n_paths=int(solver["diag_paths"]),
        seed=cfg.seed,
        T=cfg.data().T,
        n_steps=int(solver["diag_steps"]),
    )
    rep["config"] = _echo(cfg)
    rep.update(_meta(cfg))
    deltas = [float(d) for d in solver["delta_list"]]
    rows = [
        [r["x"], r["E_first_gap"]] + [r[f"P_gamma_gt_{d:g}"] for d in deltas]
        for r in rep["capacity"]
    ]
    reporting.write_csv(
        os.path.join(out, "hitting.csv"),
        ["x", "E_first_gap"] + [f"P_gt_{d:g}" for d in deltas],
        rows,
        meta=_meta(cfg),
    )
    reporting.write_json(os.path.join(out, "hitting.json"), rep)
    reporting.figure_hitting(os.path.join(out, "hitting.png"), rep)
    return 0


def cmd_validate(cfg: ExperimentConfig, out: str) -> int:
    rep = validate_data(cfg.data(), probes=400, seed=cfg.seed)
    rep["config"] = _echo(cfg)
    rep.update(_meta(cfg))
    reporting.write_json(os.path.join(out, "validate.json"), rep)
    return 0 if rep["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ppde-obstacle",
        description="Obstacle-problem solvers for path-dependent PDEs via reflected BSDEs",
    )
    p.add_argument("command", choices=["value", "converge", "sandwich", "snell", "dpp", "diagnose-hitting", "validate"])
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (env %s)" % THREADS_ENV)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config, seed=args.seed, outdir=args.out)
        else:
            cfg = ExperimentConfig(seed=args.seed or 0, outdir=args.out or "out")
        out = reporting.ensure_dir(cfg.outdir)
        if args.command == "value":
            return cmd_value(cfg, out)
        if args.command == "converge":
            return cmd_converge(cfg, out, threads)
        if args.command == "sandwich":
            return cmd_sandwich(cfg, out, threads)
        if args.command == "snell":
            return cmd_snell(cfg, out)
        if args.command == "dpp":
            return cmd_dpp(cfg, out)
        if args.command == "diagnose-hitting":
            return cmd_diagnose_hitting(cfg, out)
        if args.command == "validate":
            return cmd_validate(cfg, out)
        raise AssertionError("unreachable")
    except PpdeError as exc:
        out = reporting.ensure_dir(args.out or "out")
        reporting.write_json(os.path.join(out, "error.json"), exc.record())
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
