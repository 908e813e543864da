"""Command-line front end: ``levy-homog <command> --config run.json``.

Exit codes: 0 success, 2 invalid configuration, 3 mathematical precondition
failed (condition A, reachability, ergodicity), 4 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .cell_solver import default_lambdas, ergodic_constant, ergodic_constant_max
from .effective_op import tabulate, tabulate_max
from .errors import (ConfigError, ConsistencyError, DomainError, EmptyRuleError, EvaluationError, ParseError,
                     PreconditionError, SolverError)
from .homogenize import StudySetup, convergence_study
from .measures import check_homogeneity, estimate_alpha, extract_q0
from .nonlocal_op import TorusGrid, assemble_periodic
from .quadrature import build_rule, explicit_rule
from .reachability import build_graph, check_condition_B

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_SOLVER = 0, 2, 3, 4
COMMANDS = ("check-measure", "reachability", "cell", "effective", "homogenize")


class Run:
    """Validated config plus output plumbing shared by the subcommands."""

    def __init__(self, cfg, out_dir, threads):
        self.cfg = cfg
        self.hash = cfgmod.config_hash(cfg)
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = threads
        self.problem = cfgmod.build_problem(cfg)
        self.seed = cfg["seed"]

    @property
    def disc(self):
        return self.cfg["discretization"]

    @property
    def solver(self):
        return self.cfg["solver"]

    def write_json(self, name, payload):
        payload = {**payload, "config_hash": self.hash, "config": self.cfg}
        with open(self.out / name, "w", newline="\n") as fh:
            json.dump(_plain(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name, header, rows):
        with open(self.out / name, "w", newline="") as fh:
            fh.write(f"# config_hash={self.hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])

    def lam_seq(self):
        return self.solver.get("lam_seq") or default_lambdas(self.solver["lam_min"])

    def cell_q0(self, q, q0):
        if q0 is not None:
            return q0
        snap, _ = extract_q0(q, q.alpha, self._samples(q.dim))
        return snap

    def _samples(self, dim):
        rng = np.random.default_rng(self.seed)
        count = self.solver["samples"]
        u = rng.normal(size=(count, dim))
        u /= np.linalg.norm(u, axis=1)[:, None]
        return u * np.exp(rng.uniform(np.log(0.1), np.log(10.0), count))[:, None]

    def cell_grid(self):
        return TorusGrid(self.problem.dim, self.disc["cell_n"])

    def cell_rules(self):
        p = self.problem
        grid = self.cell_grid()
        if p.explicit is not None:
            return [explicit_rule(p.explicit["nodes"], p.explicit["weights"], p.beta, p.explicit["gamma"])]
        rho = self.disc["cell_rho"] or min(grid.h, 0.5)
        return [build_rule(self.cell_q0(q, q0), beta, rho, self.disc["cell_R"], self.disc["cells_per_decade"],
                           self.disc["angular_sectors"], gamma=p.form)
                for q, beta, q0 in p.structures]

    def cell_ops(self):
        grid = self.cell_grid()
        return [assemble_periodic(grid, r, form=self.problem.form) for r in self.cell_rules()]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def cmd_check_measure(run):
    p = run.problem
    if p.explicit is not None:
        raise ConfigError("check-measure needs a density, not an explicit node list")
    out = {"structures": []}
    status = EXIT_OK
    rows = []
    for s, (q, beta, q0_exact) in enumerate(p.structures):
        samples = run._samples(q.dim)
        entry = {"structure": s, "alpha_declared": q.alpha}
        try:
            snap, rep = extract_q0(q, q.alpha, samples)
        except PreconditionError as exc:
            entry["condition_A"] = {"passed": False, "message": str(exc), **exc.report}
            out["structures"].append(entry)
            status = EXIT_PRECONDITION
            continue
        entry["condition_A"] = {"passed": True, "C1": rep["C1"], "final_delta": rep["deltas"][-1],
                                "support_fraction": float(np.mean(rep["support_mask"])),
                                "degenerate": rep["degenerate"]}
        entry["alpha_estimate"] = estimate_alpha(q, np.logspace(-4, -1, 8), seed=run.seed)
        target = q0_exact if q0_exact is not None else snap
        hom = check_homogeneity(target, trials=run.solver["homogeneity_trials"], seed=run.seed,
                                rtol=run.solver["homogeneity_rtol"])
        hom.pop("failures", None)
        entry["homogeneity"] = hom
        if not hom["passed"]:
            status = EXIT_PRECONDITION
        out["structures"].append(entry)
        vals = target(samples)
        rows += [(s, z, v) for z, v in zip(samples, vals)]
    dim = max(q.dim for q, _, _ in p.structures)
    # lower-dimensional structures are padded with zeros
    run.write_csv("q0_samples.csv", ["structure"] + [f"z{i + 1}" for i in range(dim)] + ["q0"],
                  [(s, *z, *([0.0] * (dim - z.size)), v) for s, z, v in rows])
    out["passed"] = status == EXIT_OK
    run.write_json("measure_report.json", out)
    return status


def cmd_reachability(run):
    grid = run.cell_grid()
    eps_ball = run.disc["eps_ball"] or 2 * grid.h
    rules = run.cell_rules()
    betas = [s[1] for s in run.problem.structures]
    graph = build_graph(grid, rules, eps_ball, betas=betas)
    passed, report = check_condition_B(graph)
    report["per_structure_components"] = (
        [check_condition_B(build_graph(grid, [r], eps_ball))[1]["components"] for r in rules]
        if len(rules) > 1 else [report["components"]])
    graph.to_csv(run.out / "graph_edges.csv", f"config_hash={run.hash}")
    run.write_json("reachability.json", report)
    return EXIT_OK if passed else EXIT_PRECONDITION


def cmd_cell(run):
    p = run.problem
    ops = run.cell_ops()
    grid = ops[0].grid
    pts = grid.points()
    a = p.a.on_points(pts)
    f = p.f.on_points(pts)
    s = run.solver
    try:
        if len(ops) == 1:
            res = ergodic_constant(a, a * s["I"] + f, ops[0], run.lam_seq(), s["osc_tol"])
        else:
            res = ergodic_constant_max(a, f, ops, run.lam_seq(), s["osc_tol"], shifts=[a * s["I"], a * s["I2"]])
    except PreconditionError as exc:
        run.write_json("cell.json", {"passed": False, "error": "ergodicity", "message": str(exc),
                                     "lam_trace": exc.report.get("lam_trace", [])})
        raise
    run.write_csv("lam_trace.csv", ["lambda", "d_estimate", "oscillation", "holder_seminorm"], res.lam_trace)
    run.write_csv("corrector.csv", [f"y{i + 1}" for i in range(grid.dim)] + ["corrector"],
                  [(*y, w) for y, w in zip(pts, res.corrector.values)])
    run.write_json("cell.json", {"passed": True, "d": res.d, "oscillation": res.oscillation,
                                 "converged": res.converged, "certificate": res.certificate,
                                 "lam_final": res.lam_final})
    return EXIT_OK


def cmd_effective(run):
    p = run.problem
    ops = run.cell_ops()
    pts = ops[0].grid.points()
    a = p.a.on_points(pts)
    f = p.f.on_points(pts)
    s = run.solver
    if len(ops) == 1:
        grid_I = s.get("I_grid") or list(np.linspace(-1.0, 1.0, 9))
        eff = tabulate(a, f, ops[0], grid_I, run.lam_seq(), s["osc_tol"], a0=p.a0)
        eff.to_csv(run.out / "effective_table.csv", f"config_hash={run.hash}")
        run.write_json("effective.json", eff.summary())
    else:
        grid_I = s.get("I_grid") or list(np.linspace(-1.0, 1.0, 3))
        eff = tabulate_max(a, f, ops, grid_I, grid_I, run.lam_seq(), s["osc_tol"])
        eff.to_csv(run.out / "effective_table.csv", f"config_hash={run.hash}")
        run.write_json("effective.json", {"I1": eff.I1, "I2": eff.I2, "Ibar": eff.Ibar,
                                          "max_oscillation": float(eff.oscillations.max())})
    return EXIT_OK


def cmd_homogenize(run):
    p = run.problem
    if p.explicit is not None or len(p.structures) != 1:
        raise ConfigError("homogenize needs a single jump structure given by a density")
    q, beta, q0 = p.structures[0]
    d, s = run.disc, run.solver
    setup = StudySetup(
        domain=p.domain, a=p.a, f=p.f, phi=p.phi, q=q, beta=beta, q0=run.cell_q0(q, q0), form=p.form,
        eps_list=s["eps_list"], rho=d["rho"] or float(np.min(p.domain.h)), R=d["R"],
        cells_per_decade=d["cells_per_decade"], cell_n=d["cell_n"], cell_rho=d["cell_rho"], cell_R=d["cell_R"],
        lam_seq=run.lam_seq(), osc_tol=s["osc_tol"], I_grid=s.get("I_grid"), margin_factor=s["margin_factor"],
        effective_method=s["effective_method"], omega=s.get("omega"),
        threads=run.threads, snapshot=run.cfg)
    study = convergence_study(setup)
    timing = run.cfg["output"]["timing"]
    rows = [(e, err, m, r, w if timing else 0.0) for e, err, m, r, w in study.rows()]
    run.write_csv("study.csv", ["epsilon", "sup_error", "interior_margin", "solve_residual", "wall_ms"], rows)
    pts = p.domain.points()
    header = [f"x{i + 1}" for i in range(p.dim)] + [f"u_eps_{e!r}" for e in study.eps_list] + ["u_bar"]
    cols = [sol.values for sol in study.solutions] + [study.effective.values]
    run.write_csv("fields.csv", header, [(*x, *vals) for x, vals in zip(pts, zip(*cols))])
    summary = study.summary()
    summary.pop("config", None)
    run.write_json("study.json", summary)
    return EXIT_OK


HANDLERS = {
    "check-measure": cmd_check_measure,
    "reachability": cmd_reachability,
    "cell": cmd_cell,
    "effective": cmd_effective,
    "homogenize": cmd_homogenize,
}


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("LEVY_HOMOG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LEVY_HOMOG_THREADS={env!r} is not an integer") from None
    return None


def build_parser():
    parser = argparse.ArgumentParser(prog="levy-homog", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--threads", type=int, help="worker threads (fallback: LEVY_HOMOG_THREADS)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. solver.osc_tol=1e-5 (repeatable)")
    parser.add_argument("--seed", type=int, help="seed for sampling in the checkers")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        cfg = cfgmod.load(args.config, args.set, args.seed)
        if threads is not None:
            cfg["solver"]["threads"] = threads
        run = Run(cfg, args.out or cfg["output"]["dir"], cfg["solver"]["threads"])
        code = HANDLERS[args.command](run)
    except (ConfigError, ParseError, DomainError, EmptyRuleError, EvaluationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (SolverError, ConsistencyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if code == EXIT_PRECONDITION:
        print("precondition failed; see the report in the output directory", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
