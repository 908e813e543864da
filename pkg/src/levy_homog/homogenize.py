"""Oscillatory Dirichlet problems, the effective problem and the epsilon study.

The epsilon problem ``u - a(x/eps) L u = f(x/eps)`` with ``u = phi`` outside the
box is one monotone linear solve.  The effective problem
``u + Ibar(L u) = 0`` is solved either by damped Picard iteration or, when the
tabulated Ibar is affine, by the equivalent linear system
``(I - cbar A) u = d0 + cbar b``.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell_solver import default_lambdas
from .effective_op import eval_effective, tabulate
from .errors import ConfigError, RetabulationRequired, SolverError
from .nonlocal_op import BoxDomain, DomainField, TorusGrid, assemble_domain, assemble_periodic, sample
from .quadrature import build_rule

RESIDUAL_RTOL = 1e-8


@dataclass
class DirichletSolve:
    field: DomainField
    residual: float
    iterations: int = 1
    method: str = "direct"
    I_range: tuple = (0.0, 0.0)
    history: list = field(default_factory=list)

    @property
    def values(self):
        return self.field.values


def _linear_dirichlet(op, rhs, data_scale):
    n = op.size
    mat = (sp.identity(n, format="csc") - op.matrix).tocsc()
    u = spla.splu(mat).solve(rhs)
    res = float(np.abs(mat @ u - rhs).max())
    if res > RESIDUAL_RTOL * max(data_scale, 1.0):
        raise SolverError(f"Dirichlet solve residual {res:.3e} too large", [res])
    return u, res


def solve_epsilon(eps, domain, a, f, phi, rule, form=None, collar_width=None):
    """Solve ``(I - D_a A) u = f(x/eps) + D_a b`` on the interior nodes."""
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    op = assemble_domain(domain, phi, rule, form=form, a=a, eps=eps, collar_width=collar_width)
    pts = domain.points()
    fv = sample(f, pts / eps)
    rhs = fv + op.offset
    scale = float(np.abs(fv).max() + np.abs(op.offset).max())
    u, res = _linear_dirichlet(op, rhs, scale)
    return DirichletSolve(DomainField(domain, u, phi, op.meta["collar_width"]), res)


def picard_step_size(Ibar, op):
    """Largest omega for which the damped map is a sup-norm contraction."""
    lip = float(np.max(np.abs(np.diff(Ibar.Ibar) / np.diff(Ibar.I))))
    lip = max(lip, abs(Ibar.slope))
    return 1.0 / (1.0 + lip * float(np.abs(op.matrix.diagonal()).max()))


def solve_effective(Ibar, domain, phi, rule, form=None, method="auto", omega=None, tol=1e-11, max_iter=200_000,
                    collar_width=None):
    """Effective Dirichlet problem ``u + Ibar(I[u]) = 0`` with I built from the original measure.

    ``method`` is ``"direct"`` (affine Ibar only), ``"picard"`` or ``"auto"``
    (direct when the table is affine within tolerance).
    """
    op = assemble_domain(domain, phi, rule, form=form, collar_width=collar_width)
    if method == "auto":
        method = "direct" if Ibar.is_affine else "picard"
    if method == "direct":
        if not Ibar.is_affine:
            raise ConfigError("the direct effective solve needs an affine Ibar table")
        cbar, d0 = Ibar.cbar, Ibar.d0
        rhs = d0 + cbar * op.offset
        scaled = op.scaled(np.full(op.size, cbar))
        u, res = _linear_dirichlet(scaled, rhs, abs(d0) + np.abs(rhs).max())
        it, hist = 1, []
    elif method == "picard":
        u, res, it, hist = _picard(Ibar, op, omega, tol, max_iter)
    else:
        raise ConfigError(f"unknown effective solver {method!r}")
    I_vals = op.matrix @ u + op.offset
    lo, hi = float(I_vals.min()), float(I_vals.max())
    span = Ibar.I[-1] - Ibar.I[0]
    slack = 1e-9 * max(span, 1.0)
    if lo < Ibar.I[0] - slack or hi > Ibar.I[-1] + slack:
        raise RetabulationRequired(
            f"I[u] ranges over [{lo:.6g}, {hi:.6g}] but Ibar is tabulated on [{Ibar.I[0]:.6g}, {Ibar.I[-1]:.6g}]",
            (lo, hi))
    return DirichletSolve(DomainField(domain, u, phi, op.meta["collar_width"]), res, it, method, (lo, hi), hist)


def _picard(Ibar, op, omega, tol, max_iter):
    omega = picard_step_size(Ibar, op) if omega is None else float(omega)
    if not 0 < omega <= 1:
        raise ConfigError(f"omega must lie in (0, 1], got {omega}")
    u = np.zeros(op.size)
    history = []
    growth = 0
    for k in range(1, max_iter + 1):
        G = -eval_effective(Ibar, op.matrix @ u + op.offset)[0]
        u_new = (1 - omega) * u + omega * G
        step = float(np.abs(u_new - u).max())
        history.append(step)
        u = u_new
        growth = growth + 1 if len(history) > 1 and step > history[-2] else 0
        if growth >= 10:
            raise SolverError(f"Picard iteration is not contracting (omega={omega:.3e}); try a smaller omega",
                              history[-20:])
        # step / omega bounds the distance to the fixed point for contraction factors up to 1 - omega;
        # the bound stays positive at omega = 1, where a non-contracting map must not stop early
        if step / omega <= tol * max(1.0, np.abs(u).max()):
            res = float(np.abs(u + eval_effective(Ibar, op.matrix @ u + op.offset)[0]).max())
            return u, res, k, history
    raise SolverError(f"Picard iteration did not converge in {max_iter} steps", history[-20:])


@dataclass
class StudySetup:
    """Everything a convergence study needs; the CLI builds this from the JSON config."""

    domain: BoxDomain
    a: object
    f: object
    phi: object
    q: object
    beta: object
    q0: object
    form: int
    eps_list: list
    rho: float
    R: float
    cells_per_decade: int = 32
    cell_n: int = 128
    cell_rho: float | None = None
    cell_R: float = 100.0
    lam_seq: list | None = None
    osc_tol: float = 1e-4
    I_grid: list | None = None
    margin_factor: float = 1.0
    effective_method: str = "auto"
    omega: float | None = None
    threads: int = 1
    snapshot: dict = field(default_factory=dict)


@dataclass
class HomogenizationStudy:
    eps_list: list
    solutions: list
    effective: DirichletSolve
    Ibar: object
    errors: list
    interior_margin: float
    residuals: list
    wall_ms: list
    monotone: bool
    snapshot: dict = field(default_factory=dict)

    def rows(self):
        return [(e, err, self.interior_margin, r, w)
                for e, err, r, w in zip(self.eps_list, self.errors, self.residuals, self.wall_ms)]

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "sup_error", "interior_margin", "solve_residual", "wall_ms"])
            for row in self.rows():
                w.writerow([repr(float(x)) for x in row])

    def summary(self):
        return {
            "eps_list": [float(e) for e in self.eps_list],
            "sup_error": [float(e) for e in self.errors],
            "interior_margin": self.interior_margin,
            "monotone_decrease": self.monotone,
            "ratio_last_first": float(self.errors[-1] / self.errors[0]) if self.errors[0] > 0 else 0.0,
            "effective": {"cbar": self.Ibar.cbar, "d0": self.Ibar.d0, "method": self.effective.method,
                          "residual": self.effective.residual, "I_range": list(self.effective.I_range)},
            "config": self.snapshot,
        }

    def to_json(self, path, extra=None):
        with open(path, "w") as fh:
            json.dump({**self.summary(), **(extra or {})}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _check_eps_list(eps_list, domain):
    eps = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps) < 3:
        raise ConfigError("the study needs at least three eps values")
    ratios = [a / b for a, b in zip(eps, eps[1:])]
    if not np.allclose(ratios, 2.0):
        raise ConfigError("eps values must be dyadic (each half the previous)")
    per_unit = 1.0 / float(np.max(domain.h))
    if per_unit < 8.0 / eps[-1] * (1 - 1e-12):
        raise ConfigError(f"grid has {per_unit:g} points per unit; the finest eps needs at least {8 / eps[-1]:g}")
    return eps


def interior_mask(domain, margin):
    mask = domain.distance_to_boundary() > margin
    if not mask.any():
        raise ConfigError(f"interior margin {margin} leaves no points in the domain")
    return mask


def _effective_table(setup):
    cell_grid = TorusGrid(setup.domain.dim, setup.cell_n)
    cell_rho = setup.cell_rho or cell_grid.h
    cell_rule = build_rule(setup.q0, setup.beta, cell_rho, setup.cell_R, setup.cells_per_decade, gamma=setup.form)
    cell_op = assemble_periodic(cell_grid, cell_rule, form=setup.form)
    lam_seq = setup.lam_seq or default_lambdas()
    return cell_op, lam_seq


def convergence_study(setup: StudySetup) -> HomogenizationStudy:
    """Sup-norm interior errors |u_eps - ubar| over a dyadic eps sequence on one global grid."""
    eps_list = _check_eps_list(setup.eps_list, setup.domain)
    rule = build_rule(setup.q, setup.beta, setup.rho, setup.R, setup.cells_per_decade, gamma=setup.form)
    margin = setup.margin_factor * rule.bound_B1 * eps_list[0]
    mask = interior_mask(setup.domain, margin)

    cell_op, lam_seq = _effective_table(setup)
    I_grid = setup.I_grid if setup.I_grid is not None else np.linspace(-1.0, 1.0, 9)
    Ibar = tabulate(setup.a, setup.f, cell_op, I_grid, lam_seq, setup.osc_tol)
    try:
        eff = solve_effective(Ibar, setup.domain, setup.phi, rule, setup.form, setup.effective_method, setup.omega)
    except RetabulationRequired as exc:
        # crude first pass told us where I[ubar] lives; widen the table and redo
        lo, hi = exc.needed_range
        pad = 0.1 * max(hi - lo, 1.0)
        lo, hi = min(lo - pad, Ibar.I[0]), max(hi + pad, Ibar.I[-1])
        Ibar = tabulate(setup.a, setup.f, cell_op, np.linspace(lo, hi, 9), lam_seq, setup.osc_tol)
        eff = solve_effective(Ibar, setup.domain, setup.phi, rule, setup.form, setup.effective_method, setup.omega)

    def one(eps):
        t0 = time.perf_counter()
        sol = solve_epsilon(eps, setup.domain, setup.a, setup.f, setup.phi, rule, setup.form)
        return sol, (time.perf_counter() - t0) * 1e3

    if setup.threads > 1:
        with ThreadPoolExecutor(setup.threads) as pool:
            results = list(pool.map(one, eps_list))
    else:
        results = [one(e) for e in eps_list]
    sols = [r[0] for r in results]
    errors = [float(np.abs(s.values - eff.values)[mask].max()) for s in sols]
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    return HomogenizationStudy(
        eps_list, sols, eff, Ibar, errors, margin,
        [s.residual for s in sols], [r[1] for r in results], monotone, dict(setup.snapshot))
