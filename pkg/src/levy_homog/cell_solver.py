"""Discounted cell problems and the vanishing-discount ergodic constant.

For lam > 0 the discounted problem ``lam v - a(y) L v = f0`` on the torus is a
nonsingular M-matrix system, so ``|lam v|_inf <= |f0|_inf`` holds exactly in
exact arithmetic.  The ergodic constant is read off as the grid mean of
``lam v_lam`` once its oscillation is below tolerance.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ConsistencyError, ErgodicityFailure, SolverError
from .nonlocal_op import PeriodicField, sample

DIRECT_LIMIT = 2 ** 16
RESIDUAL_RTOL = 1e-10
BOUND_SLACK = 1e-8


def default_lambdas(last=1e-3):
    """Dyadic sequence 2^-1, 2^-2, ... down to the first value <= ``last``."""
    lams = [0.5]
    while lams[-1] > last:
        lams.append(lams[-1] / 2)
    return lams


@dataclass
class DiscountedSolve:
    lam: float
    v: PeriodicField
    residual: float
    iterations: int
    policy: np.ndarray | None = None

    @property
    def scaled(self):
        return self.lam * self.v.values


@dataclass
class ErgodicResult:
    d: float
    oscillation: float
    corrector: PeriodicField
    lam_trace: list
    lam_final: float
    scaled: np.ndarray
    converged: bool
    certificate: float
    meta: dict = field(default_factory=dict)

    def trace_to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "d_estimate", "oscillation", "holder_seminorm"])
            for row in self.lam_trace:
                w.writerow([repr(float(x)) for x in row])


def _values_on(grid, fn):
    if isinstance(fn, PeriodicField):
        return fn.values
    if isinstance(fn, np.ndarray) and fn.shape == (grid.size,):
        return fn.astype(float)
    return sample(fn, grid.points())


def _coefficient(grid, a, a0=None):
    vals = _values_on(grid, a)
    floor = 0.0 if a0 is None else a0
    if np.min(vals) <= 0 or np.min(vals) < floor:
        raise ConfigError(f"coefficient a has minimum {np.min(vals):.6g} on the grid; need a >= a0 > 0")
    return vals


class CellProblem:
    """``lam v - D_a A v = f0`` for a fixed operator and coefficient, caching one factorisation per lam."""

    def __init__(self, op, a=None, a0=None, max_iter=2000):
        if op.kind != "periodic":
            raise ConfigError("cell problems need a periodic operator")
        self.op = op
        self.grid = op.grid
        self.a = _coefficient(self.grid, a, a0)
        self.B = (sp.diags(self.a) @ op.matrix).tocsc()
        self.max_iter = max_iter
        self._factors = {}

    def system(self, lam):
        return (lam * sp.identity(self.grid.size, format="csc") - self.B).tocsc()

    def _solver(self, lam):
        if lam not in self._factors:
            mat = self.system(lam)
            if self.grid.size <= DIRECT_LIMIT:
                self._factors[lam] = ("direct", spla.splu(mat))
            else:
                self._factors[lam] = ("iterative", (mat, spla.spilu(mat, drop_tol=1e-5, fill_factor=10)))
        return self._factors[lam]

    def _linear_solve(self, lam, rhs, scale=None):
        """Solve with the cached factorisation and verify the residual."""
        kind, obj = self._solver(lam)
        mat = self.system(lam) if kind == "direct" else obj[0]
        tol = RESIDUAL_RTOL
        history = []
        if kind == "direct":
            v = obj.solve(rhs)
            it = 1
        else:
            mat_, ilu = obj
            prec = spla.LinearOperator(mat_.shape, ilu.solve)
            cb = lambda xk: history.append(float(np.abs(mat_ @ xk - rhs).max()))  # noqa: E731
            v, info = spla.bicgstab(mat_, rhs, rtol=tol * 1e-2, atol=0.0, M=prec, maxiter=self.max_iter,
                                    callback=cb)
            it = len(history)
            if info != 0:
                raise SolverError(f"bicgstab did not converge (info={info})", history)
        res = float(np.abs(mat @ v - rhs).max())
        scale = np.abs(rhs).max() if scale is None else scale
        bound = tol * (lam * np.abs(v).max() + scale)
        if res > max(bound, 1e-300):
            # one step of iterative refinement before giving up
            v = v + (obj.solve(rhs - mat @ v) if kind == "direct" else spla.spsolve(mat, rhs - mat @ v))
            res = float(np.abs(mat @ v - rhs).max())
            if res > bound:
                raise SolverError(f"residual {res:.3e} above tolerance {bound:.3e}", history + [res])
        return v, res, it

    def solve(self, lam, f0):
        if lam <= 0:
            raise ConfigError(f"discount must be positive, got {lam}")
        f = _values_on(self.grid, f0)
        # constants are annihilated by A, so split off the large constant mode
        # analytically; the deviation system is then well scaled
        c = float(np.sum(f / self.a) / np.sum(1.0 / self.a))
        w, res, it = self._linear_solve(lam, f - c, scale=np.abs(f).max())
        v = c / lam + w
        _check_bound(lam, v, f)
        return DiscountedSolve(lam, PeriodicField(self.grid, v), res, it)


def _check_bound(lam, v, f):
    if lam * np.abs(v).max() > np.abs(f).max() + BOUND_SLACK:
        raise ConsistencyError(
            f"uniform bound violated: |lam v| = {lam * np.abs(v).max():.12g} > |f0| = {np.abs(f).max():.12g}")


def solve_discounted(lam, a, f0, op, a0=None):
    return CellProblem(op, a, a0).solve(lam, f0)


def holder_seminorm(fld, theta=1.0, pairs=100_000, seed=0):
    """Largest |v(y) - v(y')| / d(y, y')^theta over grid pairs, with periodic distance."""
    if not 0 < theta <= 1:
        raise ConfigError("theta must lie in (0, 1]")
    grid = fld.grid
    v = fld.values
    if np.ptp(v) == 0:
        return 0.0
    if grid.dim == 1:
        n = grid.n
        best = 0.0
        for k in range(1, n // 2 + 1):
            diff = np.abs(np.roll(v, -k) - v).max()
            best = max(best, diff / (k / n) ** theta)
        return float(best)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, grid.size, pairs)
    j = rng.integers(0, grid.size, pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    c = grid.coords()
    delta = np.abs(c[i] - c[j])
    delta = np.minimum(delta, grid.n - delta) * grid.h
    dist = np.linalg.norm(delta, axis=1)
    return float(np.max(np.abs(v[i] - v[j]) / dist ** theta))


def _check_lambdas(lam_seq):
    lam_seq = [float(x) for x in lam_seq]
    if len(lam_seq) < 2 or any(b >= a for a, b in zip(lam_seq, lam_seq[1:])) or lam_seq[-1] <= 0:
        raise ConfigError("lambda sequence must be positive and strictly decreasing")
    if lam_seq[-1] > 1e-3 * (1 + 1e-12):
        raise ConfigError(f"lambda sequence must reach 1e-3 or below, ends at {lam_seq[-1]}")
    return lam_seq


def _vanishing_discount(solve, grid, lam_seq, osc_tol, theta, residual_of, warn=True):
    """Shared loop for the linear and max-form problems.

    ``solve(lam)`` returns a DiscountedSolve; ``residual_of(w)`` the cell residual for a mean-zero w.
    """
    lam_seq = _check_lambdas(lam_seq)
    trace = []
    last = None
    converged = False
    for lam in lam_seq:
        sol = solve(lam)
        s = sol.scaled
        osc = float(s.max() - s.min())
        mean = float(s.mean())
        trace.append((lam, mean, osc, holder_seminorm(PeriodicField(grid, s), theta)))
        last = sol
        if osc <= osc_tol:
            converged = True
            break
        # compare with the newest entry at least one decade earlier
        earlier = [t for t in trace[:-1] if t[0] >= 10 * lam * (1 - 1e-12)]
        if earlier and osc > 0.9 * earlier[-1][2]:
            raise ErgodicityFailure(
                f"oscillation of lam*v stalled at {osc:.3e} (was {earlier[-1][2]:.3e} at lam={earlier[-1][0]:g}); "
                "the jump structure may not connect the torus (see reachability)",
                {"lam_trace": trace},
            )
    s = last.scaled
    d = float(s.mean())
    osc = float(s.max() - s.min())
    w = last.v.values - last.v.values.mean()
    cert = float(np.abs(residual_of(w, d)).max())
    if not converged and warn:
        warnings.warn(f"oscillation {osc:.3e} above tolerance {osc_tol:.3e} at the final lambda", RuntimeWarning)
    return ErgodicResult(d, osc, PeriodicField(grid, w), trace, last.lam, s, converged, cert,
                         {"policy": last.policy})


def ergodic_constant(a, f0, op, lam_seq=None, osc_tol=1e-4, theta=1.0, problem=None, warn=True):
    """Vanishing-discount limit d = lim lam v_lam for ``lam v - a L v = f0``.

    ``certificate`` is sup |d - a L w - f0| for the mean-zero corrector w, which
    is bounded by the final oscillation.
    """
    problem = problem or CellProblem(op, a)
    f = _values_on(op.grid, f0)
    lam_seq = default_lambdas() if lam_seq is None else lam_seq

    def residual_of(w, d):
        return d - problem.B @ w - f

    return _vanishing_discount(lambda lam: problem.solve(lam, f), op.grid, lam_seq, osc_tol, theta, residual_of,
                              warn)


class MaxCellProblem:
    """``lam v + max_l { -a A_l v - g_l } = f0`` solved by policy iteration."""

    def __init__(self, ops, a=None, a0=None, max_policy_iter=200):
        if len(ops) < 2:
            raise ConfigError("the max-form problem needs at least two operators")
        grid = ops[0].grid
        if any(o.grid != grid for o in ops):
            raise ConfigError("all operators must live on the same grid")
        self.cells = [CellProblem(o, a, a0) for o in ops]
        self.grid = grid
        self.a = self.cells[0].a
        self.max_policy_iter = max_policy_iter

    def hamiltonian_terms(self, v, shifts):
        return np.stack([-(c.B @ v) - g for c, g in zip(self.cells, shifts)])

    def solve(self, lam, f0, shifts=None):
        if lam <= 0:
            raise ConfigError(f"discount must be positive, got {lam}")
        f = _values_on(self.grid, f0)
        n = self.grid.size
        shifts = [np.zeros(n) if g is None else _values_on(self.grid, g) for g in (shifts or [None] * len(self.cells))]
        policy = np.zeros(n, dtype=int)
        rows = np.arange(n)
        Bs = [c.B.tocsr() for c in self.cells]
        seen = set()
        for it in range(1, self.max_policy_iter + 1):
            Bp = _select_rows(Bs, policy)
            mat = (lam * sp.identity(n, format="csr") - Bp).tocsc()
            rhs = f + np.choose(policy, shifts)
            # same constant split as the linear solver; any constant is valid, this one matches it exactly
            c = float(np.sum(rhs / self.a) / np.sum(1.0 / self.a))
            w = spla.splu(mat).solve(rhs - c) if n <= DIRECT_LIMIT else spla.spsolve(mat, rhs - c)
            v = c / lam + w
            terms = self.hamiltonian_terms(v, shifts)
            best = terms.max(axis=0)
            scale = 1e-12 * (1 + np.abs(terms).max())
            # keep the current choice on ties
            current = terms[policy, rows]
            new_policy = np.where(current >= best - scale, policy, terms.argmax(axis=0))
            if np.array_equal(new_policy, policy):
                res = float(np.abs(lam * v + best - f).max())
                _check_bound_max(lam, v, f, shifts)
                return DiscountedSolve(lam, PeriodicField(self.grid, v), res, it, policy)
            key = new_policy.tobytes()
            if key in seen:
                raise SolverError("policy iteration is cycling", [it])
            seen.add(key)
            policy = new_policy
        raise SolverError(f"policy iteration did not settle in {self.max_policy_iter} steps", [self.max_policy_iter])


def _select_rows(Bs, policy):
    pieces = []
    for l, B in enumerate(Bs):
        mask = sp.diags((policy == l).astype(float))
        pieces.append(mask @ B)
    out = pieces[0]
    for p in pieces[1:]:
        out = out + p
    return out.tocsr()


def _check_bound_max(lam, v, f, shifts):
    bound = np.abs(f).max() + max(np.abs(g).max() for g in shifts)
    if lam * np.abs(v).max() > bound + BOUND_SLACK:
        raise ConsistencyError(f"uniform bound violated in the max-form problem: {lam * np.abs(v).max():.12g} > {bound:.12g}")


def solve_discounted_max(lam, a, f0, ops, shifts=None, a0=None):
    return MaxCellProblem(ops, a, a0).solve(lam, f0, shifts)


def ergodic_constant_max(a, f0, ops, lam_seq=None, osc_tol=1e-4, theta=1.0, shifts=None, problem=None,
                         warn=True):
    """Ergodic constant of ``d + max_l { -a A_l v - g_l } = f0``."""
    problem = problem or MaxCellProblem(ops, a)
    f = _values_on(problem.grid, f0)
    n = problem.grid.size
    shift_vals = [np.zeros(n) if g is None else _values_on(problem.grid, g) for g in (shifts or [None] * len(ops))]
    lam_seq = default_lambdas() if lam_seq is None else lam_seq

    def residual_of(w, d):
        return d + problem.hamiltonian_terms(w, shift_vals).max(axis=0) - f

    return _vanishing_discount(lambda lam: problem.solve(lam, f, shift_vals), problem.grid, lam_seq, osc_tol, theta,
                               residual_of, warn)
