"""Monotone discretisations of the Levy operator.

Periodic (torus) operators discretise

    L v(y) = sum_j w_j [v(y + beta(z_j)) - v(y)] + <drift, grad v(y)>

with multilinear interpolation at the jump targets and upwind differences
for the drift, so every off-diagonal entry is nonnegative and every row sums
to zero.  Because the stencil does not depend on ``y`` the periodic matrix is
circulant.

Domain operators use the same stencil on the interior nodes of a box and
route every coupling that leaves the box into an affine offset built from the
exterior data ``phi``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ConsistencyError

ROW_SUM_RTOL = 1e-10


def sample(fn, points):
    """Evaluate a coefficient given as a number, an Expression or a callable on (K, N) points."""
    points = np.atleast_2d(points)
    if fn is None:
        return np.ones(points.shape[0])
    if np.isscalar(fn):
        return np.full(points.shape[0], float(fn))
    if hasattr(fn, "on_points"):
        return fn.on_points(points)
    return np.asarray(fn(points), dtype=float).reshape(points.shape[0])


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    def coords(self):
        """Integer multi-indices of all grid points, shape (size, dim), C order."""
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1)

    def points(self):
        return self.coords() * self.h

    def ravel(self, coords):
        return np.ravel_multi_index(tuple(np.mod(coords, self.n).T), self.shape)


@dataclass
class PeriodicField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.size)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def oscillation(self):
        return float(self.values.max() - self.values.min())


@dataclass(frozen=True)
class BoxDomain:
    """Open box (lower, upper) with ``n`` cells per dimension.

    Unknowns live on the interior nodes lower + i*h, 1 <= i <= n-1; nodes on
    the boundary and beyond carry the exterior data.
    """

    lower: tuple
    upper: tuple
    n: int

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(x) for x in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(x) for x in np.atleast_1d(self.upper)))
        if len(self.lower) != len(self.upper):
            raise ConfigError("box bounds have different dimensions")
        if any(u <= lo for lo, u in zip(self.lower, self.upper)):
            raise ConfigError("box upper bounds must exceed lower bounds")
        if self.n < 2:
            raise ConfigError("box needs n >= 2 cells per dimension")

    @property
    def dim(self):
        return len(self.lower)

    @property
    def h(self):
        return (np.asarray(self.upper) - np.asarray(self.lower)) / self.n

    @property
    def shape(self):
        return (self.n - 1,) * self.dim

    @property
    def size(self):
        return (self.n - 1) ** self.dim

    def coords(self):
        """Extended-grid indices (1..n-1 per axis) of the interior nodes."""
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1) + 1

    def to_points(self, coords):
        return np.asarray(self.lower) + np.asarray(coords) * self.h

    def points(self):
        return self.to_points(self.coords())

    def is_interior(self, coords):
        return np.all((coords >= 1) & (coords <= self.n - 1), axis=1)

    def ravel(self, coords):
        return np.ravel_multi_index(tuple((coords - 1).T), self.shape)

    def distance_to_boundary(self):
        pts = self.points()
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.min(np.minimum(pts - lo, hi - pts), axis=1)


@dataclass
class DomainField:
    domain: BoxDomain
    values: np.ndarray
    phi: object = 0.0
    collar_width: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.domain.size)

    def collar_samples(self, width=None):
        """Exterior grid nodes within ``width`` of the box, with their phi values."""
        width = self.collar_width if width is None else width
        d = self.domain
        extra = int(np.ceil(width / np.min(d.h)))
        axes = [np.arange(-extra, d.n + extra + 1)] * d.dim
        mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        outside = ~d.is_interior(mesh)
        pts = d.to_points(mesh[outside])
        return pts, sample(self.phi, pts)


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: sp.csr_matrix
    offset: np.ndarray
    kind: str
    form: int
    grid: object
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def size(self):
        return self.matrix.shape[0]

    def scaled(self, coeff):
        """Rows multiplied by ``coeff`` (the D_a A of the cell and epsilon problems)."""
        coeff = np.asarray(coeff, dtype=float)
        dmat = sp.diags(coeff)
        return DiscreteOperator((dmat @ self.matrix).tocsr(), coeff * self.offset, self.kind, self.form,
                                self.grid, dict(self.meta, scaled=True))


def _corner_offsets(dim):
    return np.array(list(itertools.product((0, 1), repeat=dim)), dtype=int)


def _interp_stencil(jumps, weights, h):
    """Split each jump into 2^N integer offsets with multilinear weights.

    Returns (offsets (K*2^N, N) int, coefficients (K*2^N,)).
    """
    t = jumps / h
    base = np.floor(t)
    theta = t - base
    # snap targets that sit on a node up to rounding
    snap = np.isclose(theta, 1.0, rtol=0, atol=1e-12)
    base[snap] += 1
    theta[snap] = 0.0
    theta[np.isclose(theta, 0.0, rtol=0, atol=1e-12)] = 0.0
    corners = _corner_offsets(jumps.shape[1])
    offs, coefs = [], []
    for c in corners:
        f = np.prod(np.where(c[None, :] == 1, theta, 1.0 - theta), axis=1)
        offs.append(base.astype(int) + c[None, :])
        coefs.append(weights * f)
    offs = np.concatenate(offs)
    coefs = np.concatenate(coefs)
    keep = coefs > 0
    return offs[keep], coefs[keep]


def _upwind_terms(drift, dim):
    """Offsets/coefficients of the upwind difference for <drift, grad v>, in units of 1/h."""
    offs, coefs = [], []
    for i, c in enumerate(drift):
        if c == 0:
            continue
        e = np.zeros(dim, dtype=int)
        e[i] = 1 if c > 0 else -1
        offs.append(e)
        coefs.append(abs(c))
    return offs, coefs


def _check_rows(matrix, exit_rate, label):
    coo = matrix.tocoo()
    off = coo.row != coo.col
    if off.any() and coo.data[off].min() < 0:
        raise ConsistencyError(f"{label}: negative off-diagonal entry {coo.data[off].min():.3e}")
    diag = np.abs(matrix.diagonal())
    resid = np.asarray(matrix.sum(axis=1)).ravel() + exit_rate
    if np.any(np.abs(resid) > ROW_SUM_RTOL * np.maximum(diag, 1.0)):
        raise ConsistencyError(f"{label}: row sums do not balance (max defect {np.abs(resid).max():.3e})")


def assemble_periodic(grid, rule, beta=None, form=None, compensate="full", tail="lumped"):
    """Circulant operator on the torus for a rule built from dq0.

    ``compensate`` picks the drift: ``"full"`` compensates every jump (the cell
    problem), ``"unit"`` only jumps with |z| <= 1.  ``tail="uniform"`` spreads
    the mass beyond the outer cutoff evenly over the torus (large jumps
    equidistribute modulo 1, but the matrix becomes dense); ``"lumped"`` places
    it at the rule's far tail nodes; ``"drop"`` ignores it.
    """
    if grid.n < 8:
        raise ConfigError("torus grids need n >= 8 points per dimension")
    form = int(form or rule.gamma)
    jumps = beta(rule.nodes) if beta is not None else rule.jumps
    if jumps.shape[1] != grid.dim:
        raise ConfigError(f"jumps live in R^{jumps.shape[1]}, grid is {grid.dim}-dimensional")
    h = grid.h
    if tail not in ("lumped", "uniform", "drop"):
        raise ConfigError(f"unknown tail treatment {tail!r}")
    weights = rule.weights
    if tail == "lumped" and rule.tail_masses.size:
        jumps = np.concatenate([jumps, rule.tail_jumps])
        weights = np.concatenate([weights, rule.tail_masses])
    offs, coefs = _interp_stencil(jumps, weights, h)
    stencil = np.zeros(grid.shape)
    np.add.at(stencil, tuple(np.mod(offs, grid.n).T), coefs)
    drift = np.zeros(grid.dim)
    if form == 2:
        drift = np.asarray(rule.drift_full if compensate == "full" else rule.drift, dtype=float)
        for o, c in zip(*_upwind_terms(drift, grid.dim)):
            stencil[tuple(np.mod(o, grid.n))] += c / h
    if tail == "uniform" and rule.tail_mass > 0:
        stencil += rule.tail_mass / grid.size
    stencil[(0,) * grid.dim] = 0.0
    total = stencil.sum()

    nz = np.argwhere(stencil > 0)
    coords = grid.coords()
    rows = np.arange(grid.size)
    r_all = [rows]
    c_all = [rows]
    d_all = [np.full(grid.size, -total)]
    for o in nz:
        r_all.append(rows)
        c_all.append(grid.ravel(coords + o))
        d_all.append(np.full(grid.size, stencil[tuple(o)]))
    mat = sp.csr_matrix((np.concatenate(d_all), (np.concatenate(r_all), np.concatenate(c_all))),
                        shape=(grid.size, grid.size))
    _check_rows(mat, np.zeros(grid.size), "periodic operator")
    meta = {"stencil": stencil, "drift": drift, "compensate": compensate, "tail": tail,
            "rule_size": rule.size, "total_rate": total}
    return DiscreteOperator(mat, np.zeros(grid.size), "periodic", form, grid, meta)


def assemble_domain(domain, phi, rule, beta=None, form=None, a=None, eps=1.0, compensate="unit",
                    collar_width=None):
    """Operator on the interior nodes of a box with exterior data ``phi``.

    Returns A and b such that ``A u + b`` approximates ``a(x/eps) * L u``
    (``a=None`` gives the bare operator).  Couplings to nodes outside the open
    box are evaluated from ``phi`` and moved into b; the lumped tail beyond the
    outer cutoff likewise reads phi at a representative far point.
    """
    form = int(form or rule.gamma)
    jumps = beta(rule.nodes) if beta is not None else rule.jumps
    if jumps.shape[1] != domain.dim:
        raise ConfigError(f"jumps live in R^{jumps.shape[1]}, domain is {domain.dim}-dimensional")
    required = rule.outer_cutoff * rule.bound_B1
    if collar_width is not None and collar_width < required * (1 - 1e-12):
        raise ConfigError(f"collar width {collar_width} is too small; need at least R*B1 = {required}")
    collar_width = required if collar_width is None else collar_width

    h = domain.h
    if not np.allclose(h, h[0]):
        raise ConfigError("domain grids must have equal spacing in every direction")
    h = float(h[0])
    coords = domain.coords()
    pts = domain.points()
    rows = np.arange(domain.size)
    diag = np.zeros(domain.size)
    offset = np.zeros(domain.size)
    exit_rate = np.zeros(domain.size)
    r_all, c_all, d_all = [], [], []

    offs, coefs = _interp_stencil(jumps, rule.weights, h)
    # merge duplicate offsets before touching the grid
    uniq, inv = np.unique(offs, axis=0, return_inverse=True)
    merged = np.bincount(inv.ravel(), weights=coefs)
    terms = list(zip(uniq, merged))
    diag -= rule.weights.sum()

    drift = np.zeros(domain.dim)
    if form == 2:
        drift = np.asarray(rule.drift if compensate == "unit" else rule.drift_full, dtype=float)
        for o, c in zip(*_upwind_terms(drift, domain.dim)):
            terms.append((o, c / h))
            diag -= c / h

    for o, c in terms:
        if not np.any(o):
            diag += c
            continue
        target = coords + o
        inside = domain.is_interior(target)
        if inside.any():
            r_all.append(rows[inside])
            c_all.append(domain.ravel(target[inside]))
            d_all.append(np.full(np.count_nonzero(inside), c))
        if (~inside).any():
            ext = domain.to_points(target[~inside])
            offset[~inside] += c * sample(phi, ext)
            exit_rate[~inside] += c

    for tj, m in zip(rule.tail_jumps, rule.tail_masses):
        diag -= m
        offset += m * sample(phi, pts + tj[None, :])
        exit_rate += m

    r_all.append(rows)
    c_all.append(rows)
    d_all.append(diag)
    mat = sp.csr_matrix((np.concatenate(d_all), (np.concatenate(r_all), np.concatenate(c_all))),
                        shape=(domain.size, domain.size))
    _check_rows(mat, exit_rate, "domain operator")
    meta = {"drift": drift, "compensate": compensate, "exit_rate": exit_rate, "collar_width": collar_width,
            "rule_size": rule.size, "eps": eps}
    op = DiscreteOperator(mat, offset, "domain", form, domain, meta)
    if a is not None:
        op = op.scaled(sample(a, pts / eps))
    return op


def apply(op, field):
    """A v (+ b for domain operators)."""
    values = field.values if hasattr(field, "values") else np.asarray(field, dtype=float)
    if values.shape != (op.size,):
        raise ValueError(f"field has shape {values.shape}, operator expects ({op.size},)")
    return op.matrix @ values + op.offset


def discrete_maximum_principle(op):
    """Off-diagonal sign and row-sum report for an assembled operator."""
    coo = op.matrix.tocoo()
    off = coo.row != coo.col
    row_sums = np.asarray(op.matrix.sum(axis=1)).ravel()
    min_off = float(coo.data[off].min()) if off.any() else 0.0
    scale = np.maximum(np.abs(op.matrix.diagonal()), 1.0)
    return {
        "min_offdiagonal": min_off,
        "max_row_sum": float(np.max(row_sums / scale)),
        "passed": bool(min_off >= 0 and np.all(row_sums <= ROW_SUM_RTOL * scale)),
    }


def write_triplets(op, path):
    coo = op.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write("row col value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
