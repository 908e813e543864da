"""Positive-weight quadrature rules for singular Levy densities.

A rule covers the annulus ``rho <= |z| <= R`` with a geometric radial
partition (and sign or angular sectors), one midpoint node per cell.  The
inner ball is dropped; its contribution is reported through
``inner_error_bound``.  Mass beyond ``R`` is kept per direction as a
lumped tail so that domain operators can send it to the exterior data.

Drift convention: ``drift`` is the coefficient vector multiplying ``grad v``
in the discrete operator, i.e. ``-sum_{|z_j|<=1} w_j beta(z_j)``.  The cell
problem compensates every jump, which is ``drift_full`` (tail included).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyRuleError
from .measures import _directions, log_radial_quad, radial_integral

DEFAULT_SECTORS = 64


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    jumps: np.ndarray
    gamma: int
    inner_cutoff: float
    outer_cutoff: float
    drift: np.ndarray
    drift_full: np.ndarray
    inner_error_bound: float = 0.0
    tail_error_bound: float = 0.0
    tail_jumps: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))
    tail_masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    cells_per_decade: int = 0
    angular_sectors: int = 0
    bound_B1: float = 1.0

    @property
    def size(self):
        return self.weights.size

    @property
    def tail_mass(self):
        return float(self.tail_masses.sum())

    @property
    def total_mass(self):
        return float(self.weights.sum()) + self.tail_mass

    @property
    def max_jump(self):
        """Largest |beta(z)| reached by nodes or lumped tail nodes."""
        parts = [np.linalg.norm(self.jumps, axis=1)]
        if self.tail_jumps.size:
            parts.append(np.linalg.norm(self.tail_jumps, axis=1))
        return float(max(p.max() if p.size else 0.0 for p in parts))

    def to_csv(self, path):
        m = self.nodes.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"z{i + 1}" for i in range(m)] + ["weight"])
            for z, wt in zip(self.nodes, self.weights):
                w.writerow([repr(float(x)) for x in z] + [repr(float(wt))])


def _radial_edges(rho, R, cells_per_decade):
    ncell = max(1, math.ceil(cells_per_decade * math.log10(R / rho) - 1e-9))
    return rho * (R / rho) ** (np.arange(ncell + 1) / ncell)


def _tail_lumps(q, beta, R, sectors):
    """Per-direction mass and first moment of q beyond R, placed at 2R along that direction."""
    dirs = _directions(q.dim, sectors)
    dtheta = 2 * np.pi / sectors if q.dim == 2 else 1.0
    masses, moments = [], []
    for u in dirs:
        g = lambda r, u=u: float(q((r * u)[None, :])[0])  # noqa: E731
        masses.append(log_radial_quad(g, R, np.inf, q.dim - 1) * dtheta)
        moments.append(log_radial_quad(g, R, np.inf, q.dim) * dtheta)
    masses = np.asarray(masses)
    moments = np.asarray(moments)
    unit_jumps = beta(dirs)
    keep = masses > 0
    tail_jumps = 2 * R * unit_jumps[keep]
    tail_first_moment = (moments[:, None] * unit_jumps).sum(axis=0)
    return tail_jumps, masses[keep], tail_first_moment


def build_rule(q, beta, rho, R, cells_per_decade=32, angular_sectors=DEFAULT_SECTORS, gamma=None,
               tail=True):
    """Midpoint rule for dq on rho <= |z| <= R with nonnegative weights.

    ``gamma`` defaults to the density's compensator order.  With
    ``tail=False`` the mass beyond R is ignored (no lumped tail nodes).
    """
    if not 0 < rho < 1 < R:
        raise ConfigError(f"cutoffs must satisfy 0 < rho < 1 < R, got rho={rho}, R={R}")
    if cells_per_decade < 4:
        raise ConfigError("cells_per_decade must be >= 4")
    if beta.source_dim != q.dim:
        raise ConfigError(f"jump map expects dimension {beta.source_dim}, density has {q.dim}")
    gamma = int(gamma or getattr(q, "gamma", 2))
    edges = _radial_edges(rho, R, cells_per_decade)
    r_mid = np.sqrt(edges[:-1] * edges[1:])
    if q.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
        shell = np.diff(edges)
        sectors = 0
    elif q.dim == 2:
        sectors = int(angular_sectors)
        dirs = _directions(2, sectors)
        shell = 0.5 * np.diff(edges ** 2) * (2 * np.pi / sectors)
    else:
        raise ConfigError("quadrature rules are implemented for M <= 2")

    nodes = (r_mid[None, :, None] * dirs[:, None, :]).reshape(-1, q.dim)
    vol = np.tile(shell, dirs.shape[0])
    weights = q(nodes) * vol
    keep = weights > 0
    if not np.any(keep):
        raise EmptyRuleError(f"density {q.name!r} has no mass on {rho} <= |z| <= {R}")
    nodes, weights = nodes[keep], weights[keep]
    jumps = beta(nodes)

    if tail:
        tail_jumps, tail_masses, tail_moment = _tail_lumps(q, beta, R, angular_sectors)
    else:
        tail_jumps, tail_masses, tail_moment = np.empty((0, beta.target_dim)), np.empty(0), 0.0

    if gamma == 2:
        small = np.linalg.norm(nodes, axis=1) <= 1.0
        drift = -(weights[small, None] * jumps[small]).sum(axis=0)
        drift_full = -(weights[:, None] * jumps).sum(axis=0) - tail_moment
    else:
        drift = np.zeros(beta.target_dim)
        drift_full = np.zeros(beta.target_dim)

    inner = radial_integral(q, gamma, 0.0, rho)
    tail_bound = radial_integral(q, gamma - 1, R, np.inf)
    return QuadratureRule(
        nodes=nodes, weights=weights, jumps=jumps, gamma=gamma,
        inner_cutoff=float(rho), outer_cutoff=float(R),
        drift=drift, drift_full=drift_full,
        inner_error_bound=inner, tail_error_bound=tail_bound,
        tail_jumps=tail_jumps, tail_masses=tail_masses,
        cells_per_decade=int(cells_per_decade), angular_sectors=sectors,
        bound_B1=beta.bound_B1,
    )


def explicit_rule(nodes, weights, beta, gamma=1):
    """Rule from user-supplied nodes and weights (for constructed test measures).

    No inner or tail truncation is involved, so both error bounds are zero.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(len(weights), -1)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ConfigError("explicit rule weights must be nonnegative")
    if nodes.shape[1] != beta.source_dim:
        raise ConfigError("explicit rule nodes do not match the jump map's source dimension")
    keep = weights > 0
    nodes, weights = nodes[keep], weights[keep]
    if weights.size == 0:
        raise EmptyRuleError("explicit rule has no positive weights")
    jumps = beta(nodes)
    norms = np.linalg.norm(nodes, axis=1)
    if gamma == 2:
        small = norms <= 1.0
        drift = -(weights[small, None] * jumps[small]).sum(axis=0)
        drift_full = -(weights[:, None] * jumps).sum(axis=0)
    else:
        drift = drift_full = np.zeros(beta.target_dim)
    return QuadratureRule(
        nodes=nodes, weights=weights, jumps=jumps, gamma=int(gamma),
        inner_cutoff=float(norms.min()), outer_cutoff=float(norms.max()),
        drift=drift, drift_full=drift_full,
        tail_jumps=np.empty((0, beta.target_dim)), tail_masses=np.empty(0),
        bound_B1=beta.bound_B1,
    )


def refine(q, beta, rho, R, cells_per_decade=32, steps=4, angular_sectors=DEFAULT_SECTORS, gamma=None):
    """Dyadic refinement rho/2^k, R*2^k; error budgets must shrink monotonically."""
    if not 0 < q.alpha < 2:
        raise ConfigError(f"refinement needs alpha in (0, 2), got {q.alpha}")
    rules = [build_rule(q, beta, rho / 2 ** k, R * 2 ** k, cells_per_decade, angular_sectors, gamma)
             for k in range(steps + 1)]
    inner = [r.inner_error_bound for r in rules]
    outer = [r.tail_error_bound for r in rules]
    if any(b >= a for a, b in zip(inner, inner[1:]) if a > 0) or \
            any(b >= a for a, b in zip(outer, outer[1:]) if a > 0):
        raise ConfigError(f"error budgets do not decrease under refinement: inner={inner}, tail={outer}")
    return rules
