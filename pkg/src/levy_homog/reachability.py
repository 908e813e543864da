"""Jump-graph reachability on the torus and a strong maximum principle spot check.

Edges ``y -> y'`` exist when some positive-weight node ``z`` has
``dist(y + beta(z) mod 1, y') < eps_ball`` (open ball).  The graph is
translation invariant, so it is stored as a set of integer offsets with their
witnesses and expanded to an adjacency matrix on demand.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import ConfigError


@dataclass(frozen=True)
class Witness:
    structure: int
    node: int
    jump: tuple


@dataclass
class JumpGraph:
    grid: object
    eps_ball: float
    offsets: np.ndarray
    witnesses: list
    adjacency: sp.csr_matrix
    caveats: list

    @property
    def edge_count(self):
        return int(self.adjacency.nnz)

    def verify_witnesses(self):
        """Every offset's witness jump really lands within eps_ball of the target."""
        h = self.grid.h
        for off, w in zip(self.offsets, self.witnesses):
            delta = np.asarray(w.jump) - off * h
            delta -= np.round(delta)
            if not np.linalg.norm(delta) < self.eps_ball:
                return False
        return True

    def to_csv(self, path, header_comment=None):
        coo = self.adjacency.tocoo()
        c = self.grid.coords()
        label = {}
        for off, w in zip(self.offsets, self.witnesses):
            label[tuple(np.mod(off, self.grid.n))] = w
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["source", "target", "structure", "node"])
            for s, t in sorted(zip(coo.row.tolist(), coo.col.tolist())):
                w = label[tuple(np.mod(c[t] - c[s], self.grid.n))]
                wr.writerow([s, t, w.structure, w.node])


def _candidate_offsets(jump, h, eps_ball, dim):
    r = int(np.ceil(eps_ball / h))
    base = np.round(jump / h).astype(int)
    out = []
    for d in itertools.product(range(-r, r + 1), repeat=dim):
        k = base + np.array(d)
        delta = jump - k * h
        delta -= np.round(delta)
        if np.linalg.norm(delta) < eps_ball:
            out.append(k)
    return out


def build_graph(grid, rules, eps_ball, betas=None, include_tail=True):
    """Union graph over one or several quadrature rules (one per jump structure).

    ``betas`` is only consulted for reporting: irrational directions get a
    resolution caveat.
    """
    if eps_ball < grid.h * (1 - 1e-12):
        raise ConfigError(f"eps_ball={eps_ball} is below the grid spacing {grid.h}")
    if not isinstance(rules, (list, tuple)):
        rules = [rules]
    if betas is not None and not isinstance(betas, (list, tuple)):
        betas = [betas]
    seen = {}
    caveats = []
    for s, rule in enumerate(rules):
        jumps = rule.jumps
        if include_tail and rule.tail_masses.size:
            jumps = np.concatenate([jumps, rule.tail_jumps])
        if jumps.shape[1] != grid.dim:
            raise ConfigError(f"structure {s} jumps live in R^{jumps.shape[1]}, grid is {grid.dim}-dimensional")
        for j, jump in enumerate(jumps):
            for k in _candidate_offsets(jump, grid.h, eps_ball, grid.dim):
                key = tuple(np.mod(k, grid.n))
                if any(key) and key not in seen:
                    seen[key] = (k, Witness(s, j, tuple(float(x) for x in jump)))
        if betas is not None and "irrational" in (betas[s].name or ""):
            caveats.append(f"structure {s}: irrational jump direction resolved only at grid spacing {grid.h:g}")
    keys = sorted(seen)
    offsets = np.array([seen[k][0] for k in keys], dtype=int).reshape(-1, grid.dim)
    witnesses = [seen[k][1] for k in keys]
    rows, cols = [], []
    coords = grid.coords()
    src = np.arange(grid.size)
    for k in keys:
        rows.append(src)
        cols.append(grid.ravel(coords + np.array(k)))
    if rows:
        r, c = np.concatenate(rows), np.concatenate(cols)
    else:
        r = c = np.empty(0, dtype=int)
    adj = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(grid.size, grid.size))
    return JumpGraph(grid, float(eps_ball), offsets, witnesses, adj, caveats)


def check_condition_B(graph):
    """Strong connectivity; on failure a pair (y, y') with no path from y to y' and y's reachable set."""
    ncomp, labels = csgraph.connected_components(graph.adjacency, directed=True, connection="strong")
    report = {
        "passed": bool(ncomp == 1),
        "components": int(ncomp),
        "component_sizes": np.bincount(labels).tolist(),
        "edges": graph.edge_count,
        "eps_ball": graph.eps_ball,
        "caveats": list(graph.caveats),
        "witness": None,
    }
    if ncomp == 1:
        return True, report
    for comp in range(ncomp):
        y = int(np.flatnonzero(labels == comp)[0])
        reach = csgraph.breadth_first_order(graph.adjacency, y, directed=True, return_predecessors=False)
        if reach.size < graph.grid.size:
            missing = np.setdiff1d(np.arange(graph.grid.size), reach)
            report["witness"] = {
                "y": y, "y_prime": int(missing[0]),
                "y_coords": (graph.grid.coords()[y] * graph.grid.h).tolist(),
                "y_prime_coords": (graph.grid.coords()[missing[0]] * graph.grid.h).tolist(),
                "reachable": sorted(int(x) for x in reach),
            }
            break
    return False, report


def smp_check(fld, op, tol=1e-10, h=None):
    """Spot check of the strong maximum principle on a discrete subsolution.

    The premise is ``-(A v)(y) + h(y) <= tol`` with ``h >= -tol`` (``h`` defaults
    to 0).  If it holds, the field must be constant up to ``tol (1 + |v|)``;
    violations list maximum points that have a strictly smaller neighbour in
    the jump graph.  If the premise fails the result is inconclusive.
    """
    v = fld.values if hasattr(fld, "values") else np.asarray(fld, dtype=float)
    Av = op.matrix @ v
    hv = np.zeros_like(v) if h is None else np.asarray(h, dtype=float)
    scale = 1.0 + np.abs(v).max()
    # rounding in A v grows with the row magnitude
    row_tol = tol * (1.0 + np.abs(op.matrix.diagonal()) * scale)
    premise_bad = np.flatnonzero((-Av + hv > row_tol) | (hv < -tol))
    osc = float(v.max() - v.min())
    report = {"status": None, "oscillation": osc, "premise_failures": premise_bad.tolist()[:50],
              "violations": []}
    if premise_bad.size:
        report["status"] = "inconclusive"
        report["argmax"] = int(np.argmax(v))
        return report
    if osc <= tol * scale:
        report["status"] = "pass"
        return report
    vmax = v.max()
    at_max = np.flatnonzero(v >= vmax - tol * scale)
    coo = op.matrix.tocsr()
    for i in at_max:
        row = coo.getrow(i)
        nbrs = row.indices[(row.data > 0) & (row.indices != i)]
        lower = nbrs[v[nbrs] < vmax - tol * scale]
        if lower.size:
            report["violations"].append({"point": int(i), "lower_neighbour": int(lower[0])})
    report["status"] = "fail"
    return report


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
