"""Effective operator Ibar(I) = -d_I tabulated from cell problems.

For each I the cell source is ``a(y) I + f(y)``.  The cell problem is linear
in (v, d, I), so on linear problems the table is exactly affine; the fit
``Ibar(I) = -d0 - cbar I`` is what the direct effective solver uses.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .cell_solver import CellProblem, MaxCellProblem, ergodic_constant, ergodic_constant_max, _values_on
from .errors import ConfigError, ErgodicityFailure

AFFINE_RTOL = 1e-6


@dataclass
class EffectiveOperator:
    I: np.ndarray
    Ibar: np.ndarray
    intercept: float
    slope: float
    fit_residual: float
    theta: float
    oscillations: np.ndarray = field(default_factory=lambda: np.empty(0))
    a0: float | None = None

    @property
    def cbar(self):
        return -self.slope

    @property
    def d0(self):
        return -self.intercept

    @property
    def spread(self):
        return float(np.ptp(self.Ibar))

    @property
    def is_affine(self):
        return self.fit_residual <= AFFINE_RTOL * max(self.spread, 1e-300)

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["I", "Ibar"])
            for i, v in zip(self.I, self.Ibar):
                w.writerow([repr(float(i)), repr(float(v))])

    def summary(self):
        theta, passed = check_subellipticity(self, self.a0) if self.a0 else (self.theta, None)
        return {
            "intercept": self.intercept, "slope": self.slope, "cbar": self.cbar, "d0": self.d0,
            "fit_residual": self.fit_residual, "spread": self.spread, "affine": bool(self.is_affine),
            "theta": theta, "subelliptic": passed, "a0": self.a0,
            "I_range": [float(self.I.min()), float(self.I.max())],
        }

    def to_json(self, path, extra=None):
        with open(path, "w") as fh:
            json.dump({**self.summary(), **(extra or {})}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _affine_fit(I, Ibar):
    X = np.stack([np.ones_like(I), I], axis=1)
    coef, *_ = np.linalg.lstsq(X, Ibar, rcond=None)
    resid = float(np.abs(X @ coef - Ibar).max())
    return float(coef[0]), float(coef[1]), resid


def _theta(I, Ibar):
    return float(np.min(-np.diff(Ibar) / np.diff(I)))


def from_samples(I, Ibar, a0=None, oscillations=None):
    I = np.asarray(I, dtype=float)
    Ibar = np.asarray(Ibar, dtype=float)
    order = np.argsort(I)
    I, Ibar = I[order], Ibar[order]
    if I.size < 2 or np.any(np.diff(I) <= 0):
        raise ConfigError("effective operator needs at least two distinct I samples")
    c0, c1, res = _affine_fit(I, Ibar)
    osc = np.empty(0) if oscillations is None else np.asarray(oscillations)[order]
    return EffectiveOperator(I, Ibar, c0, c1, res, _theta(I, Ibar), osc, a0)


def tabulate(a, f, cell_op, I_grid, lam_seq=None, osc_tol=1e-4, a0=None):
    """Run one cell problem per I (same discount sequence throughout, so the table stays affine)."""
    I_grid = np.asarray(sorted(float(x) for x in I_grid))
    if I_grid.size < 5:
        raise ConfigError("I_grid needs at least 5 points")
    problem = CellProblem(cell_op, a)
    a_vals = problem.a
    f_vals = _values_on(cell_op.grid, f)
    a0 = float(a_vals.min()) if a0 is None else a0
    Ibar, osc = [], []
    for I in I_grid:
        try:
            res = ergodic_constant(a_vals, a_vals * I + f_vals, cell_op, lam_seq, osc_tol=0.0, problem=problem,
                                   warn=False)
        except ErgodicityFailure as exc:
            exc.report["I"] = float(I)
            raise ErgodicityFailure(f"cell problem at I={I:g}: {exc}", exc.report) from exc
        if res.oscillation > osc_tol:
            raise ErgodicityFailure(
                f"cell problem at I={I:g} ended with oscillation {res.oscillation:.3e} > {osc_tol:.3e}",
                {"I": float(I), "lam_trace": res.lam_trace})
        Ibar.append(-res.d)
        osc.append(res.oscillation)
    return from_samples(I_grid, Ibar, a0, osc)


def eval_effective(op, I):
    """Piecewise-linear inside the table, affine fit outside; returns (value, extrapolated flag)."""
    I_arr = np.asarray(I, dtype=float)
    inside = (I_arr >= op.I[0]) & (I_arr <= op.I[-1])
    val = np.where(inside, np.interp(I_arr, op.I, op.Ibar), op.intercept + op.slope * I_arr)
    flag = ~inside
    if np.ndim(I) == 0:
        return float(val), bool(flag)
    return val, flag


def check_subellipticity(op, a0):
    """Realised Theta and whether every consecutive slope is <= -a0/2."""
    theta = _theta(op.I, op.Ibar)
    return theta, bool(theta >= a0 / 2)


@dataclass
class EffectiveOperator2D:
    """Ibar(I', I'') on a tensor grid, bilinear inside, clamped-affine extension outside."""

    I1: np.ndarray
    I2: np.ndarray
    Ibar: np.ndarray
    oscillations: np.ndarray

    def __call__(self, x1, x2):
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        i = np.clip(np.searchsorted(self.I1, x1) - 1, 0, self.I1.size - 2)
        j = np.clip(np.searchsorted(self.I2, x2) - 1, 0, self.I2.size - 2)
        t = (x1 - self.I1[i]) / (self.I1[i + 1] - self.I1[i])
        s = (x2 - self.I2[j]) / (self.I2[j + 1] - self.I2[j])
        T = self.Ibar
        return ((1 - t) * (1 - s) * T[i, j] + t * (1 - s) * T[i + 1, j]
                + (1 - t) * s * T[i, j + 1] + t * s * T[i + 1, j + 1])

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["I1", "I2", "Ibar"])
            for a_, i1 in enumerate(self.I1):
                for b_, i2 in enumerate(self.I2):
                    w.writerow([repr(float(i1)), repr(float(i2)), repr(float(self.Ibar[a_, b_]))])


def tabulate_max(a, f, ops, I1_grid, I2_grid, lam_seq=None, osc_tol=1e-3):
    """Two-operator max-form table Ibar(I', I'') = -d_{I', I''}."""
    if len(ops) != 2:
        raise ConfigError("tabulate_max needs exactly two operators")
    I1 = np.asarray(sorted(I1_grid), dtype=float)
    I2 = np.asarray(sorted(I2_grid), dtype=float)
    if I1.size < 2 or I2.size < 2:
        raise ConfigError("each I axis needs at least two points")
    problem = MaxCellProblem(ops, a)
    f_vals = _values_on(problem.grid, f)
    table = np.empty((I1.size, I2.size))
    osc = np.empty_like(table)
    for p, x1 in enumerate(I1):
        for r, x2 in enumerate(I2):
            shifts = [problem.a * x1, problem.a * x2]
            res = ergodic_constant_max(problem.a, f_vals, ops, lam_seq, osc_tol=osc_tol, shifts=shifts,
                                       problem=problem)
            table[p, r] = -res.d
            osc[p, r] = res.oscillation
    return EffectiveOperator2D(I1, I2, table, osc)
