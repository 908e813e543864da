"""Levy densities, jump maps and the small-scale rescaling that extracts q0.

A density ``q`` on R^M satisfies condition (A) with exponent ``alpha`` when
``eps**(M+alpha) * q(eps*z)`` stays below ``C1 |z|**-(M+alpha)`` and converges
pointwise as ``eps -> 0``.  The limit ``q0`` is homogeneous of degree
``-(M+alpha)`` on a positive cone ``S0`` and is the jump density seen by the
cell problem.

All densities are closed-form evaluators over point arrays of shape ``(K, M)``
(one-dimensional densities also accept shape ``(K,)``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import ConditionAFailure, ConfigError, DomainError, EstimationError
from .expr import parse, var_names_for

DEFAULT_EPS_SEQ = tuple(2.0 ** -k for k in range(1, 13))
S0_THRESHOLD = 1e-8
S0_SLOPE_TOL = 0.05


def as_points(z, dim):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1, 1)
    elif z.ndim == 1:
        z = z.reshape(-1, 1) if dim == 1 else z.reshape(1, dim)
    if z.shape[1] != dim:
        raise ValueError(f"points have dimension {z.shape[1]}, expected {dim}")
    return z


@dataclass(frozen=True)
class Support:
    """Support descriptor: ``full``, ``orthant`` (all z_i > 0), ``half_line``
    (M=1, sign * z > 0) or ``predicate`` (arbitrary boolean evaluator)."""

    kind: str = "full"
    sign: int = 1
    predicate: Optional[Callable] = None

    def contains(self, z):
        z = np.atleast_2d(z)
        if self.kind == "full":
            return np.ones(z.shape[0], dtype=bool)
        if self.kind == "orthant":
            return np.all(z > 0, axis=1)
        if self.kind == "half_line":
            return self.sign * z[:, 0] > 0
        if self.kind == "predicate":
            return np.asarray(self.predicate(z), dtype=bool)
        raise ConfigError(f"unknown support kind {self.kind!r}")

    @classmethod
    def from_spec(cls, spec):
        if spec is None or spec in ("full", "R", "all"):
            return cls("full")
        if spec in ("orthant", "positive_orthant"):
            return cls("orthant")
        if spec in ("positive", "half_line+", "z>0"):
            return cls("half_line", 1)
        if spec in ("negative", "half_line-", "z<0"):
            return cls("half_line", -1)
        raise ConfigError(f"unknown support descriptor {spec!r}")


@dataclass(frozen=True)
class JumpMap:
    """Positively 1-homogeneous map beta: R^M -> R^N with |beta(z)| <= B1 |z|."""

    source_dim: int
    target_dim: int
    fn: Callable = field(repr=False)
    bound_B1: float = 1.0
    name: str = "beta"

    def __call__(self, z):
        z = as_points(z, self.source_dim)
        out = np.asarray(self.fn(z), dtype=float)
        return out.reshape(z.shape[0], self.target_dim)

    @classmethod
    def linear(cls, matrix, name="linear"):
        mat = np.atleast_2d(np.asarray(matrix, dtype=float))
        n, m = mat.shape
        b1 = float(np.linalg.norm(mat, 2))
        return cls(m, n, lambda z: z @ mat.T, b1, name)

    @classmethod
    def identity(cls, dim):
        return cls.linear(np.eye(dim), name="identity")

    def check(self, trials=200, seed=0, rtol=1e-12):
        """Sample positive homogeneity and linear growth; returns (ok, worst_rel_err)."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((trials, self.source_dim))
        c = np.exp(rng.uniform(-5, 5, trials))[:, None]
        lhs = self(c * z)
        rhs = c * self(z)
        scale = np.maximum(np.linalg.norm(rhs, axis=1), 1e-300)
        err = float(np.max(np.linalg.norm(lhs - rhs, axis=1) / scale))
        growth = np.linalg.norm(self(z), axis=1) <= self.bound_B1 * np.linalg.norm(z, axis=1) * (1 + 1e-12)
        return bool(err <= rtol and np.all(growth)), err


@dataclass(frozen=True)
class LevyDensity:
    dim: int
    alpha: float
    gamma: int
    fn: Callable = field(repr=False)
    support: Support = Support()
    name: str = "q"

    def __call__(self, z):
        z = as_points(z, self.dim)
        vals = np.asarray(self.fn(z), dtype=float).reshape(z.shape[0])
        return np.where(self.support.contains(z), vals, 0.0)

    @classmethod
    def from_expression(cls, text, dim, alpha, gamma, support=None, name="expr"):
        e = parse(text, var_names_for("z", dim))
        return cls(dim, float(alpha), int(gamma), lambda z: e(*z.T), Support.from_spec(support), name)


@dataclass(frozen=True)
class RescaledDensity:
    """Limit density q0, homogeneous of degree -(M+alpha) on the cone S0."""

    dim: int
    alpha: float
    fn: Callable = field(repr=False)
    support: Support = Support()
    gamma: int = 2
    name: str = "q0"

    def __call__(self, z):
        z = as_points(z, self.dim)
        vals = np.asarray(self.fn(z), dtype=float).reshape(z.shape[0])
        return np.where(self.support.contains(z), vals, 0.0)


def _norm(z):
    return np.linalg.norm(z, axis=1)


def power_law(dim, alpha, support=None, angular=None):
    """|z|^-(dim+alpha) * angular(z) restricted to ``support``."""
    support = support or Support()
    p = dim + alpha
    if angular is None:
        fn = lambda z: _norm(z) ** -p  # noqa: E731
    else:
        fn = lambda z: _norm(z) ** -p * angular(z)  # noqa: E731
    return fn, support


def symmetric_stable(dim, alpha, gamma=None):
    """Symmetric alpha-stable density |z|^-(dim+alpha) on all of R^dim."""
    gamma = gamma or (2 if alpha > 1 else 1)
    fn, sup = power_law(dim, alpha)
    q = LevyDensity(dim, alpha, gamma, fn, sup, "symmetric_stable")
    q0 = RescaledDensity(dim, alpha, fn, sup, gamma, "symmetric_stable_q0")
    return q, q0


def _form_for(alpha):
    if 1 < alpha < 2:
        return 2
    if 0 < alpha < 1:
        return 1
    raise ConfigError(f"alpha={alpha} must lie in (0,1) or (1,2)")


def builtin_example(example_id, alpha=None, **params):
    """Return ``(q, beta, q0)`` for the four model densities.

    ``Ex1``: one-sided power law on the open orthant, beta = identity.
    ``Ex2``: two-exponent density on R (needs ``alpha1 < alpha2`` in (1,2)).
    ``Ex3``: symmetric power law on R pushed along the line (z, slope*z) in R^2.
    ``Ex4``: tempered power law exp(-decay |z|) |z|^-(M+alpha).
    """
    key = str(example_id).lower().replace("example", "ex")
    if key in ("ex1", "1"):
        dim = int(params.get("dim", 1))
        alpha = float(alpha)
        gamma = _form_for(alpha)
        fn, sup = power_law(dim, alpha, Support("orthant") if dim > 1 else Support("half_line", 1))
        q = LevyDensity(dim, alpha, gamma, fn, sup, "example1")
        q0 = RescaledDensity(dim, alpha, fn, sup, gamma, "example1_q0")
        return q, JumpMap.identity(dim), q0
    if key in ("ex2", "2"):
        a1 = float(params.get("alpha1", 1.2))
        a2 = float(params.get("alpha2", alpha if alpha is not None else 1.8))
        if not 1 < a1 < a2 < 2:
            raise ConfigError(f"Example 2 requires 1 < alpha1 < alpha2 < 2, got alpha1={a1}, alpha2={a2}")
        if alpha is not None and abs(float(alpha) - a2) > 0:
            raise ConfigError(f"Example 2 rescales with alpha = alpha2 = {a2}, got alpha={alpha}")

        def q_fn(z):
            x = z[:, 0]
            r = np.abs(x)
            inner = (x > -1) & (x < 0)
            with np.errstate(divide="ignore"):
                return np.where(inner, r ** -(1 + a2), r ** -(1 + a1))

        q = LevyDensity(1, a2, 2, q_fn, Support("full"), "example2")
        fn0, sup0 = power_law(1, a2, Support("half_line", -1))
        q0 = RescaledDensity(1, a2, fn0, sup0, 2, "example2_q0")
        return q, JumpMap.identity(1), q0
    if key in ("ex3", "3"):
        alpha = float(alpha)
        gamma = _form_for(alpha)
        slope = float(params.get("slope", math.sqrt(2.0)))
        if slope <= 0:
            raise ConfigError(f"Example 3 requires a positive (irrational) slope, got {slope}")
        fn, sup = power_law(1, alpha)
        q = LevyDensity(1, alpha, gamma, fn, sup, "example3")
        q0 = RescaledDensity(1, alpha, fn, sup, gamma, "example3_q0")
        return q, JumpMap.linear([[1.0], [slope]], name="irrational_line"), q0
    if key in ("ex4", "4"):
        dim = int(params.get("dim", 1))
        alpha = float(alpha)
        gamma = _form_for(alpha)
        decay = float(params.get("decay", 1.0))
        if decay <= 0:
            raise ConfigError(f"Example 4 requires decay > 0, got {decay}")
        p = dim + alpha
        q = LevyDensity(dim, alpha, gamma, lambda z: np.exp(-decay * _norm(z)) * _norm(z) ** -p,
                        Support("full"), "example4")
        fn0, sup0 = power_law(dim, alpha)
        q0 = RescaledDensity(dim, alpha, fn0, sup0, gamma, "example4_q0")
        return q, JumpMap.identity(dim), q0
    raise ConfigError(f"unknown builtin example {example_id!r}")


def example5_structures(alpha=1.5):
    """The two jump structures of the three-dimensional max-type problem:
    a vertical line (M=1) and a horizontal plane (M=2), both symmetric stable."""
    if not 0 < alpha < 2 or alpha == 1:
        raise ConfigError(f"alpha={alpha} must lie in (0,1) or (1,2)")
    q1, q01 = symmetric_stable(1, alpha)
    q2, q02 = symmetric_stable(2, alpha)
    beta1 = JumpMap.linear([[0.0], [0.0], [1.0]], name="vertical_line")
    beta2 = JumpMap.linear([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], name="horizontal_plane")
    return [(q1, beta1, q01), (q2, beta2, q02)]


def rescale_pointwise(q, alpha, eps, z):
    """eps^(M+alpha) * q(eps*z); vectorised over points."""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    pts = as_points(z, q.dim)
    if np.any(_norm(pts) == 0):
        raise DomainError("rescaling is singular at z = 0")
    out = eps ** (q.dim + alpha) * q(eps * pts)
    return out if np.ndim(z) > (0 if q.dim == 1 else 1) else float(out[0])


def _tail_log_slopes(values, eps):
    """Least-squares slope of log(value) against log(eps) over the given rows."""
    x = np.log(eps)
    x = x - x.mean()
    with np.errstate(divide="ignore"):
        y = np.log(values)
    y = y - y.mean(axis=0)
    return (x @ y) / (x @ x)


def _classify(values, eps, norms, dim, alpha, threshold=S0_THRESHOLD, slope_tol=S0_SLOPE_TOL):
    """S0 membership from the last rows of a (len(eps), K) table of rescaled values.

    A sample is in S0 when its final value is above ``threshold * |z|^-(M+alpha)``
    and the values are not still decaying like a positive power of eps.
    """
    final = values[-1]
    positive = np.all(values > 0, axis=0)
    mask = positive & (final > threshold * norms ** -(dim + alpha))
    if np.any(mask):
        slopes = np.full(values.shape[1], np.inf)
        slopes[mask] = _tail_log_slopes(values[:, mask], eps)
        mask &= slopes <= slope_tol
    return mask


def extract_q0(q, alpha, samples, eps_seq=DEFAULT_EPS_SEQ, threshold=S0_THRESHOLD, slope_tol=S0_SLOPE_TOL):
    """Rescale ``q`` along ``eps_seq`` and return ``(RescaledDensity, report)``.

    The report carries the smallest constant C1 dominating the rescaled values
    on the samples, the consecutive convergence deltas and the S0 mask.  The
    returned density is the final-eps snapshot restricted to the detected cone.
    Raises :class:`ConditionAFailure` when C1 keeps growing as eps decreases.
    """
    eps = np.asarray(sorted(eps_seq, reverse=True), dtype=float)
    if eps.size < 4:
        raise ConfigError("eps_seq needs at least 4 entries")
    if np.any(eps <= 0):
        raise ConfigError("eps_seq entries must be positive")
    pts = as_points(samples, q.dim)
    norms = _norm(pts)
    if np.any(norms == 0):
        raise DomainError("samples must avoid z = 0")
    M = q.dim
    values = np.stack([e ** (M + alpha) * q(e * pts) for e in eps])
    c1_trace = np.max(values * norms ** (M + alpha), axis=1)
    deltas = np.abs(np.diff(values, axis=0))
    tail = slice(-3, None)

    report = {
        "alpha": float(alpha),
        "eps_seq": eps.tolist(),
        "C1": float(np.max(c1_trace)),
        "C1_trace": c1_trace.tolist(),
        "deltas": deltas,
        "samples": pts,
    }
    if c1_trace[-1] > 0:
        growth = _tail_log_slopes(c1_trace[tail, None], eps[tail])[0]
        if growth < -slope_tol and c1_trace[-1] > c1_trace[-2] > c1_trace[-3]:
            report["C1_log_slope"] = float(growth)
            raise ConditionAFailure(
                f"bound constant C1 grows like eps^{growth:.3g} as eps -> 0; alpha={alpha} is too small",
                report,
            )
    mask = _classify(values[tail], eps[tail], norms, M, alpha, threshold, slope_tol)
    report["support_mask"] = mask
    report["degenerate"] = not bool(np.any(mask))
    report["q0_samples"] = np.where(mask, values[-1], 0.0)

    eps_tail = eps[tail]
    eps_final = float(eps[-1])

    def in_cone(z):
        z = np.atleast_2d(z)
        vals = np.stack([e ** (M + alpha) * q(e * z) for e in eps_tail])
        return _classify(vals, eps_tail, _norm(z), M, alpha, threshold, slope_tol)

    def snapshot(z):
        return eps_final ** (M + alpha) * q(eps_final * z)

    gamma = getattr(q, "gamma", 2)
    q0 = RescaledDensity(M, float(alpha), snapshot, Support("predicate", predicate=in_cone), gamma,
                         f"{q.name}_rescaled")
    return q0, report


def _directions(dim, count, seed=0):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, dim))
    return d / _norm(d)[:, None]


def estimate_alpha(q, radii, directions=64, seed=0):
    """Singularity exponent from the log-log slope of the radial average of ``q``.

    Returns ``-slope - M``.  Warns when the estimate falls outside (0, 2),
    which is what a bounded density produces.
    """
    r = np.asarray(radii, dtype=float)
    if r.size < 4:
        raise ConfigError("estimate_alpha needs at least 4 radii")
    if np.any((r <= 0) | (r >= 1)):
        raise ConfigError("radii must lie in (0, 1)")
    dirs = _directions(q.dim, directions, seed)
    avg = np.array([np.mean(q(rk * dirs)) for rk in r])
    keep = avg > 0
    if np.count_nonzero(keep) < 2:
        raise EstimationError("density vanishes on the sampled radii; no singular exponent to estimate")
    slope = np.polyfit(np.log(r[keep]), np.log(avg[keep]), 1)[0]
    alpha = float(-slope - q.dim)
    if not 0 < alpha < 2:
        warnings.warn(f"estimated alpha={alpha:.4g} lies outside (0, 2)", RuntimeWarning, stacklevel=2)
    return alpha


def check_homogeneity(q0, trials=1000, seed=0, rtol=1e-10, s_range=(1e-2, 1e2), r_range=(0.1, 10.0)):
    """Test s^(M+alpha) q0(s z) == q0(z) on random s > 0 and z in S0."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    M, p = q0.dim, q0.dim + q0.alpha
    zs = []
    for _ in range(50):
        if sum(len(b) for b in zs) >= trials:
            break
        d = rng.standard_normal((4 * trials, M))
        d /= _norm(d)[:, None]
        r = np.exp(rng.uniform(np.log(r_range[0]), np.log(r_range[1]), 4 * trials))
        cand = d * r[:, None]
        zs.append(cand[q0(cand) > 0])
    z = np.concatenate(zs)[:trials] if zs else np.empty((0, M))
    if z.shape[0] == 0:
        return {"passed": False, "max_rel_error": math.inf, "trials": 0,
                "failures": [], "reason": "no sample found in the support"}
    s = np.exp(rng.uniform(np.log(s_range[0]), np.log(s_range[1]), z.shape[0]))
    lhs = s ** p * q0(s[:, None] * z)
    rhs = q0(z)
    rel = np.abs(lhs - rhs) / np.abs(rhs)
    bad = np.nonzero(rel > rtol)[0]
    return {
        "passed": bool(bad.size == 0),
        "max_rel_error": float(np.max(rel)),
        "trials": int(z.shape[0]),
        "failures": [(float(s[i]), z[i].tolist(), float(rel[i])) for i in bad[:10]],
    }


def radial_profile(q, r, sectors=256):
    """Angular integral of q over the sphere of radius r, times the Jacobian r^(M-1)."""
    if q.dim == 1:
        return q(np.array([[r], [-r]])).sum()
    if q.dim == 2:
        dirs = _directions(2, sectors)
        return q(r * dirs).sum() * (2 * np.pi / sectors) * r
    raise ConfigError("radial integrals are implemented for M <= 2")


LOG_RADIUS_CAP = 200.0


def log_radial_quad(g, r_lo, r_hi, power):
    """Integral of r**power * g(r) dr over (r_lo, r_hi) via r = exp(t).

    Infinite or zero limits are clipped at exp(+-200), far beyond any
    contribution of an integrable power law.
    """
    t_lo = math.log(r_lo) if r_lo > 0 else -LOG_RADIUS_CAP
    t_hi = math.log(r_hi) if np.isfinite(r_hi) else LOG_RADIUS_CAP
    if t_hi <= t_lo:
        return 0.0
    val, _ = integrate.quad(lambda t: math.exp(t * (power + 1)) * g(math.exp(t)), t_lo, t_hi,
                            limit=400, epsabs=0.0, epsrel=1e-11)
    return float(val)


def radial_integral(q, weight_power, r_lo, r_hi, sectors=256):
    """Integral of |z|^weight_power dq over r_lo < |z| < r_hi (r_hi may be inf)."""
    return log_radial_quad(lambda r: radial_profile(q, r, sectors), r_lo, r_hi, weight_power)


def truncated_moments(q, rho, R, gamma=None):
    """Discrete surrogate of the integrability condition: the pair
    (int_{rho<|z|<1} |z|^gamma dq, int_{1<|z|<R} |z|^(gamma-1) dq)."""
    gamma = gamma or q.gamma
    return radial_integral(q, gamma, rho, 1.0), radial_integral(q, gamma - 1, 1.0, R)
