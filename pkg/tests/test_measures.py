from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levy_homog.errors import ConditionAFailure, ConfigError, DomainError, EstimationError
from levy_homog.measures import (JumpMap, LevyDensity, RescaledDensity, Support, builtin_example, check_homogeneity,
                                 estimate_alpha, example5_structures, extract_q0, radial_integral, rescale_pointwise,
                                 symmetric_stable, truncated_moments)


def _samples(dim, count=100, seed=0, r=(0.1, 10.0)):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((count, dim))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return u * np.exp(rng.uniform(np.log(r[0]), np.log(r[1]), count))[:, None]


@pytest.mark.parametrize("example, alpha", [(1, 1.5), (1, 0.5), (3, 1.5), (3, 0.5)])
def test_exact_rescaling_examples_reproduce_analytic_limit(example, alpha):
    q, _, q0_exact = builtin_example(example, alpha=alpha)
    z = _samples(q.dim)
    snap, report = extract_q0(q, alpha, z)
    expected = q0_exact(z)
    got = snap(z)
    pos = expected > 0
    assert np.array_equal(got > 0, pos)
    assert np.max(np.abs(got[pos] - expected[pos]) / expected[pos]) <= 1e-10
    assert report["support_mask"].tolist() == pos.tolist()


def test_example1_support_is_the_positive_half_line():
    q, _, _ = builtin_example(1, alpha=1.5)
    _, report = extract_q0(q, 1.5, np.array([[-2.0], [-0.5], [0.5], [2.0]]))
    assert report["support_mask"].tolist() == [False, False, True, True]


def test_example2_limit_keeps_only_the_negative_side():
    q, _, q0 = builtin_example(2, alpha1=1.2, alpha2=1.8)
    z = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    snap, report = extract_q0(q, 1.8, z)
    assert report["support_mask"].tolist() == [True, True, True, False, False, False]
    neg = z[:3]
    np.testing.assert_allclose(snap(neg), q0(neg), rtol=1e-3)
    assert np.all(snap(z[3:]) == 0)


def test_example4_snapshot_within_tolerance_and_deltas_shrink():
    q, _, q0 = builtin_example(4, alpha=1.5)
    z = _samples(1, r=(0.1, 4.0))
    snap, report = extract_q0(q, 1.5, z)
    np.testing.assert_allclose(snap(z), q0(z), rtol=1e-3)
    worst = report["deltas"].max(axis=1)
    assert np.all(np.diff(worst[-6:]) < 0)


def test_too_small_alpha_breaks_condition_A():
    q, _, _ = builtin_example(1, alpha=1.5)
    with pytest.raises(ConditionAFailure) as info:
        extract_q0(q, 1.2, _samples(1))
    assert info.value.report["C1_trace"][-1] > info.value.report["C1_trace"][0]


def test_too_large_alpha_gives_degenerate_limit():
    q, _, _ = builtin_example(4, alpha=1.5)
    _, report = extract_q0(q, 1.9, _samples(1))
    assert report["degenerate"]


def test_extract_rejects_bad_inputs():
    q, _, _ = builtin_example(1, alpha=1.5)
    with pytest.raises(ConfigError):
        extract_q0(q, 1.5, _samples(1), eps_seq=[0.5, 0.25])
    with pytest.raises(DomainError):
        extract_q0(q, 1.5, np.array([[0.0], [1.0]]))


def test_rescale_pointwise():
    q, _, _ = builtin_example(1, alpha=1.5)
    assert rescale_pointwise(q, 1.5, 0.1, 2.0) == pytest.approx(2.0 ** -2.5, rel=1e-14)
    with pytest.raises(DomainError):
        rescale_pointwise(q, 1.5, 0.1, 0.0)
    with pytest.raises(DomainError):
        rescale_pointwise(q, 1.5, 0.0, 1.0)


@pytest.mark.parametrize("example, alpha", [(1, 1.5), (1, 0.5), (3, 0.7)])
def test_estimate_alpha_pure_power_laws(example, alpha):
    q, _, _ = builtin_example(example, alpha=alpha)
    assert estimate_alpha(q, np.logspace(-4, -1, 8)) == pytest.approx(alpha, abs=1e-9)


def test_estimate_alpha_tempered_bias():
    # log q = -(1 + alpha) log r - r, so the fitted exponent picks up the
    # regression slope of r against log r
    q, _, _ = builtin_example(4, alpha=1.5)
    r = np.logspace(-4, -1, 8)
    expected = 1.5 + np.polyfit(np.log(r), r, 1)[0]
    assert estimate_alpha(q, r) == pytest.approx(expected, abs=1e-9)
    assert abs(expected - 1.5) < 0.02


def test_estimate_alpha_two_dimensional():
    q, _ = symmetric_stable(2, 1.3)
    assert estimate_alpha(q, np.logspace(-4, -1, 8)) == pytest.approx(1.3, abs=1e-9)


def test_estimate_alpha_warns_for_bounded_density():
    q = LevyDensity.from_expression("1", 1, 1.5, 2)
    with pytest.warns(RuntimeWarning):
        est = estimate_alpha(q, np.logspace(-4, -1, 8))
    assert est == pytest.approx(-1.0)


def test_estimate_alpha_errors():
    annulus = LevyDensity(1, 1.5, 2, lambda z: np.where((np.abs(z[:, 0]) > 1) & (np.abs(z[:, 0]) < 2), 1.0, 0.0))
    with pytest.raises(EstimationError):
        estimate_alpha(annulus, np.logspace(-4, -1, 8))
    q, _, _ = builtin_example(1, alpha=1.5)
    with pytest.raises(ConfigError):
        estimate_alpha(q, [0.1, 0.2, 0.3])
    with pytest.raises(ConfigError):
        estimate_alpha(q, [0.1, 0.2, 0.3, 1.5])


@pytest.mark.parametrize("example", [1, 2, 3, 4])
def test_builtin_limits_are_homogeneous(example):
    _, _, q0 = builtin_example(example, alpha=None if example == 2 else 1.5)
    result = check_homogeneity(q0, trials=1000)
    assert result["passed"] and result["trials"] == 1000
    assert result["max_rel_error"] <= 1e-10


def test_homogeneity_detects_a_non_homogeneous_density():
    fake = RescaledDensity(1, 1.5, lambda z: np.abs(z[:, 0]) ** -2.5 * (1 + 0.01 * np.abs(z[:, 0])), Support())
    assert not check_homogeneity(fake, trials=100)["passed"]


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.05, 20.0), st.sampled_from([-1.0, 1.0]), st.floats(0.1, 1.9))
def test_homogeneity_property_stable(s, r, sign, alpha):
    if abs(alpha - 1) < 1e-3:
        alpha = 1.5
    _, q0 = symmetric_stable(1, alpha)
    z = np.array([[sign * r]])
    assert s ** (1 + alpha) * q0(s * z)[0] == pytest.approx(q0(z)[0], rel=1e-10)


def test_example5_structures_shape():
    (q1, b1, _), (q2, b2, _) = example5_structures(1.5)
    assert (q1.dim, q2.dim) == (1, 2)
    assert b1(np.array([[2.0]])).tolist() == [[0.0, 0.0, 2.0]]
    assert b2(np.array([[1.0, 2.0]])).tolist() == [[1.0, 2.0, 0.0]]
    for b in (b1, b2):
        ok, err = b.check()
        assert ok and err < 1e-12
    with pytest.raises(ConfigError):
        example5_structures(1.0)


def test_example3_jump_map_bound():
    _, beta, _ = builtin_example(3, alpha=1.5)
    assert beta.bound_B1 == pytest.approx(np.sqrt(3.0))
    assert beta.check()[0]


def test_builtin_parameter_validation():
    with pytest.raises(ConfigError):
        builtin_example(2, alpha1=1.8, alpha2=1.2)
    with pytest.raises(ConfigError):
        builtin_example(1, alpha=1.0)
    with pytest.raises(ConfigError):
        builtin_example(4, alpha=1.5, decay=-1.0)
    with pytest.raises(ConfigError):
        builtin_example(9, alpha=1.5)


def test_truncated_moments_match_closed_forms():
    q, _, _ = builtin_example(1, alpha=1.5)
    inner, outer = truncated_moments(q, 1e-2, 100.0)
    # int_rho^1 z^2 z^-2.5 dz and int_1^R z z^-2.5 dz
    assert inner == pytest.approx((1 - 1e-2 ** 0.5) / 0.5, rel=1e-8)
    assert outer == pytest.approx((1 - 100.0 ** -0.5) / 0.5, rel=1e-8)


def test_radial_integral_two_dimensional():
    _, q0 = symmetric_stable(2, 1.5)
    # 2 pi int_0^rho r^2 r^-3.5 r dr = 2 pi rho^0.5 / 0.5
    assert radial_integral(q0, 2, 0.0, 0.01) == pytest.approx(2 * np.pi * 0.1 / 0.5, rel=1e-8)


def test_expression_density_and_support():
    q = LevyDensity.from_expression("abs(z1)^(-2.5)", 1, 1.5, 2, support="negative")
    assert q(np.array([[-1.0], [1.0]])).tolist() == [1.0, 0.0]
    with pytest.raises(ConfigError):
        Support.from_spec("sideways")


def test_linear_jump_map():
    beta = JumpMap.linear([[1.0, 0.0], [0.0, 2.0]])
    assert beta.bound_B1 == pytest.approx(2.0)
    np.testing.assert_allclose(beta(np.array([[1.0, 1.0]])), [[1.0, 2.0]])
