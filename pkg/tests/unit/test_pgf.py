"""Unit tests for the closed-form generating functions."""

import logging

import numpy as np
import pytest

from mmc_priority_pmf.exceptions import (
    LevelOutOfRangeError,
    MissingMarginalError,
    PoleProximityError,
    PrefixOutOfRangeError,
)
from mmc_priority_pmf.model import ModelParams, from_fractions
from mmc_priority_pmf.pgf import PgfEvaluator, ProductForm, quadratic_roots
from tests import _bootstrap  # noqa: F401


def random_disc_points(rng, count, radius):
    moduli = radius * np.sqrt(rng.random(count))
    return moduli * np.exp(2j * np.pi * rng.random(count))


def test_quadratic_roots_order_by_modulus():
    larger, smaller = quadratic_roots(-(1.0 + 0.5), 0.5)

    assert larger == pytest.approx(1.0)
    assert smaller == pytest.approx(0.5)


def test_quadratic_roots_zero_constant_gives_zero_root():
    larger, smaller = quadratic_roots(-2.0, 0.0)

    assert larger == pytest.approx(2.0)
    assert smaller == 0.0


def test_zeta_roots_satisfy_sum_and_product_identities():
    model = ModelParams(servers=1, mu=1.0, rates=(0.3, 0.25, 0.2))
    evaluator = PgfEvaluator(model)
    rng = np.random.default_rng(7)
    z = [random_disc_points(rng, 1000, 1.0) for _ in range(2)]

    for kappa in range(3):
        beta = evaluator.beta(z, kappa)
        plus, minus = evaluator.zeta_pm(z, kappa)
        scale = 1.0 + np.abs(beta)
        constant = evaluator.sigma[3 - kappa]

        assert np.all(np.abs(plus + minus - (1.0 + model.r - beta)) <= 1e-12 * scale)
        assert np.all(np.abs(plus * minus - constant) <= 1e-12 * scale)
        assert np.all(np.abs(plus) >= np.abs(minus))


def test_plus_ratio_equals_inverted_minus_ratio_at_random_points():
    model = ModelParams(servers=1, mu=1.0, rates=(0.3, 0.2, 0.25, 0.15))
    evaluator = PgfEvaluator(model)
    rng = np.random.default_rng(11)
    z = [random_disc_points(rng, 1000, 1.0 / model.r) for _ in range(3)]

    roots = evaluator.prefix_roots(z)
    for kappa in range(1, 4):
        variable = z[kappa - 1]
        (plus_before, minus_before), (plus, minus) = roots[kappa - 1], roots[kappa]
        # P+/Q+ = Q-/P- with both sides cross-multiplied
        left = (1.0 - variable * plus_before) * (1.0 - variable * minus_before)
        right = (1.0 - variable * plus) * (1.0 - variable * minus)
        scale = (1.0 + np.abs(variable * plus_before)) * (1.0 + np.abs(variable * minus_before))

        assert np.all(np.abs(left - right) <= 1e-12 * scale)


def test_degenerate_roots_are_logged_with_their_count(caplog):
    caplog.set_level(logging.DEBUG, logger="mmc_priority_pmf.pgf")
    pgf_logger = logging.getLogger("mmc_priority_pmf.pgf")
    pgf_logger.addHandler(caplog.handler)
    try:
        larger, smaller = quadratic_roots(np.array([-2.0, -3.0, -2.0]), np.ones(3))
    finally:
        pgf_logger.removeHandler(caplog.handler)

    assert larger[0] == pytest.approx(1.0)
    assert smaller[2] == pytest.approx(1.0)
    assert "Degenerate zeta roots at 2 point(s)." in caplog.text


def test_zeta_with_empty_prefix_is_one_and_r():
    evaluator = PgfEvaluator(from_fractions(0.6, (1, 2), servers=1))

    plus, minus = evaluator.zeta_pm([], 0)

    assert plus == pytest.approx(1.0)
    assert minus == pytest.approx(0.6)


def test_beta_weights_lowest_level_first():
    model = ModelParams(servers=1, mu=1.0, rates=(0.1, 0.2, 0.3))
    evaluator = PgfEvaluator(model)

    assert evaluator.beta([0.5, 0.25], 0) == 0.0
    assert evaluator.beta([0.5, 0.25], 2) == pytest.approx(0.5 * 0.3 + 0.25 * 0.2)

    with pytest.raises(PrefixOutOfRangeError):
        evaluator.beta([0.5, 0.25], 3)
    with pytest.raises(PrefixOutOfRangeError):
        evaluator.beta([0.5], 2)


def test_plus_and_minus_forms_agree_inside_the_disc():
    # small load and radius keep every factor of both forms away from zero
    evaluator = PgfEvaluator(ModelParams(servers=1, mu=1.0, rates=(0.15, 0.1, 0.05)))
    rng = np.random.default_rng(11)
    z = [random_disc_points(rng, 1000, 0.5) for _ in range(2)]

    plus = evaluator.g0(z, ProductForm.PLUS)
    minus = evaluator.g0(z, ProductForm.MINUS)

    assert np.allclose(plus, minus, rtol=1e-12, atol=1e-14)


def test_g0_at_origin_is_empty_queue_probability():
    model = from_fractions(0.8, (1, 1, 1), servers=2)
    evaluator = PgfEvaluator(model)

    assert evaluator.g0([0.0, 0.0]) == pytest.approx(1.0 - model.r, abs=1e-15)
    assert evaluator.g_ell(0, [0.0, 0.0]) == pytest.approx(1.0 - model.r, abs=1e-15)


def test_g0_minus_form_at_one_for_two_levels():
    model = ModelParams(servers=1, mu=1.0, rates=(0.35, 0.4))
    evaluator = PgfEvaluator(model)

    value = evaluator.g0([1.0], ProductForm.MINUS)

    assert value.real == pytest.approx(1.0 - 0.35, abs=1e-14)
    assert abs(value.imag) < 1e-15


def test_plus_form_reports_pole_at_one():
    evaluator = PgfEvaluator(ModelParams(servers=1, mu=1.0, rates=(0.35, 0.4)))

    with pytest.raises(PoleProximityError):
        evaluator.g0([1.0], ProductForm.PLUS)


def test_single_level_g0_is_constant():
    evaluator = PgfEvaluator(ModelParams(servers=1, mu=1.0, rates=(0.4,)))

    assert evaluator.g0([]) == pytest.approx(0.6)
    assert evaluator.g_ell(3, []) == pytest.approx(0.6 * 0.4**3)


def test_g0_derivative_matches_finite_difference_of_product_form():
    model = ModelParams(servers=1, mu=1.0, rates=(0.3, 0.2))
    evaluator = PgfEvaluator(model)
    h = 1e-4

    derivative = (evaluator.g0([h]) - evaluator.g0([-h])) / (2 * h)
    _, minus = evaluator.zeta_pm([0.0], 1)
    # d/dz of (1-r)(1 - z zeta_minus(z)) / (1 - z r) at z = 0
    expected = (1.0 - model.r) * (model.r - minus)

    assert derivative.real == pytest.approx(float(np.real(expected)), abs=1e-7)


def test_g_ell_rejects_negative_power_and_wrong_arity():
    evaluator = PgfEvaluator(ModelParams(servers=1, mu=1.0, rates=(0.2, 0.2, 0.2)))

    with pytest.raises(LevelOutOfRangeError):
        evaluator.g_ell(-1, [0.0, 0.0])
    with pytest.raises(PrefixOutOfRangeError):
        evaluator.g0([0.0])


def test_marginal_and_aggregate_pgfs_are_normalized():
    model = ModelParams(servers=1, mu=1.0, rates=(0.2, 0.3, 0.25))
    evaluator = PgfEvaluator(model)

    for p in (1, 2):
        assert evaluator.marginal_pgf(p, 1.0) == pytest.approx(1.0, abs=1e-14)
    for p in (1, 2, 3):
        assert evaluator.agg_pgf(p, 1.0) == pytest.approx(1.0)

    with pytest.raises(LevelOutOfRangeError):
        evaluator.marginal_pgf(0, 1.0)
    with pytest.raises(LevelOutOfRangeError):
        evaluator.marginal_pgf(3, 1.0)
    with pytest.raises(LevelOutOfRangeError):
        evaluator.agg_pgf(4, 1.0)


def test_two_level_marginal_pgf_matches_joint_pgf_summed_over_high_level():
    model = ModelParams(servers=1, mu=1.0, rates=(0.3, 0.2))
    evaluator = PgfEvaluator(model)
    z = 0.4 + 0.3j

    # summing zeta_minus**ell over ell turns G_ell into G_0 / (1 - zeta_minus)
    base, ratio = evaluator.joint_kernel([z])
    joint = base / (1.0 - ratio)

    assert evaluator.marginal_pgf(1, z) == pytest.approx(complex(joint), rel=1e-12)


def test_xhi_ratio_for_single_effective_level():
    evaluator = PgfEvaluator(ModelParams(servers=1, mu=1.0, rates=(0.6, 0.0)))

    assert evaluator.xhi_ratio() == pytest.approx(0.6)
    assert evaluator.xhi_pmf(0) == pytest.approx(0.4)
    assert evaluator.xhi_pmf(-1) == 0.0


def test_xhi_ratio_matches_zeta_minus_at_zero():
    evaluator = PgfEvaluator(ModelParams(servers=1, mu=1.0, rates=(0.3, 0.25, 0.2)))

    _, minus = evaluator.zeta_pm([0.0, 0.0], 2)

    assert evaluator.xhi_ratio() == pytest.approx(float(np.real(minus)), rel=1e-14)


def test_xlo_pmf_uses_lowest_level_marginal():
    model = ModelParams(servers=1, mu=1.0, rates=(0.2, 0.3))
    evaluator = PgfEvaluator(model)
    marginal = [0.5, 0.25, 0.125]

    assert evaluator.xlo_pmf(0, None) == pytest.approx(0.5)
    assert evaluator.xlo_pmf(3, marginal) == pytest.approx(0.3 * 0.125)

    with pytest.raises(MissingMarginalError):
        evaluator.xlo_pmf(2, None)
    with pytest.raises(MissingMarginalError):
        evaluator.xlo_pmf(4, marginal)
