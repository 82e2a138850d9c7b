"""Unit tests for model parameters and Erlang quantities."""

import math

import pytest

from mmc_priority_pmf.exceptions import (
    InvalidFractionsError,
    InvalidParameterError,
    LevelOutOfRangeError,
    NonErgodicError,
    ZeroRatesError,
)
from mmc_priority_pmf.model import (
    ModelParams,
    erlang_quantities,
    from_fractions,
    high_priority_marginal,
    high_priority_marginal_pmf,
    require_positive_arrivals,
)
from tests import _bootstrap  # noqa: F401


def test_from_fractions_splits_total_intensity():
    model = from_fractions(0.9, (1, 1, 1, 1), servers=1)

    assert model.levels == 4
    assert model.rates == pytest.approx((0.225, 0.225, 0.225, 0.225))
    assert model.r == pytest.approx(0.9)
    assert model.mu == 1.0


def test_from_fractions_normalizes_unnormalized_weights():
    model = from_fractions(0.6, (2, 1), servers=2)

    assert model.rates == pytest.approx((0.4, 0.2))
    assert model.rho == pytest.approx(1.2)


def test_from_fractions_rejects_saturated_load():
    with pytest.raises(NonErgodicError):
        from_fractions(1.0, (1, 1), servers=1)


def test_from_fractions_rejects_zero_and_negative_fractions():
    with pytest.raises(InvalidFractionsError):
        from_fractions(0.5, (0, 0), servers=1)
    with pytest.raises(InvalidFractionsError):
        from_fractions(0.5, (1, -0.1), servers=1)


def test_from_rates_divides_by_total_capacity():
    model = ModelParams.from_rates((1.0, 2.0), mu=2.0, servers=3)

    assert model.rates == pytest.approx((1 / 6, 2 / 6))
    assert model.lambdas == pytest.approx((1.0, 2.0))
    assert model.arrival_rate == pytest.approx(3.0)


@pytest.mark.parametrize("factor", [0.1, 0.3, 3.0, 7.0, 1e-3, 12.5])
def test_from_rates_depends_only_on_rates_relative_to_mu(factor):
    lambdas = (0.35, 1.1, 0.27, 0.9)
    reference = ModelParams.from_rates(lambdas, mu=0.8, servers=4)
    scaled = ModelParams.from_rates(
        tuple(factor * lam for lam in lambdas), mu=factor * 0.8, servers=4
    )

    assert scaled.rates == pytest.approx(reference.rates, rel=2e-15, abs=0.0)
    assert scaled.r == pytest.approx(reference.r, rel=2e-15, abs=0.0)
    assert erlang_quantities(scaled).p_no_wait == pytest.approx(
        erlang_quantities(reference).p_no_wait, rel=1e-13
    )


def test_model_params_validates_servers_and_mu():
    with pytest.raises(InvalidParameterError):
        ModelParams(servers=0, mu=1.0, rates=(0.1,))
    with pytest.raises(InvalidParameterError):
        ModelParams(servers=True, mu=1.0, rates=(0.1,))
    with pytest.raises(InvalidParameterError):
        ModelParams(servers=1, mu=0.0, rates=(0.1,))
    with pytest.raises(NonErgodicError):
        ModelParams(servers=1, mu=1.0, rates=(0.6, 0.4))


def test_sigma_and_aggregate_top():
    model = ModelParams(servers=2, mu=1.0, rates=(0.1, 0.2, 0.3))

    assert model.sigma(0) == 0.0
    assert model.sigma(2) == pytest.approx(0.3)
    assert model.sigma(3) == pytest.approx(model.r)

    merged = model.aggregate_top(2)
    assert merged.rates == pytest.approx((0.3, 0.3))
    assert merged.servers == 2

    with pytest.raises(LevelOutOfRangeError):
        model.sigma(4)
    with pytest.raises(LevelOutOfRangeError):
        model.aggregate_top(0)


def test_erlang_quantities_single_server():
    erlang = erlang_quantities(ModelParams(servers=1, mu=1.0, rates=(0.5,)))

    assert erlang.p0 == pytest.approx(0.5)
    assert erlang.p_no_wait == pytest.approx(0.5)
    assert erlang.p_all_busy_empty_queue == pytest.approx(0.25)
    assert erlang.server_distribution == pytest.approx((0.5, 0.25))


def test_erlang_quantities_match_textbook_formulas():
    model = from_fractions(0.7, (1, 1), servers=3)
    rho = model.rho
    c = model.servers
    inverse_p0 = sum(rho**k / math.factorial(k) for k in range(c))
    inverse_p0 += rho**c / math.factorial(c) * c / (c - rho)
    p0 = 1.0 / inverse_p0
    p_no_wait = sum(p0 * rho**k / math.factorial(k) for k in range(c))

    erlang = erlang_quantities(model)

    assert erlang.p0 == pytest.approx(p0, rel=1e-12)
    assert erlang.p_no_wait == pytest.approx(p_no_wait, rel=1e-12)
    assert erlang.p_wait == pytest.approx(1.0 - p_no_wait, rel=1e-12)
    assert erlang.server_distribution[-1] == pytest.approx(
        erlang.p_all_busy_empty_queue, rel=1e-12
    )


def test_erlang_quantities_stay_finite_for_many_servers():
    erlang = erlang_quantities(from_fractions(0.95, (1,), servers=400))

    assert 0.0 < erlang.p_no_wait < 1.0
    assert math.isfinite(erlang.p0)


def test_erlang_quantities_for_empty_traffic():
    erlang = erlang_quantities(ModelParams(servers=2, mu=1.0, rates=(0.0, 0.0)))

    assert erlang.p0 == 1.0
    assert erlang.p_no_wait == 1.0
    assert erlang.p_all_busy_empty_queue == 0.0


def test_high_priority_marginal_sums_to_one():
    model = from_fractions(0.8, (3, 5), servers=2)
    values = high_priority_marginal_pmf(model, 400)

    assert values.sum() == pytest.approx(1.0, abs=1e-12)
    assert high_priority_marginal(model, -1) == 0.0
    assert values[1] / values[2] == pytest.approx(1.0 / model.rates[0])


def test_require_positive_arrivals_rejects_zero_rates():
    with pytest.raises(ZeroRatesError):
        require_positive_arrivals(ModelParams(servers=1, mu=1.0, rates=(0.0, 0.0)))
