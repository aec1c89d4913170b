import math

import numpy as np
import pytest

from edgeworth.errors import (
    AdmissibilityError,
    ConfigError,
    DegeneratePoolError,
    DomainError,
)
from edgeworth.trade import (
    BOX_CONSTRAINT,
    AgentState,
    ClampTally,
    CoefficientDraw,
    ExponentKind,
    ExponentLaw,
    NoiseKind,
    NoiseSpec,
    PercentPair,
    RuleVariant,
    TradeParams,
    UtilityParams,
    admissible_half_width,
    draw_coefficients,
    exchange_goods,
    exchange_goods_batch,
    exchange_goods_variant,
    partner_percentages,
    percentages,
    sample_coefficients,
    sample_random_exponents,
    split_total,
    trade_goods,
    trade_percent,
    trade_percent_variant,
    utility,
    utility_gain_bound,
    utility_gain_first_order,
    variant_percent,
)


@pytest.mark.parametrize("p, q, alpha, expected", [
    (1.0, 1.0, 0.3, 1.0),
    (0.0, 0.7, 0.5, 0.0),
    (0.25, 0.16, 0.5, 0.2),
])
def test_utility(p, q, alpha, expected):
    assert utility(PercentPair(p, q), UtilityParams(alpha)) == pytest.approx(expected)


def test_invalid_inputs_raise_domain_errors():
    with pytest.raises(DomainError):
        PercentPair(1.2, 0.5)
    with pytest.raises(DomainError):
        AgentState(-1.0, 0.0)
    with pytest.raises(DomainError):
        UtilityParams(0.5, 0.6)
    with pytest.raises(DomainError):
        UtilityParams(1.0)
    with pytest.raises(DomainError):
        NoiseSpec(NoiseKind.UNIFORM, -0.1)


@pytest.mark.parametrize("a, b, expected", [
    ((1.0, 2.0), (3.0, 2.0), (0.25, 0.5)),
    ((1.5, 0.5), (1.5, 0.5), (0.5, 0.5)),
    ((0.0, 5.0), (4.0, 5.0), (0.0, 0.5)),
])
def test_percentages(a, b, expected):
    pp = percentages(AgentState(*a), AgentState(*b))
    assert (pp.p, pp.q) == expected


def test_percentages_of_an_empty_pool():
    with pytest.raises(DegeneratePoolError):
        percentages(AgentState(0.0, 1.0), AgentState(0.0, 2.0))


def test_partner_sees_the_rotated_box():
    pp = partner_percentages(PercentPair(0.25, 0.5))
    assert (pp.p, pp.q) == (0.75, 0.5)


# admissibility


def test_admissible_half_width():
    assert admissible_half_width(0.5, 0.5) == 0.25
    assert admissible_half_width(1.0, 0.9) == pytest.approx(0.1)


def test_intensity_out_of_range():
    with pytest.raises(ConfigError) as info:
        TradeParams(1.5)
    assert info.value.issues[0].location == "trade.lambda"
    assert "0 < lambda <= 1" in info.value.issues[0].message


def test_noise_wider_than_the_box_is_rejected():
    with pytest.raises(AdmissibilityError) as info:
        TradeParams(0.5, UtilityParams(0.5), NoiseSpec(NoiseKind.UNIFORM, 0.3))
    assert "noise not admissible" in str(info.value)
    assert BOX_CONSTRAINT in str(info.value)


def test_admissibility_is_checked_at_both_ends_of_random_exponents():
    exponents = ExponentLaw(ExponentKind.UNIFORM, 0.4, 1.0)
    # alpha = 1 leaves no room for noise at all
    with pytest.raises(AdmissibilityError):
        TradeParams(0.5, noise=NoiseSpec(NoiseKind.UNIFORM, 0.01), exponents=exponents)
    TradeParams(0.5, exponents=exponents)


# coefficients


def test_zero_noise_coefficients(rng, calm_trade):
    for _ in range(10):
        cd = sample_coefficients(calm_trade, rng)
        assert (cd.a, cd.b) == (0.25, 0.25)


def test_coefficients_stay_inside_the_noise_support(rng):
    tp = TradeParams(1.0, UtilityParams(0.9), NoiseSpec(NoiseKind.UNIFORM, 0.05))
    draws = draw_coefficients(tp, rng, 100_000)
    assert np.all((draws.a >= 0.05) & (draws.a <= 0.15))
    assert np.all((draws.b >= 0.85) & (draws.b <= 0.95))


def test_mean_coefficient_matches_lambda_beta(rng, noisy_trade):
    draws = draw_coefficients(noisy_trade, rng, 1_000_000)
    stderr = draws.a.std(ddof=1) / math.sqrt(len(draws))
    assert abs(draws.a.mean() - 0.25) < 3 * stderr


def test_truncated_gaussian_noise(rng):
    noise = NoiseSpec(NoiseKind.TRUNCATED_GAUSSIAN, 0.2)
    sample = noise.sample(rng, 100_000)
    assert np.all(np.abs(sample) <= 0.2)
    assert 0 < noise.variance < 0.01
    assert sample.var() == pytest.approx(noise.variance, rel=0.05)


def test_coefficient_draw_validation():
    with pytest.raises(DomainError):
        CoefficientDraw(1.0, 0.5)
    with pytest.raises(DomainError):
        CoefficientDraw(0.5, 0.0)


# percent space


def test_trade_percent_examples():
    full = trade_percent(PercentPair(0.2, 0.8), CoefficientDraw(0.5, 0.5))
    assert (full.p, full.q) == pytest.approx((0.5, 0.5))
    quarter = trade_percent(PercentPair(0.2, 0.8), CoefficientDraw(0.25, 0.25))
    assert (quarter.p, quarter.q) == pytest.approx((0.35, 0.65))


def test_equal_shares_are_a_fixed_point():
    out = trade_percent(PercentPair(0.3, 0.3), CoefficientDraw(0.7, 0.9))
    assert (out.p, out.q) == (0.3, 0.3)


def test_gap_contracts_by_one_minus_a_minus_b(rng):
    for p, q, a, b in rng.uniform(0.0, 1.0, (10_000, 4)):
        a, b = max(a, 1e-9), max(b, 1e-9)
        out = trade_percent(PercentPair(p, q), CoefficientDraw(a, b))
        assert out.p - out.q == pytest.approx((1 - a - b) * (p - q), abs=1e-12)


def _random_trades(rng, count):
    for p, q, alpha, lam in zip(rng.uniform(0.01, 0.99, count), rng.uniform(0.01, 0.99, count),
                                rng.uniform(0.05, 0.95, count), rng.uniform(0.05, 1.0, count)):
        up = UtilityParams(alpha)
        yield PercentPair(p, q), up, lam, CoefficientDraw(lam * up.beta, lam * up.alpha)


def test_deterministic_trades_raise_utility_between_the_bounds(rng):
    for pp, up, lam, cd in _random_trades(rng, 10_000):
        after = trade_percent(pp, cd)
        gain = utility(after, up) - utility(pp, up)
        assert gain >= utility_gain_bound(pp, up, lam) * (1 - 1e-9) - 1e-15
        assert gain <= utility_gain_first_order(pp, up, lam) * (1 + 1e-9) + 1e-15


def test_first_order_gain_overestimates_a_full_trade():
    pp, up = PercentPair(0.2, 0.8), UtilityParams(0.5)
    after = trade_percent(pp, CoefficientDraw(0.5, 0.5))
    gain = utility(after, up) - utility(pp, up)
    assert gain == pytest.approx(0.1)
    assert utility_gain_first_order(pp, up, 1.0) > gain > utility_gain_bound(pp, up, 1.0)


def test_both_agents_gain(rng):
    for pp, up, lam, cd in _random_trades(rng, 10_000):
        if abs(pp.p - pp.q) < 1e-3:
            continue
        after = trade_percent(pp, cd)
        assert utility(partner_percentages(after), up) > utility(partner_percentages(pp), up)
        assert utility(after, up) > utility(pp, up)


def test_first_order_gain_needs_an_interior_point():
    with pytest.raises(DomainError):
        utility_gain_first_order(PercentPair(0.0, 0.5), UtilityParams(0.5), 0.5)


# goods space


def test_trade_goods_example():
    a, b = trade_goods(AgentState(1.0, 2.0), AgentState(3.0, 2.0), CoefficientDraw(0.25, 0.25))
    assert (a.x, a.y, b.x, b.y) == (1.25, 1.75, 2.75, 2.25)


def test_proportional_holdings_are_left_alone():
    a, b = trade_goods(AgentState(2.0, 2.0), AgentState(2.0, 2.0), CoefficientDraw(0.3, 0.6))
    assert (a.x, a.y, b.x, b.y) == (2.0, 2.0, 2.0, 2.0)


def test_full_trade_reaches_the_contract_curve(rng):
    for xa, ya, xb, yb in rng.exponential(1.0, (1000, 4)):
        new = exchange_goods(xa, ya, xb, yb, 0.5, 0.5)
        total_x, total_y = xa + xb, ya + yb
        assert new[0] * total_y == pytest.approx(new[1] * total_x, rel=1e-12)


def test_pair_totals_are_kept_bit_for_bit(rng):
    for xa, ya, xb, yb, a, b in zip(*rng.exponential(1.0, (4, 10_000)), *rng.uniform(0.01, 0.99, (2, 10_000))):
        new_xa, new_ya, new_xb, new_yb = exchange_goods(xa, ya, xb, yb, a, b)
        assert new_xa + new_xb == xa + xb
        assert new_ya + new_yb == ya + yb
        assert min(new_xa, new_ya, new_xb, new_yb) >= 0


def test_split_on_a_lattice():
    quantum = 2.0 ** -10
    share, partner = split_total(0.3, 1.0, quantum)
    assert share / quantum == round(share / quantum)
    assert share + partner == 1.0
    assert split_total(5.0, 1.0) == (1.0, 0.0)


def test_batch_skips_empty_pools(calm_trade, rng):
    xa, ya = np.array([0.0, 1.0]), np.array([1.0, 2.0])
    xb, yb = np.array([0.0, 3.0]), np.array([1.0, 2.0])
    draws = draw_coefficients(calm_trade, rng, 2)
    new_xa, new_ya, new_xb, new_yb, skipped, clamped = exchange_goods_batch(xa, ya, xb, yb, draws, calm_trade)
    assert (skipped, clamped) == (1, 0)
    assert (new_xa[0], new_ya[0], new_xb[0], new_yb[0]) == (0.0, 1.0, 0.0, 1.0)
    assert (new_xa[1], new_ya[1], new_xb[1], new_yb[1]) == (1.25, 1.75, 2.75, 2.25)


# proportional-noise variant


def test_variant_example():
    p, q, clamped = variant_percent(0.5, 0.5, 0.5, 0.5, 0.1, -0.1)
    assert (p, q) == pytest.approx((0.55, 0.45))
    assert not clamped


def test_variant_without_noise_is_a_fixed_point(rng):
    tp = TradeParams(0.5, variant=RuleVariant.PROPORTIONAL)
    out = trade_percent_variant(PercentPair(0.5, 0.5), tp, rng)
    assert (out.p, out.q) == (0.5, 0.5)


def test_variant_is_equal_only_in_the_mean(rng):
    tp = TradeParams(0.5, noise=NoiseSpec(NoiseKind.UNIFORM, 0.1), variant=RuleVariant.PROPORTIONAL)
    draws = draw_coefficients(tp, rng, 1_000_000)
    p_star = 0.4 * (1 + draws.mu)
    q_star = 0.4 * (1 + draws.mu_tilde)
    gap = p_star - q_star
    assert abs(gap.mean()) < 3 * gap.std(ddof=1) / math.sqrt(len(gap))
    assert np.count_nonzero(gap) > 0.99 * len(gap)


def test_variant_clamps_to_the_box():
    *_, clamped = exchange_goods_variant(0.9, 0.9, 0.1, 0.1, 0.5, 0.5, 0.2, 0.0)
    assert clamped


def test_variant_requires_the_proportional_rule(rng, calm_trade):
    with pytest.raises(ConfigError):
        trade_percent_variant(PercentPair(0.5, 0.5), calm_trade, rng)


def test_variant_counts_its_clamps(rng):
    tp = TradeParams(0.5, noise=NoiseSpec(NoiseKind.UNIFORM, 0.2), variant=RuleVariant.PROPORTIONAL)
    tally = ClampTally()
    for _ in range(2000):
        out = trade_percent_variant(PercentPair(0.99, 0.99), tp, rng, tally)
        assert 0.0 <= out.p <= 1.0 and 0.0 <= out.q <= 1.0
    assert tally.trades == 2000
    # p* = 0.99 (1 + mu) leaves the square once mu > 1/99, and so may q*
    kept = (0.2 + 1 / 99) / 0.4
    assert tally.rate == pytest.approx(1 - kept ** 2, abs=0.05)
    assert ClampTally().rate == 0.0


def test_variant_draws_in_batch_order():
    tp = TradeParams(0.5, noise=NoiseSpec(NoiseKind.UNIFORM, 0.1), variant=RuleVariant.PROPORTIONAL,
                     exponents=ExponentLaw(ExponentKind.UNIFORM, 0.3, 0.7))
    draws = draw_coefficients(tp, np.random.default_rng(5), 1)
    out = trade_percent_variant(PercentPair(0.3, 0.6), tp, np.random.default_rng(5))
    p, q, _ = variant_percent(0.3, 0.6, 0.5, float(draws.alpha[0]), float(draws.mu[0]), float(draws.mu_tilde[0]))
    assert (out.p, out.q) == (p, q)


# random exponents


def test_degenerate_exponents(rng):
    tp = TradeParams(0.5, exponents=ExponentLaw(ExponentKind.DEGENERATE, 0.5))
    for _ in range(5):
        up = sample_random_exponents(tp, rng)
        assert (up.alpha, up.beta) == (0.5, 0.5)


@pytest.mark.parametrize("low, high, expected", [(0.2, 0.8, 0.0), (0.4, 1.0, 0.4)])
def test_mean_exponent_difference(rng, low, high, expected):
    law = ExponentLaw(ExponentKind.UNIFORM, low, high)
    difference = 2 * law.sample(rng, 1_000_000) - 1
    stderr = difference.std(ddof=1) / math.sqrt(len(difference))
    assert abs(difference.mean() - expected) < 3 * stderr
    assert law.mean_difference() == pytest.approx(expected)


def test_random_exponents_stay_in_the_open_interval(rng):
    tp = TradeParams(0.5, exponents=ExponentLaw(ExponentKind.UNIFORM, 0.0, 1.0))
    for _ in range(100):
        up = sample_random_exponents(tp, rng)
        assert 0 < up.alpha < 1 and up.beta == 1 - up.alpha


def test_exponent_support_outside_the_unit_interval():
    with pytest.raises(ConfigError):
        ExponentLaw(ExponentKind.UNIFORM, 0.5, 1.2)


def test_exponents_must_be_configured(rng, calm_trade):
    with pytest.raises(ConfigError):
        sample_random_exponents(calm_trade, rng)
