import math

import numpy as np
import pytest

from trustaudit.consensus import SegmentVote, TraceAggregation
from trustaudit.economics import (
    DialViolated,
    EconParams,
    InvalidTarget,
    build_guarantee_report,
    check_economic_dial,
    check_statistical_dial,
    expected_payoff,
    honest_tail_bound,
    malicious_expected_payoff,
    malicious_payoff_variance,
    malicious_tail_bound,
    payoff_variance,
    sample_payoffs,
    slash_probability,
    update_reputation,
    worst_case_variance,
)

# The reference deployment: reward 6, penalty 8, slash band [0.2, 0.5],
# honest error 30%, deterrence margin 0.2, 60 segments/hour for 24 hours.
REFERENCE = EconParams(
    reward=6.0,
    penalty=8.0,
    slash_min=0.2,
    slash_max=0.5,
    reputation_step=0.1,
    honest_error=0.30,
    deterrence_margin=0.2,
    arrival_rate=60.0,
    horizon_hours=24.0,
)


def moments_oracle(reputation: float, params: EconParams):
    """Mean and variance straight from the three-outcome distribution."""
    p_slash = params.slash_min + (params.slash_max - params.slash_min) * (1 - reputation)
    outcomes = [
        (params.reward, 1.0 - params.honest_error),
        (-params.penalty, params.honest_error * p_slash),
        (0.0, params.honest_error * (1.0 - p_slash)),
    ]
    mean = sum(x * p for x, p in outcomes)
    var = sum(x * x * p for x, p in outcomes) - mean**2
    return mean, var


# ---------------------------------------------------------------------------
# per-segment moments
# ---------------------------------------------------------------------------


def test_moments_match_distribution_oracle():
    for reputation in np.linspace(0.0, 1.0, 21):
        want_mean, want_var = moments_oracle(float(reputation), REFERENCE)
        assert expected_payoff(reputation, REFERENCE) == pytest.approx(want_mean, abs=1e-12)
        assert payoff_variance(reputation, REFERENCE) == pytest.approx(want_var, abs=1e-12)


def test_reference_point_values():
    assert expected_payoff(0.0, REFERENCE) == pytest.approx(3.0, abs=1e-12)
    assert expected_payoff(1.0, REFERENCE) == pytest.approx(4.2 - 0.3 * 8 * 0.2, abs=1e-12)
    assert payoff_variance(0.0, REFERENCE) == pytest.approx(25.8, abs=1e-12)
    assert slash_probability(0.0, REFERENCE) == pytest.approx(0.5)
    assert slash_probability(1.0, REFERENCE) == pytest.approx(0.2)
    assert malicious_expected_payoff(0.0, REFERENCE) == pytest.approx(-4.0, abs=1e-12)
    assert malicious_payoff_variance(0.0, REFERENCE) == pytest.approx(16.0, abs=1e-12)


def test_worst_case_variance_at_zero_reputation():
    assert worst_case_variance(REFERENCE) == pytest.approx(25.8, abs=1e-12)


def test_worst_case_variance_can_sit_at_high_reputation():
    # Large honest error and a big penalty flip the variance slope, so the
    # supremum lands at the perfect-reputation end instead.
    params = EconParams(
        reward=0.1,
        penalty=10.0,
        slash_min=0.8,
        slash_max=0.9,
        reputation_step=0.5,
        honest_error=0.9,
        deterrence_margin=0.5,
        arrival_rate=1.0,
        horizon_hours=1.0,
    )
    dense = max(
        payoff_variance(r, params) for r in np.linspace(0.0, 1.0, 20001)
    )
    got = worst_case_variance(params)
    assert got == pytest.approx(dense, abs=1e-6)
    assert payoff_variance(1.0, params) > payoff_variance(0.0, params)


def test_monte_carlo_moments_match_calculators():
    rng = np.random.default_rng(31)
    for reputation in (0.0, 0.4, 1.0):
        draws = sample_payoffs(reputation, REFERENCE, 400_000, rng)
        mean = float(draws.mean())
        want_mean = expected_payoff(reputation, REFERENCE)
        want_var = payoff_variance(reputation, REFERENCE)
        stderr = math.sqrt(want_var / len(draws))
        assert abs(mean - want_mean) <= 4.0 * stderr
        assert float(draws.var()) == pytest.approx(want_var, rel=0.05)


# ---------------------------------------------------------------------------
# reputation dynamics
# ---------------------------------------------------------------------------


def test_reputation_converges_geometrically_when_always_correct():
    # Each step shrinks the distance to the limit by exactly (1 - step),
    # up to one rounding of the add in the update itself.
    step = 0.1
    r = 0.25
    for t in range(1, 200):
        gap_before = 1.0 - r
        r = update_reputation(r, True, step)
        assert (1.0 - r) == pytest.approx((1.0 - step) * gap_before, rel=1e-15), t


def test_reputation_decays_geometrically_when_always_wrong():
    # With zero feedback the update is a bare multiplication, so the oracle
    # multiplying in the same order reproduces it bit for bit.
    step = 0.25
    r = 0.8
    expected = 0.8
    for t in range(1, 100):
        r = update_reputation(r, False, step)
        expected = (1.0 - step) * expected
        assert r == expected, t


def test_reputation_stays_in_unit_interval():
    rng = np.random.default_rng(37)
    r = 0.5
    for _ in range(1000):
        r = update_reputation(r, bool(rng.integers(0, 2)), 0.3)
        assert 0.0 <= r <= 1.0


def test_update_reputation_rejects_bad_step():
    with pytest.raises(ValueError):
        update_reputation(0.5, True, 0.0)


# ---------------------------------------------------------------------------
# dials
# ---------------------------------------------------------------------------


def test_economic_dial_reference_values():
    dial = check_economic_dial(REFERENCE)
    assert dial.reward_ok
    assert dial.reward_lhs == pytest.approx(6.0)
    assert dial.reward_rhs == pytest.approx(12.0 / 7.0, abs=1e-12)
    assert dial.alpha == pytest.approx(0.4, abs=1e-12)
    # The reference slash floor is deliberately below the deterrence
    # requirement; the check must say so rather than smooth it over.
    assert not dial.pmin_ok
    assert dial.pmin_lhs == pytest.approx(0.2)
    assert dial.pmin_rhs == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_statistical_dial_worked_example():
    agg = TraceAggregation(segments=(SegmentVote("s", 0.99, 1.0),), beta=0.5)
    dial = check_statistical_dial(agg, REFERENCE, epsilon_target=0.01)
    assert dial.lhs == pytest.approx(0.49, abs=1e-12)
    assert dial.rhs == pytest.approx(math.sqrt(0.5 * 0.0099 * math.log(144000.0)), abs=1e-12)
    assert dial.rhs == pytest.approx(0.2425, abs=1e-4)
    assert dial.ok


def test_statistical_dial_rejects_bad_targets():
    agg = TraceAggregation(segments=(SegmentVote("s", 0.99, 1.0),), beta=0.5)
    with pytest.raises(InvalidTarget):
        check_statistical_dial(agg, REFERENCE, epsilon_target=0.0)
    with pytest.raises(InvalidTarget):
        check_statistical_dial(agg, REFERENCE, epsilon_target=1e9)


# ---------------------------------------------------------------------------
# tail bounds
# ---------------------------------------------------------------------------


def test_honest_tail_reference_exponent():
    tail = honest_tail_bound(REFERENCE)
    assert tail.exponent == pytest.approx(12960.0 / 63.6, abs=1e-9)
    assert tail.exponent == pytest.approx(203.77, abs=0.01)
    assert tail.bound == pytest.approx(math.exp(-tail.exponent))


def test_malicious_tail_reference_exponent():
    tail = malicious_tail_bound(REFERENCE)
    assert tail.exponent == pytest.approx(3686.4 / 58.0, abs=1e-9)
    assert tail.exponent == pytest.approx(63.56, abs=0.01)
    assert tail.mean_upper == pytest.approx(-2304.0, abs=1e-9)


def test_payoff_range_override_changes_denominators():
    wider = EconParams(
        reward=6.0,
        penalty=8.0,
        slash_min=0.2,
        slash_max=0.5,
        reputation_step=0.1,
        honest_error=0.30,
        deterrence_margin=0.2,
        arrival_rate=60.0,
        horizon_hours=24.0,
        payoff_range_override=8.0,
    )
    assert honest_tail_bound(wider).exponent == pytest.approx(12960.0 / 67.6, abs=1e-9)
    assert malicious_tail_bound(wider).exponent < malicious_tail_bound(REFERENCE).exponent
    assert honest_tail_bound(wider).exponent < honest_tail_bound(REFERENCE).exponent


def test_honest_tail_requires_positive_worst_case_mean():
    bad = EconParams(
        reward=1.0,
        penalty=10.0,
        slash_min=0.5,
        slash_max=1.0,
        reputation_step=0.1,
        honest_error=0.5,
        deterrence_margin=0.2,
        arrival_rate=10.0,
        horizon_hours=1.0,
    )
    assert expected_payoff(0.0, bad) < 0.0
    with pytest.raises(DialViolated):
        honest_tail_bound(bad)


def test_tail_exponents_shrink_with_wider_payoff_range():
    rng = np.random.default_rng(41)
    for _ in range(50):
        reward = float(rng.uniform(2.0, 10.0))
        penalty = float(rng.uniform(1.0, 10.0))
        base = EconParams(
            reward=reward,
            penalty=penalty,
            slash_min=0.1,
            slash_max=0.3,
            reputation_step=0.2,
            honest_error=0.1,
            deterrence_margin=0.3,
            arrival_rate=5.0,
            horizon_hours=10.0,
        )
        wider = EconParams(
            reward=reward,
            penalty=penalty,
            slash_min=0.1,
            slash_max=0.3,
            reputation_step=0.2,
            honest_error=0.1,
            deterrence_margin=0.3,
            arrival_rate=5.0,
            horizon_hours=10.0,
            payoff_range_override=reward * 2.0,
        )
        assert honest_tail_bound(wider).exponent < honest_tail_bound(base).exponent


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


def test_guarantee_report_reference_fields():
    report = build_guarantee_report(REFERENCE)
    assert report.mu_min == pytest.approx(3.0)
    assert report.sigma_H_sq == pytest.approx(25.8)
    assert report.b == pytest.approx(6.0)
    assert report.alpha == pytest.approx(0.4)
    assert report.e1_reward_ok is True
    assert report.e1_pmin_ok is False
    assert report.s1_ok is None
    assert report.honest_tail_exponent == pytest.approx(203.77, abs=0.01)
    assert report.malicious_tail_exponent == pytest.approx(63.56, abs=0.01)
    assert report.malicious_mean_upper == pytest.approx(-2304.0)

    as_dict = report.to_dict()
    assert set(as_dict) >= {
        "mu_min", "sigma_H_sq", "b", "alpha", "e1_reward_ok", "e1_pmin_ok",
        "s1_ok", "honest_tail_exponent", "malicious_tail_exponent", "malicious_mean_upper",
    }


def test_guarantee_report_with_statistical_dial():
    agg = TraceAggregation(segments=(SegmentVote("s", 0.99, 1.0),), beta=0.5)
    report = build_guarantee_report(REFERENCE, agg=agg, epsilon_target=0.01)
    assert report.s1_ok is True
    assert report.s1_lhs == pytest.approx(0.49)


def test_params_validation():
    with pytest.raises(ValueError):
        EconParams(6, 8, 0.6, 0.5, 0.1, 0.3, 0.2, 60, 24)  # slash_min > slash_max
    with pytest.raises(ValueError):
        EconParams(0, 8, 0.2, 0.5, 0.1, 0.3, 0.2, 60, 24)  # free work
    with pytest.raises(ValueError):
        EconParams(6, 8, 0.2, 0.5, 0.1, 1.0, 0.2, 60, 24)  # hopeless auditors
