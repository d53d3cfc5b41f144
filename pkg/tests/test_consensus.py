import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from trustaudit.consensus import (
    AuditorType,
    ChernoffBound,
    SeatPoolConfig,
    SegmentVote,
    TooManySegments,
    TraceAggregation,
    chernoff_trace_bound,
    classification_curve,
    default_pools,
    exact_trace_failure,
    flawed_segment_pass_probability,
    hoeffding_trace_bound,
    monte_carlo_trace_failure,
    segment_pass_probability,
    trace_failure_bounds,
)

HALF = Fraction(1, 2)


def human_pool(k: int, q_num: int, q_den: int, eps: float, rho: float, weight=1.0):
    return SeatPoolConfig(AuditorType.HUMAN, k, Fraction(q_num, q_den), eps, rho, weight)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def enumerated_pass_probability(k: int, q: int, eps: float, rho: float, flawed: bool) -> float:
    """Exhaustive three-state enumeration of one seat pool.

    Every seat is adversarial (prob rho), honest-correct ((1-rho)(1-eps)),
    or honest-wrong ((1-rho)eps).  On a sound segment only honest-correct
    seats vote pass; on a flawed one, adversarial and honest-wrong seats do.
    """
    total = 0.0
    for states in itertools.product((0, 1, 2), repeat=k):
        prob = 1.0
        for s in states:
            prob *= (rho, (1 - rho) * (1 - eps), (1 - rho) * eps)[s]
        n_mal = states.count(0)
        n_correct = states.count(1)
        n_wrong = states.count(2)
        pass_votes = n_correct if not flawed else n_mal + n_wrong
        if pass_votes >= q:
            total += prob
    return total


def brute_force_trace_failure(agg: TraceAggregation) -> float:
    """Enumerate all 2^S outcome vectors; independent of the DP merge logic."""
    threshold = agg.beta * sum(s.weight for s in agg.segments)
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=len(agg.segments)):
        prob = 1.0
        weight = 0.0
        for bit, seg in zip(outcome, agg.segments):
            prob *= seg.pass_probability if bit else (1.0 - seg.pass_probability)
            weight += seg.weight * bit
        if weight < threshold:
            total += prob
    return total


def direct_comb_pass_probability(k: int, q: int, eps: float, rho: float) -> float:
    # Plain double sum with exact integer binomials, no log-space switch.
    total = 0.0
    for m in range(k + 1):
        outer = math.comb(k, m) * rho**m * (1 - rho) ** (k - m)
        inner = sum(
            math.comb(k - m, c) * (1 - eps) ** c * eps ** (k - m - c)
            for c in range(q, k - m + 1)
        )
        total += outer * inner
    return total


# ---------------------------------------------------------------------------
# segment layer
# ---------------------------------------------------------------------------


def test_pass_probability_matches_enumeration_grid():
    for k in range(1, 7):
        for q in range(1, k + 1):
            for eps in (0.0, 0.05, 0.3, 0.7, 1.0):
                for rho in (0.0, 0.1, 0.3):
                    pool = human_pool(k, q, k, eps, rho)
                    assert pool.quorum == q
                    want = enumerated_pass_probability(k, q, eps, rho, flawed=False)
                    got = segment_pass_probability(pool)
                    assert got == pytest.approx(want, abs=1e-12), (k, q, eps, rho)


def test_flawed_pass_probability_matches_enumeration_grid():
    for k in range(1, 7):
        for q in range(1, k + 1):
            for eps in (0.0, 0.05, 0.3, 0.7, 1.0):
                for rho in (0.0, 0.1, 0.3):
                    pool = human_pool(k, q, k, eps, rho)
                    want = enumerated_pass_probability(k, q, eps, rho, flawed=True)
                    got = flawed_segment_pass_probability(pool)
                    assert got == pytest.approx(want, abs=1e-12), (k, q, eps, rho)


def test_log_space_path_agrees_with_exact_binomials():
    # Pools larger than the log-space switchover still match the plain
    # integer-binomial double sum.
    for k in (31, 40, 64):
        for eps, rho in ((0.3, 0.1), (0.05, 0.0), (0.7, 0.3)):
            pool = human_pool(k, 1, 2, eps, rho)
            want = direct_comb_pass_probability(k, pool.quorum, eps, rho)
            assert segment_pass_probability(pool) == pytest.approx(want, abs=1e-12)


def test_pass_probability_boundary_parameters():
    assert segment_pass_probability(human_pool(5, 1, 2, 0.0, 0.0)) == 1.0
    assert segment_pass_probability(human_pool(5, 1, 2, 1.0, 0.0)) == 0.0
    assert flawed_segment_pass_probability(human_pool(5, 1, 2, 0.0, 0.0)) == 0.0
    # All seats adversarial-ish: rho close to 1 still passes a flawed segment.
    assert flawed_segment_pass_probability(human_pool(5, 1, 2, 0.0, 0.99)) > 0.9


def test_pass_probability_monotone_in_parameters():
    rng = np.random.default_rng(7)
    for _ in range(200):
        k = int(rng.integers(1, 13))
        q = int(rng.integers(1, k + 1))
        eps = float(rng.uniform(0.0, 0.9))
        rho = float(rng.uniform(0.0, 0.5))
        base = segment_pass_probability(human_pool(k, q, k, eps, rho))
        worse_eps = segment_pass_probability(human_pool(k, q, k, min(1.0, eps + 0.05), rho))
        worse_rho = segment_pass_probability(human_pool(k, q, k, eps, min(0.99, rho + 0.05)))
        assert worse_eps <= base + 1e-12
        assert worse_rho <= base + 1e-12
        if q < k:
            stricter = segment_pass_probability(human_pool(k, q + 1, k, eps, rho))
            assert stricter <= base + 1e-12


# ---------------------------------------------------------------------------
# exact trace layer
# ---------------------------------------------------------------------------


def random_aggregation(rng, max_segments=10) -> TraceAggregation:
    n = int(rng.integers(1, max_segments + 1))
    segments = tuple(
        SegmentVote(f"s{i}", float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.1, 3.0)))
        for i in range(n)
    )
    return TraceAggregation(segments=segments, beta=float(rng.uniform(0.05, 0.95)))


def test_exact_failure_two_equal_segments():
    agg = TraceAggregation(
        segments=(SegmentVote("a", 0.9, 1.0), SegmentVote("b", 0.9, 1.0)), beta=0.6
    )
    assert exact_trace_failure(agg) == pytest.approx(0.19, abs=1e-12)


def test_exact_failure_single_segment():
    agg = TraceAggregation(segments=(SegmentVote("a", 0.9, 1.0),), beta=0.5)
    assert exact_trace_failure(agg) == pytest.approx(0.1, abs=1e-12)


def test_exact_failure_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(300):
        agg = random_aggregation(rng)
        want = brute_force_trace_failure(agg)
        assert exact_trace_failure(agg) == pytest.approx(want, abs=1e-12)


def test_exact_failure_invariant_under_weight_rescaling():
    rng = np.random.default_rng(13)
    for _ in range(200):
        agg = random_aggregation(rng)
        scale = float(rng.uniform(0.01, 100.0))
        scaled = TraceAggregation(
            segments=tuple(
                SegmentVote(s.segment_id, s.pass_probability, s.weight * scale)
                for s in agg.segments
            ),
            beta=agg.beta,
        )
        assert exact_trace_failure(scaled) == pytest.approx(exact_trace_failure(agg), abs=1e-9)


def test_exact_failure_segment_cutoff():
    segments = tuple(SegmentVote(f"s{i}", 0.9, 1.0) for i in range(25))
    with pytest.raises(TooManySegments):
        exact_trace_failure(TraceAggregation(segments=segments, beta=0.5))


def test_equal_weights_collapse_to_compact_support():
    # 24 equal-weight segments stay enumerable because the DP merges atoms.
    segments = tuple(SegmentVote(f"s{i}", 0.8, 2.0) for i in range(24))
    agg = TraceAggregation(segments=segments, beta=0.5)
    want = sum(
        math.comb(24, j) * 0.8**j * 0.2 ** (24 - j) for j in range(0, 12)
    )
    assert exact_trace_failure(agg) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def test_hoeffding_single_segment_hand_value():
    agg = TraceAggregation(segments=(SegmentVote("a", 0.9, 1.0),), beta=0.5)
    assert hoeffding_trace_bound(agg) == pytest.approx(math.exp(-0.32), rel=1e-12)


def test_hoeffding_vacuous_when_mean_below_threshold():
    agg = TraceAggregation(segments=(SegmentVote("a", 0.4, 1.0),), beta=0.5)
    assert hoeffding_trace_bound(agg) == 1.0


def test_chernoff_single_segment_closed_form():
    # One Bernoulli(0.9) vote with threshold 0.5: the optimum is at
    # lambda = ln 9 and the bound value is 2 * sqrt(0.9 * 0.1) = 0.6.
    agg = TraceAggregation(segments=(SegmentVote("a", 0.9, 1.0),), beta=0.5)
    got = chernoff_trace_bound(agg)
    assert isinstance(got, ChernoffBound)
    assert got.bound == pytest.approx(0.6, abs=1e-6)
    assert got.lambda_star == pytest.approx(math.log(9.0), abs=1e-4)


def test_chernoff_objective_is_convex_in_lambda():
    from trustaudit.consensus import _chernoff_objective

    rng = np.random.default_rng(17)
    for _ in range(20):
        agg = random_aggregation(rng)
        lams = np.linspace(1e-6, 20.0, 80)
        values = [_chernoff_objective(agg, lam) for lam in lams]
        second_diff = np.diff(values, n=2)
        assert (second_diff >= -1e-8).all()


def test_bounds_dominate_exact_failure():
    rng = np.random.default_rng(19)
    for _ in range(400):
        agg = random_aggregation(rng)
        exact = exact_trace_failure(agg)
        hoeffding = hoeffding_trace_bound(agg)
        chernoff = chernoff_trace_bound(agg).bound
        assert exact <= hoeffding + 1e-12
        assert exact <= chernoff + 1e-12
        assert 0.0 <= chernoff <= 1.0
        assert 0.0 <= hoeffding <= 1.0


def test_chernoff_all_segments_certain():
    segments = tuple(SegmentVote(f"s{i}", 1.0, 1.0) for i in range(4))
    agg = TraceAggregation(segments=segments, beta=0.5)
    assert exact_trace_failure(agg) == 0.0
    assert chernoff_trace_bound(agg).bound < 1e-100


def test_chernoff_all_segments_hopeless():
    segments = tuple(SegmentVote(f"s{i}", 0.0, 1.0) for i in range(4))
    agg = TraceAggregation(segments=segments, beta=0.5)
    assert exact_trace_failure(agg) == 1.0
    assert chernoff_trace_bound(agg).bound == 1.0
    assert hoeffding_trace_bound(agg) == 1.0


def test_trace_failure_bounds_bundle():
    agg = TraceAggregation(segments=(SegmentVote("a", 0.9, 1.0),), beta=0.5)
    bundle = trace_failure_bounds(agg)
    assert bundle.exact == pytest.approx(0.1, abs=1e-12)
    assert bundle.hoeffding == pytest.approx(math.exp(-0.32), rel=1e-12)
    assert bundle.chernoff == pytest.approx(0.6, abs=1e-6)

    wide = TraceAggregation(
        segments=tuple(SegmentVote(f"s{i}", 0.9, 1.0) for i in range(30)), beta=0.5
    )
    assert trace_failure_bounds(wide).exact is None


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def test_monte_carlo_matches_exact_within_error():
    rng = np.random.default_rng(23)
    for _ in range(5):
        agg = random_aggregation(rng, max_segments=6)
        exact = exact_trace_failure(agg)
        mc = monte_carlo_trace_failure(agg, n_samples=200_000, seed=1234)
        tolerance = 5.0 * max(mc.stderr, 1e-4)
        assert abs(mc.estimate - exact) <= tolerance


def test_monte_carlo_is_deterministic_per_seed():
    agg = TraceAggregation(
        segments=tuple(SegmentVote(f"s{i}", 0.7, 1.0) for i in range(30)), beta=0.5
    )
    a = monte_carlo_trace_failure(agg, n_samples=50_000, seed=99)
    b = monte_carlo_trace_failure(agg, n_samples=50_000, seed=99)
    c = monte_carlo_trace_failure(agg, n_samples=50_000, seed=100)
    assert a == b
    assert a.estimate != c.estimate


# ---------------------------------------------------------------------------
# classification curves
# ---------------------------------------------------------------------------


def test_curve_monotone_and_accuracy_identity():
    pools = default_pools()
    betas = [i / 40 for i in range(1, 40)]
    points = classification_curve(pools, pools, betas=betas, prior_good=0.5)
    for a, b in zip(points, points[1:]):
        assert b.tpr <= a.tpr + 1e-12
        assert b.fpr <= a.fpr + 1e-12
    for pt in points:
        assert pt.accuracy == pytest.approx(0.5 * pt.tpr + 0.5 * (1.0 - pt.fpr), abs=1e-15)


def test_curve_low_threshold_product_rule():
    # With beta below min_weight / total_weight, acceptance means at least
    # one segment passed, so TPR = 1 - prod(1 - p_s).
    pools = default_pools()
    counts = {AuditorType.LLM: 2, AuditorType.HUMAN: 2}
    [pt] = classification_curve(pools, pools, betas=[0.001], segment_counts=counts)
    p_l = segment_pass_probability(pools[AuditorType.LLM])
    p_h = segment_pass_probability(pools[AuditorType.HUMAN])
    want_tpr = 1.0 - (1.0 - p_l) ** 2 * (1.0 - p_h) ** 2
    assert pt.tpr == pytest.approx(want_tpr, abs=1e-12)

    f_l = flawed_segment_pass_probability(pools[AuditorType.LLM])
    f_h = flawed_segment_pass_probability(pools[AuditorType.HUMAN])
    want_fpr = 1.0 - (1.0 - f_l) ** 2 * (1.0 - f_h) ** 2
    assert pt.fpr == pytest.approx(want_fpr, abs=1e-12)


def test_curve_high_threshold_product_rule():
    # With beta above (total - min_weight) / total, acceptance needs every
    # segment to pass, so TPR = prod(p_s).
    pools = default_pools()
    counts = {AuditorType.LLM: 2, AuditorType.HUMAN: 2}
    [pt] = classification_curve(pools, pools, betas=[0.999], segment_counts=counts)
    p_l = segment_pass_probability(pools[AuditorType.LLM])
    p_h = segment_pass_probability(pools[AuditorType.HUMAN])
    assert pt.tpr == pytest.approx(p_l**2 * p_h**2, abs=1e-12)


def test_curve_flawed_fraction_zero_means_models_coincide():
    pools = default_pools()
    points = classification_curve(pools, pools, betas=[0.5], flawed_fraction=0.0)
    assert points[0].fpr == pytest.approx(points[0].tpr, abs=1e-12)


def test_curve_rejects_bad_inputs():
    pools = default_pools()
    with pytest.raises(ValueError):
        classification_curve(pools, pools, betas=[0.0])
    with pytest.raises(ValueError):
        classification_curve(pools, pools, betas=[0.5], prior_good=1.5)
    with pytest.raises(ValueError):
        classification_curve(pools, pools, betas=[0.5], segment_counts={})


# ---------------------------------------------------------------------------
# aggregation plumbing
# ---------------------------------------------------------------------------


def test_aggregation_moments():
    agg = TraceAggregation(
        segments=(SegmentVote("a", 0.9, 1.0), SegmentVote("b", 0.5, 2.0)), beta=0.5
    )
    assert agg.total_weight == pytest.approx(3.0)
    assert agg.threshold_weight == pytest.approx(1.5)
    assert agg.mu_vote == pytest.approx(0.9 + 1.0)
    assert agg.sigma_vote_sq == pytest.approx(0.09 + 4 * 0.25)
    assert agg.sigma_max_sq == pytest.approx(1.0 + 4.0)
    assert agg.sigma_vote_sq <= agg.sigma_max_sq


def test_aggregation_validation():
    with pytest.raises(ValueError):
        TraceAggregation(segments=(), beta=0.5)
    with pytest.raises(ValueError):
        TraceAggregation(segments=(SegmentVote("a", 0.5, 1.0),), beta=1.0)
    with pytest.raises(ValueError):
        SegmentVote("a", 1.2, 1.0)
    with pytest.raises(ValueError):
        SegmentVote("a", 0.5, 0.0)
