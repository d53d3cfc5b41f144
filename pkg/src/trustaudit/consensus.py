"""Quorum consensus math for weighted segment voting.

A segment is audited by a pool of k seats of one auditor tier.  Each seat is
adversarial with probability rho (human pools only); honest seats vote
correctly with probability 1 - epsilon.  The segment passes when at least
q = ceil(tau * k) pass votes land.  A trace aggregates its segment outcomes
into W = sum(w_s * B_s) and is accepted when W >= beta * sum(w_s).

This module computes the exact per-segment pass probability, the exact
trace-level failure probability (dynamic programming over the weighted
Bernoulli sum), two closed-form tail bounds (Hoeffding and an optimized
Chernoff), a Monte Carlo fallback for wide traces, and good-vs-flawed
classification curves over a threshold sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

# Segment values whose weighted sums land closer than this are one DP atom.
MERGE_TOLERANCE = 1e-12

# Above this many segments the exact support can blow up; use Monte Carlo.
MAX_EXACT_SEGMENTS = 24

# Exact integer binomials below, log-gamma kernels above.
_LOG_SPACE_THRESHOLD = 30

# Cap on lambda * max_weight so exp() stays finite in the Chernoff objective.
_CHERNOFF_EXP_CAP = 700.0


class TooManySegments(ValueError):
    """Exact trace enumeration refused; the support would be too wide."""


class AuditorType(Enum):
    COMPUTER = "Computer"
    LLM = "LLM"
    HUMAN = "Human"


@dataclass(frozen=True)
class SeatPoolConfig:
    """Voting pool parameters for one auditor tier.

    tau is kept as an exact rational so the quorum never falls on the wrong
    side of a floating-point ceil.  Adversarial fractions are only meaningful
    for human pools; computer and LLM seats are reproducible machine checks.
    """

    auditor_type: AuditorType
    seat_count: int
    tau: Fraction
    epsilon: float
    rho: float
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "tau", Fraction(self.tau))
        if self.seat_count < 1:
            raise ValueError("seat_count must be at least 1")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.auditor_type in (AuditorType.COMPUTER, AuditorType.LLM) and self.rho != 0.0:
            raise ValueError(f"{self.auditor_type.value} pools cannot carry adversarial seats")
        if self.weight <= 0.0:
            raise ValueError("weight must be positive")

    @property
    def quorum(self) -> int:
        return ceil_quorum(self.seat_count, self.tau)


def ceil_quorum(seat_count: int, tau: Fraction) -> int:
    """Exact ceil(tau * seat_count) in integer arithmetic."""
    value = Fraction(tau) * seat_count
    return -((-value.numerator) // value.denominator)


def default_pools() -> dict[AuditorType, SeatPoolConfig]:
    """Reference pool layout: 1 computer seat, 3 LLM seats, 5 human seats.

    Error rates are the reference operating point (machines exact, LLM 5%,
    humans 30% with a 10% adversarial fraction) and human votes carry double
    weight.  Returns a fresh dict so callers can override entries.
    """
    half = Fraction(1, 2)
    return {
        AuditorType.COMPUTER: SeatPoolConfig(AuditorType.COMPUTER, 1, half, 0.0, 0.0, 1.0),
        AuditorType.LLM: SeatPoolConfig(AuditorType.LLM, 3, half, 0.05, 0.0, 1.0),
        AuditorType.HUMAN: SeatPoolConfig(AuditorType.HUMAN, 5, half, 0.30, 0.1, 2.0),
    }


# Default number of segments of each tier in a modeled trace; mirrors the
# auditor distribution of the worked cash-register example document.
DEFAULT_SEGMENT_COUNTS: dict[AuditorType, int] = {
    AuditorType.COMPUTER: 7,
    AuditorType.LLM: 5,
    AuditorType.HUMAN: 2,
}


# ---------------------------------------------------------------------------
# binomial kernels
# ---------------------------------------------------------------------------


def _log_comb(n: int, c: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(c + 1) - math.lgamma(n - c + 1)


def _binomial_pmf(n: int, m: int, p: float) -> float:
    """P[Bin(n, p) = m], switching to log-gamma kernels for large n."""
    if m < 0 or m > n:
        return 0.0
    if p == 0.0:
        return 1.0 if m == 0 else 0.0
    if p == 1.0:
        return 1.0 if m == n else 0.0
    if n <= _LOG_SPACE_THRESHOLD:
        return math.comb(n, m) * p**m * (1.0 - p) ** (n - m)
    log_term = _log_comb(n, m) + m * math.log(p) + (n - m) * math.log1p(-p)
    return math.exp(log_term)


def _binomial_tail(n: int, p: float, threshold: int) -> float:
    """P[Bin(n, p) >= threshold]."""
    if threshold <= 0:
        return 1.0
    if threshold > n:
        return 0.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    if n <= _LOG_SPACE_THRESHOLD:
        total = 0.0
        for c in range(threshold, n + 1):
            total += math.comb(n, c) * p**c * (1.0 - p) ** (n - c)
        return min(1.0, total)
    log_terms = [
        _log_comb(n, c) + c * math.log(p) + (n - c) * math.log1p(-p)
        for c in range(threshold, n + 1)
    ]
    peak = max(log_terms)
    return min(1.0, math.exp(peak) * math.fsum(math.exp(t - peak) for t in log_terms))


def segment_pass_probability(pool: SeatPoolConfig) -> float:
    """Probability that a sound segment collects a quorum of correct votes.

    Conditions on the number of adversarial seats m (who always vote against
    the correct outcome) and asks the remaining k - m honest seats, each
    correct with probability 1 - epsilon, to reach the quorum q on their own.
    """
    k, q = pool.seat_count, pool.quorum
    total = 0.0
    for m in range(k + 1):
        outer = _binomial_pmf(k, m, pool.rho)
        if outer == 0.0:
            continue
        total += outer * _binomial_tail(k - m, 1.0 - pool.epsilon, q)
    return min(1.0, total)


def flawed_segment_pass_probability(pool: SeatPoolConfig) -> float:
    """Probability that a flawed segment still collects a quorum of pass votes.

    Honest seats detect the flaw with probability 1 - epsilon (symmetric
    error), so each approves it with probability epsilon; adversarial seats
    approve it outright, and their votes count toward the pass quorum.
    """
    k, q = pool.seat_count, pool.quorum
    total = 0.0
    for m in range(k + 1):
        outer = _binomial_pmf(k, m, pool.rho)
        if outer == 0.0:
            continue
        total += outer * _binomial_tail(k - m, pool.epsilon, q - m)
    return min(1.0, total)


# ---------------------------------------------------------------------------
# trace aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentVote:
    segment_id: str
    pass_probability: float
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.pass_probability <= 1.0:
            raise ValueError(f"segment {self.segment_id}: pass probability outside [0, 1]")
        if self.weight <= 0.0:
            raise ValueError(f"segment {self.segment_id}: weight must be positive")


@dataclass(frozen=True)
class TraceAggregation:
    """A trace's segment pass probabilities, weights, and acceptance threshold."""

    segments: tuple[SegmentVote, ...]
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("a trace needs at least one segment")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def total_weight(self) -> float:
        return math.fsum(s.weight for s in self.segments)

    @property
    def threshold_weight(self) -> float:
        return self.beta * self.total_weight

    @property
    def mu_vote(self) -> float:
        return math.fsum(s.weight * s.pass_probability for s in self.segments)

    @property
    def sigma_vote_sq(self) -> float:
        return math.fsum(
            s.weight**2 * s.pass_probability * (1.0 - s.pass_probability) for s in self.segments
        )

    @property
    def sigma_max_sq(self) -> float:
        return math.fsum(s.weight**2 for s in self.segments)


def _weight_distribution(segments: Sequence[SegmentVote]) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of W = sum(w_s * B_s) as (values, probabilities)."""
    values = np.zeros(1)
    probs = np.ones(1)
    for seg in segments:
        p = seg.pass_probability
        values = np.concatenate([values, values + seg.weight])
        probs = np.concatenate([probs * (1.0 - p), probs * p])
        order = np.argsort(values, kind="stable")
        values = values[order]
        probs = probs[order]
        if len(values) > 1:
            fresh = np.empty(len(values), dtype=bool)
            fresh[0] = True
            np.greater(np.diff(values), MERGE_TOLERANCE, out=fresh[1:])
            starts = np.flatnonzero(fresh)
            values = values[starts]
            probs = np.add.reduceat(probs, starts)
    return values, probs


def exact_trace_failure(agg: TraceAggregation) -> float:
    """Exact Pr[W < beta * total_weight] by enumeration of the weighted sum.

    Raises TooManySegments beyond the exact cutoff; use
    monte_carlo_trace_failure there instead.
    """
    if len(agg.segments) > MAX_EXACT_SEGMENTS:
        raise TooManySegments(
            f"{len(agg.segments)} segments exceeds the exact cutoff of {MAX_EXACT_SEGMENTS}"
        )
    values, probs = _weight_distribution(agg.segments)
    return float(probs[values < agg.threshold_weight].sum())


def hoeffding_trace_bound(agg: TraceAggregation) -> float:
    """Hoeffding upper bound on Pr[W < beta * total_weight].

    Returns 1.0 (vacuous) when the expected vote weight does not clear the
    threshold; otherwise exp(-2 * gap^2 / sum(w_s^2)), clamped to 1.
    """
    gap = agg.mu_vote - agg.threshold_weight
    if gap <= 0.0:
        return 1.0
    return min(1.0, math.exp(-2.0 * gap * gap / agg.sigma_max_sq))


@dataclass(frozen=True)
class ChernoffBound:
    bound: float
    lambda_star: float


def _chernoff_objective(agg: TraceAggregation, lam: float) -> float:
    total = lam * agg.threshold_weight
    for seg in agg.segments:
        p = seg.pass_probability
        if p >= 1.0:
            total += -lam * seg.weight
        else:
            total += math.log(p * math.exp(-lam * seg.weight) + (1.0 - p))
    return total


def chernoff_trace_bound(agg: TraceAggregation) -> ChernoffBound:
    """Optimized Chernoff bound on Pr[W < beta * total_weight].

    Minimizes lambda * W_beta + sum(log(p_s * exp(-lambda * w_s) + 1 - p_s))
    over lambda > 0 by golden-section search; the objective is convex, and
    the search interval is capped so the inner exponentials stay finite.
    The returned bound is clamped into [0, 1].
    """
    max_weight = max(seg.weight for seg in agg.segments)
    lo, hi = 1e-12, _CHERNOFF_EXP_CAP / max_weight
    invphi = (math.sqrt(5.0) - 1.0) / 2.0

    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _chernoff_objective(agg, c)
    fd = _chernoff_objective(agg, d)
    while b - a > 1e-9:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _chernoff_objective(agg, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _chernoff_objective(agg, d)
    lambda_star = (a + b) / 2.0
    bound = math.exp(_chernoff_objective(agg, lambda_star))
    return ChernoffBound(bound=max(0.0, min(1.0, bound)), lambda_star=lambda_star)


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    n_samples: int


def monte_carlo_trace_failure(
    agg: TraceAggregation, n_samples: int, seed: int
) -> MonteCarloEstimate:
    """Sampling estimate of Pr[W < beta * total_weight] with its standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    weights = np.array([s.weight for s in agg.segments])
    pass_probs = np.array([s.pass_probability for s in agg.segments])
    threshold = agg.threshold_weight

    failures = 0
    remaining = n_samples
    chunk = 1 << 16
    while remaining > 0:
        size = min(chunk, remaining)
        outcomes = rng.random((size, len(weights))) < pass_probs
        totals = outcomes @ weights
        failures += int(np.count_nonzero(totals < threshold))
        remaining -= size
    estimate = failures / n_samples
    stderr = math.sqrt(estimate * (1.0 - estimate) / n_samples)
    return MonteCarloEstimate(estimate=estimate, stderr=stderr, n_samples=n_samples)


@dataclass(frozen=True)
class BoundResult:
    exact: Optional[float]
    hoeffding: float
    chernoff: float
    chernoff_lambda: float


def trace_failure_bounds(agg: TraceAggregation) -> BoundResult:
    """Exact failure probability (when enumerable) next to both tail bounds."""
    exact = None
    if len(agg.segments) <= MAX_EXACT_SEGMENTS:
        exact = exact_trace_failure(agg)
    cb = chernoff_trace_bound(agg)
    return BoundResult(
        exact=exact,
        hoeffding=hoeffding_trace_bound(agg),
        chernoff=cb.bound,
        chernoff_lambda=cb.lambda_star,
    )


# ---------------------------------------------------------------------------
# good-vs-flawed classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassificationCurvePoint:
    beta: float
    tpr: float
    fpr: float
    accuracy: float


def _trace_segments(
    pools: Mapping[AuditorType, SeatPoolConfig],
    segment_counts: Mapping[AuditorType, int],
    flawed_fraction: float,
) -> list[SegmentVote]:
    """Segment pass probabilities for one modeled trace.

    Segments are laid out tier by tier in enum order; the first
    round(flawed_fraction * S) of them are flawed (banker's rounding), the
    rest sound.  flawed_fraction=0 models a fully sound trace.
    """
    ordered: list[tuple[AuditorType, SeatPoolConfig]] = []
    for auditor in AuditorType:
        count = segment_counts.get(auditor, 0)
        if count < 0:
            raise ValueError("segment counts must be nonnegative")
        if count and auditor not in pools:
            raise ValueError(f"no pool configured for {auditor.value}")
        ordered.extend((auditor, pools[auditor]) for _ in range(count))
    if not ordered:
        raise ValueError("segment_counts adds up to zero segments")
    n_flawed = round(flawed_fraction * len(ordered))

    segments = []
    for i, (auditor, pool) in enumerate(ordered):
        if i < n_flawed:
            p = flawed_segment_pass_probability(pool)
        else:
            p = segment_pass_probability(pool)
        segments.append(SegmentVote(f"{auditor.value.lower()}-{i}", p, pool.weight))
    return segments


def classification_curve(
    pools_good: Mapping[AuditorType, SeatPoolConfig],
    pools_bad: Mapping[AuditorType, SeatPoolConfig],
    betas: Sequence[float],
    prior_good: float = 0.5,
    segment_counts: Optional[Mapping[AuditorType, int]] = None,
    flawed_fraction: float = 1.0,
) -> list[ClassificationCurvePoint]:
    """Sweep the acceptance threshold and report TPR, FPR, and accuracy.

    The good-trace model evaluates every segment as sound under pools_good;
    the bad-trace model marks a flawed_fraction of segments flawed under
    pools_bad.  Both are evaluated exactly through the weighted-sum
    distribution: TPR(beta) = Pr[W >= W_beta | good] and FPR(beta) the same
    under the bad model.  Accuracy mixes the two by prior_good.
    """
    if not 0.0 <= prior_good <= 1.0:
        raise ValueError("prior_good must lie in [0, 1]")
    if not 0.0 <= flawed_fraction <= 1.0:
        raise ValueError("flawed_fraction must lie in [0, 1]")
    if segment_counts is None:
        segment_counts = DEFAULT_SEGMENT_COUNTS

    good_segments = _trace_segments(pools_good, segment_counts, 0.0)
    bad_segments = _trace_segments(pools_bad, segment_counts, flawed_fraction)
    if len(good_segments) > MAX_EXACT_SEGMENTS:
        raise TooManySegments(
            f"{len(good_segments)} segments exceeds the exact cutoff of {MAX_EXACT_SEGMENTS}"
        )

    good_values, good_probs = _weight_distribution(good_segments)
    bad_values, bad_probs = _weight_distribution(bad_segments)
    good_total = math.fsum(s.weight for s in good_segments)
    bad_total = math.fsum(s.weight for s in bad_segments)

    points = []
    for beta in betas:
        if not 0.0 < beta < 1.0:
            raise ValueError("beta values must lie in (0, 1)")
        tpr = float(good_probs[good_values >= beta * good_total].sum())
        fpr = float(bad_probs[bad_values >= beta * bad_total].sum())
        accuracy = prior_good * tpr + (1.0 - prior_good) * (1.0 - fpr)
        points.append(ClassificationCurvePoint(beta=beta, tpr=tpr, fpr=fpr, accuracy=accuracy))
    return points
