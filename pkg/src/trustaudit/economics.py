"""Staking incentives for human audit seats.

A seat earns a fixed reward for each correct vote.  An incorrect vote is
slashed with a probability that climbs as the seat's reputation falls, so a
track record is worth money.  Reputation itself is an exponential moving
average of correctness.  The calculators here give exact per-segment payoff
moments, the two deployment dial checks (an economic one on reward versus
penalty, a statistical one on the vote margin), and Bernstein-style tail
bounds on cumulative payoff over a Poisson-distributed audit horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .consensus import TraceAggregation


class DialViolated(ValueError):
    """A tail bound was requested for a parameter set that voids it."""


class InvalidTarget(ValueError):
    """The statistical dial's failure target is unusable."""


@dataclass(frozen=True)
class EconParams:
    """Stake economics for one deployment.

    deterrence_margin is the required minimum expected per-segment loss of a
    cheating seat, expressed as a fraction of the penalty.  arrival_rate and
    horizon_hours set the audit load: their product is the expected number
    of segments a seat handles over the horizon.  payoff_range_override
    replaces the default per-segment payoff range (the reward) inside the
    Bernstein denominators.
    """

    reward: float
    penalty: float
    slash_min: float
    slash_max: float
    reputation_step: float
    honest_error: float
    deterrence_margin: float
    arrival_rate: float
    horizon_hours: float
    payoff_range_override: Optional[float] = None

    def __post_init__(self):
        if self.reward <= 0 or self.penalty <= 0:
            raise ValueError("reward and penalty must be positive")
        if not 0.0 <= self.slash_min <= self.slash_max <= 1.0:
            raise ValueError("need 0 <= slash_min <= slash_max <= 1")
        if not 0.0 < self.reputation_step <= 1.0:
            raise ValueError("reputation_step must lie in (0, 1]")
        if not 0.0 <= self.honest_error < 1.0:
            raise ValueError("honest_error must lie in [0, 1)")
        if not 0.0 < self.deterrence_margin <= 1.0:
            raise ValueError("deterrence_margin must lie in (0, 1]")
        if self.arrival_rate <= 0 or self.horizon_hours <= 0:
            raise ValueError("arrival_rate and horizon_hours must be positive")
        if self.payoff_range_override is not None and self.payoff_range_override <= 0:
            raise ValueError("payoff_range_override must be positive")

    @property
    def expected_segments(self) -> float:
        return self.arrival_rate * self.horizon_hours

    @property
    def payoff_range(self) -> float:
        """Per-segment payoff increment bound used by the Bernstein tails."""
        if self.payoff_range_override is not None:
            return self.payoff_range_override
        return self.reward


def update_reputation(reputation: float, correct: bool, step: float) -> float:
    """Exponential moving average of correctness: one observation folded in."""
    if not 0.0 < step <= 1.0:
        raise ValueError("step must lie in (0, 1]")
    return (1.0 - step) * reputation + (step if correct else 0.0)


def slash_probability(reputation: float, params: EconParams) -> float:
    """Detection-conditional slash probability; low reputation pays more."""
    return params.slash_min + (params.slash_max - params.slash_min) * (1.0 - reputation)


def expected_payoff(reputation: float, params: EconParams) -> float:
    """Mean per-segment payoff of an honest seat at a fixed reputation."""
    eps = params.honest_error
    return (1.0 - eps) * params.reward - eps * params.penalty * slash_probability(reputation, params)


def payoff_variance(reputation: float, params: EconParams) -> float:
    """Per-segment payoff variance of an honest seat at a fixed reputation."""
    eps = params.honest_error
    p_slash = slash_probability(reputation, params)
    second_moment = (1.0 - eps) * params.reward**2 + eps * p_slash * params.penalty**2
    return second_moment - expected_payoff(reputation, params) ** 2


def malicious_expected_payoff(reputation: float, params: EconParams) -> float:
    """Mean per-segment payoff of an always-wrong seat at a fixed reputation."""
    return -params.penalty * slash_probability(reputation, params)


def malicious_payoff_variance(reputation: float, params: EconParams) -> float:
    p_slash = slash_probability(reputation, params)
    return p_slash * params.penalty**2 - (p_slash * params.penalty) ** 2


def worst_case_variance(params: EconParams) -> float:
    """Supremum of the honest payoff variance over the reputation range.

    The variance is monotone in the slash probability for most parameter
    sets, but not all, so both endpoints and a 1e-3 grid are evaluated.
    """
    grid = np.linspace(0.0, 1.0, 1001)
    eps = params.honest_error
    p_slash = params.slash_min + (params.slash_max - params.slash_min) * (1.0 - grid)
    mean = (1.0 - eps) * params.reward - eps * params.penalty * p_slash
    second = (1.0 - eps) * params.reward**2 + eps * p_slash * params.penalty**2
    return float(np.max(second - mean**2))


# ---------------------------------------------------------------------------
# deployment dials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EconomicDialCheck:
    """Reward-versus-penalty conditions that make honesty the best policy.

    reward_ok: the reward beats the honest seat's expected slash exposure.
    pmin_ok: the slash floor is high enough that even a perfect-reputation
    cheater keeps losing at the required deterrence margin.
    """

    reward_ok: bool
    reward_lhs: float
    reward_rhs: float
    alpha: float
    pmin_ok: bool
    pmin_lhs: float
    pmin_rhs: float


def check_economic_dial(params: EconParams) -> EconomicDialCheck:
    eps = params.honest_error
    reward_rhs = eps / (1.0 - eps) * params.penalty * params.slash_max
    stake_exposure = params.penalty * params.slash_max
    alpha = stake_exposure / (params.reward + stake_exposure)
    pmin_rhs = params.deterrence_margin / (1.0 - alpha)
    return EconomicDialCheck(
        reward_ok=params.reward > reward_rhs,
        reward_lhs=params.reward,
        reward_rhs=reward_rhs,
        alpha=alpha,
        pmin_ok=params.slash_min >= pmin_rhs,
        pmin_lhs=params.slash_min,
        pmin_rhs=pmin_rhs,
    )


@dataclass(frozen=True)
class StatisticalDialCheck:
    ok: bool
    lhs: float
    rhs: float


def check_statistical_dial(
    agg: TraceAggregation, params: EconParams, epsilon_target: float
) -> StatisticalDialCheck:
    """Does the expected vote weight clear the threshold by a safe margin?

    The margin required is sqrt(0.5 * sigma_vote^2 * ln(lambda*T / target)),
    sized so the union over an expected lambda*T trace decisions stays under
    the target failure probability.
    """
    if epsilon_target <= 0.0:
        raise InvalidTarget("epsilon_target must be positive")
    if params.expected_segments <= epsilon_target:
        raise InvalidTarget("expected segment count must exceed epsilon_target")
    lhs = agg.mu_vote - agg.threshold_weight
    rhs = math.sqrt(0.5 * agg.sigma_vote_sq * math.log(params.expected_segments / epsilon_target))
    return StatisticalDialCheck(ok=lhs >= rhs, lhs=lhs, rhs=rhs)


# ---------------------------------------------------------------------------
# tail bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailBound:
    exponent: float
    bound: float


@dataclass(frozen=True)
class MaliciousTailBound:
    exponent: float
    bound: float
    mean_upper: float


def honest_tail_bound(params: EconParams) -> TailBound:
    """Bernstein bound on an honest seat ending the horizon in the red.

    Uses the worst-case per-segment mean (zero reputation) and variance, so
    it holds along any reputation trajectory.  Raises DialViolated when the
    worst-case mean payoff is not positive, since then no such guarantee
    exists.
    """
    mu_min = expected_payoff(0.0, params)
    if mu_min <= 0.0:
        raise DialViolated(
            f"worst-case honest payoff {mu_min:.6g} is not positive; raise the reward "
            "or cut the slash exposure"
        )
    sigma_sq = worst_case_variance(params)
    window = params.expected_segments
    exponent = window * mu_min**2 / (2.0 * sigma_sq + (2.0 / 3.0) * params.payoff_range * mu_min)
    return TailBound(exponent=exponent, bound=math.exp(-exponent))


def malicious_tail_bound(params: EconParams) -> MaliciousTailBound:
    """Bernstein bound on an always-wrong seat ending the horizon profitable.

    The per-segment loss floor is deterrence_margin * penalty (valid once the
    economic dial's pmin condition holds).  mean_upper is the corresponding
    upper bound on the cheater's expected cumulative payoff.
    """
    loss_floor = params.deterrence_margin * params.penalty
    sigma_sq = worst_case_variance(params)
    window = params.expected_segments
    exponent = window * loss_floor**2 / (
        2.0 * sigma_sq + (2.0 / 3.0) * params.payoff_range * loss_floor
    )
    return MaliciousTailBound(
        exponent=exponent,
        bound=math.exp(-exponent),
        mean_upper=-window * loss_floor,
    )


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GuaranteeReport:
    """Everything a deployment review needs on one page."""

    mu_min: float
    sigma_H_sq: float
    b: float
    alpha: float
    e1_reward_ok: bool
    e1_reward_lhs: float
    e1_reward_rhs: float
    e1_pmin_ok: bool
    e1_pmin_lhs: float
    e1_pmin_rhs: float
    s1_ok: Optional[bool]
    s1_lhs: Optional[float]
    s1_rhs: Optional[float]
    honest_tail_exponent: float
    honest_tail_bound: float
    malicious_tail_exponent: float
    malicious_tail_bound: float
    malicious_mean_upper: float

    def to_dict(self) -> dict:
        return {
            "mu_min": self.mu_min,
            "sigma_H_sq": self.sigma_H_sq,
            "b": self.b,
            "alpha": self.alpha,
            "e1_reward_ok": self.e1_reward_ok,
            "e1_reward_lhs": self.e1_reward_lhs,
            "e1_reward_rhs": self.e1_reward_rhs,
            "e1_pmin_ok": self.e1_pmin_ok,
            "e1_pmin_lhs": self.e1_pmin_lhs,
            "e1_pmin_rhs": self.e1_pmin_rhs,
            "s1_ok": self.s1_ok,
            "s1_lhs": self.s1_lhs,
            "s1_rhs": self.s1_rhs,
            "honest_tail_exponent": self.honest_tail_exponent,
            "honest_tail_bound": self.honest_tail_bound,
            "malicious_tail_exponent": self.malicious_tail_exponent,
            "malicious_tail_bound": self.malicious_tail_bound,
            "malicious_mean_upper": self.malicious_mean_upper,
        }


def build_guarantee_report(
    params: EconParams,
    agg: Optional[TraceAggregation] = None,
    epsilon_target: Optional[float] = None,
) -> GuaranteeReport:
    """Assemble dial checks and tail bounds into one report.

    The statistical dial needs a concrete trace aggregation and a failure
    target; when either is missing those fields come back as None.
    """
    econ = check_economic_dial(params)
    honest = honest_tail_bound(params)
    malicious = malicious_tail_bound(params)

    s1_ok = s1_lhs = s1_rhs = None
    if agg is not None and epsilon_target is not None:
        stat = check_statistical_dial(agg, params, epsilon_target)
        s1_ok, s1_lhs, s1_rhs = stat.ok, stat.lhs, stat.rhs

    return GuaranteeReport(
        mu_min=expected_payoff(0.0, params),
        sigma_H_sq=worst_case_variance(params),
        b=params.payoff_range,
        alpha=econ.alpha,
        e1_reward_ok=econ.reward_ok,
        e1_reward_lhs=econ.reward_lhs,
        e1_reward_rhs=econ.reward_rhs,
        e1_pmin_ok=econ.pmin_ok,
        e1_pmin_lhs=econ.pmin_lhs,
        e1_pmin_rhs=econ.pmin_rhs,
        s1_ok=s1_ok,
        s1_lhs=s1_lhs,
        s1_rhs=s1_rhs,
        honest_tail_exponent=honest.exponent,
        honest_tail_bound=honest.bound,
        malicious_tail_exponent=malicious.exponent,
        malicious_tail_bound=malicious.bound,
        malicious_mean_upper=malicious.mean_upper,
    )


def sample_payoffs(
    reputation: float, params: EconParams, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw iid per-segment payoffs of an honest seat at a fixed reputation."""
    correct = rng.random(n_samples) < (1.0 - params.honest_error)
    slashed = rng.random(n_samples) < slash_probability(reputation, params)
    payoffs = np.where(correct, params.reward, np.where(slashed, -params.penalty, 0.0))
    return payoffs
