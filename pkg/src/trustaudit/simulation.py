"""Monte Carlo harness for auditor populations and consensus strategies.

Simulates synthetic auditor rosters voting on streams of reasoning
traces: behavior models (honest with an error rate, malicious, random
guesser, rubber stamp), vote corruption, per-seat reputation and payoff
trajectories, honeypot-based free-rider detection, and head-to-head
comparisons of trace-decision strategies.

Two settlement engines share one vote sampler.  The ``protocol`` engine
drives every trace through a full commit-reveal session and settles on
the hash-chained ledger; it is the reference semantics.  The
``vectorized`` engine computes identical verdicts and identical
reputation trajectories with array arithmetic and is orders of
magnitude faster, which long horizons with many replicas require.
Given the same seed both engines see the same sampled votes, because
vote sampling and engine-internal randomness (slash draws, nonces) come
from separate replica streams.

Randomness is drawn from counter-based per-replica streams seeded with
(master seed, replica index, purpose), so replicas are order
independent and safe to run in parallel.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .consensus import (
    DEFAULT_SEGMENT_COUNTS,
    AuditorType,
    SeatPoolConfig,
    ceil_quorum,
    default_pools,
)
from .economics import EconParams
from .hdag import SeatAssignment
from .protocol import (
    Ledger,
    Vote,
    aggregate,
    begin_reveal,
    commit_vote,
    create_session,
    make_commitment,
    reveal_vote,
    settle,
)

__all__ = [
    "HONEYPOT_TIERS",
    "AuditorProfile",
    "Behavior",
    "BehaviorKind",
    "HoneypotStats",
    "InsufficientData",
    "ReplicaOutcome",
    "SimulationConfig",
    "SimulationReport",
    "StrategyResult",
    "TruthModel",
    "STRATEGY_NAMES",
    "compare_strategies",
    "detect_rubber_stamps",
    "inject_corruption",
    "run_simulation",
]

HONEYPOT_TIERS = ("obvious", "subtle", "domain")

_DEFAULT_TIER_MIX = {"obvious": 0.4, "subtle": 0.4, "domain": 0.2}
_DEFAULT_TIER_FACTORS = {"obvious": 1.0, "subtle": 0.8, "domain": 0.6}

STRATEGY_NAMES = (
    "trust_weighted",
    "majority",
    "supermajority",
    "weighted",
    "unanimous",
    "single_auditor",
)


class InsufficientData(ValueError):
    """A seat has seen too few honeypots to judge its behavior."""


# ---------------------------------------------------------------------------
# behaviors and population
# ---------------------------------------------------------------------------


class BehaviorKind(Enum):
    HONEST = "honest"
    MALICIOUS = "malicious"
    RANDOM_GUESSER = "random_guesser"
    RUBBER_STAMP = "rubber_stamp"


@dataclass(frozen=True)
class Behavior:
    """How a seat votes given a segment's hidden ground truth.

    Honest seats vote correctly except with probability ``error_rate``;
    malicious seats always vote wrong; random guessers approve with
    probability ``pass_rate`` regardless of truth; rubber stamps
    approve everything.
    """

    kind: BehaviorKind
    error_rate: float = 0.0
    pass_rate: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        if not 0.0 <= self.pass_rate <= 1.0:
            raise ValueError("pass_rate must lie in [0, 1]")

    @classmethod
    def honest(cls, error_rate: float) -> "Behavior":
        return cls(BehaviorKind.HONEST, error_rate=error_rate)

    @classmethod
    def malicious(cls) -> "Behavior":
        return cls(BehaviorKind.MALICIOUS)

    @classmethod
    def random_guesser(cls, pass_rate: float = 0.5) -> "Behavior":
        return cls(BehaviorKind.RANDOM_GUESSER, pass_rate=pass_rate)

    @classmethod
    def rubber_stamp(cls) -> "Behavior":
        return cls(BehaviorKind.RUBBER_STAMP)

    @property
    def label(self) -> str:
        if self.kind is BehaviorKind.HONEST:
            return f"honest({self.error_rate:g})"
        if self.kind is BehaviorKind.RANDOM_GUESSER:
            return f"random_guesser({self.pass_rate:g})"
        return self.kind.value


@dataclass
class AuditorProfile:
    """One tracked seat: identity, behavior, and running account state."""

    seat_id: str
    behavior: Behavior
    reputation: float = 0.0
    cumulative_payoff: float = 0.0


@dataclass(frozen=True)
class TruthModel:
    """Ground-truth generator: share of good traces and, within a bad
    trace, the share of its segments that are actually flawed."""

    good_fraction: float = 1.0
    flawed_segment_fraction: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.good_fraction <= 1.0:
            raise ValueError("good_fraction must lie in [0, 1]")
        if not 0.0 < self.flawed_segment_fraction <= 1.0:
            raise ValueError("flawed_segment_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything one simulation run depends on.

    ``horizon_segments`` counts the human-tier segments each tracked
    auditor votes on; when None, each replica draws it from a Poisson
    distribution with the economic parameters' expected segment count.
    Traces are assembled from ``segment_counts`` worth of segments,
    with machine tiers seated by ephemeral honest voters at their
    pool's error rate and every human segment seated by the full
    tracked roster.
    """

    econ: EconParams
    population_mix: Mapping[Behavior, float]
    population_size: int = 20
    pools: Mapping[AuditorType, SeatPoolConfig] = field(default_factory=default_pools)
    segment_counts: Mapping[AuditorType, int] = field(
        default_factory=lambda: dict(DEFAULT_SEGMENT_COUNTS)
    )
    truth_model: TruthModel = field(default_factory=TruthModel)
    beta: float = 0.5
    initial_reputation: float = 0.0
    corruption_rate: float = 0.0
    honeypot_rate: float = 0.05
    honeypot_tier_mix: Mapping[str, float] = field(
        default_factory=lambda: dict(_DEFAULT_TIER_MIX)
    )
    honeypot_detection_factors: Mapping[str, float] = field(
        default_factory=lambda: dict(_DEFAULT_TIER_FACTORS)
    )
    replicas: int = 100
    seed: int = 0
    horizon_segments: Optional[int] = None
    engine: str = "protocol"
    record_trajectories: bool = True
    single_auditor_error: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(self, "population_mix", dict(self.population_mix))
        object.__setattr__(self, "pools", dict(self.pools))
        object.__setattr__(self, "segment_counts", dict(self.segment_counts))
        object.__setattr__(self, "honeypot_tier_mix", dict(self.honeypot_tier_mix))
        object.__setattr__(
            self, "honeypot_detection_factors", dict(self.honeypot_detection_factors)
        )
        if not self.population_mix:
            raise ValueError("population_mix must not be empty")
        if any(f < 0 for f in self.population_mix.values()):
            raise ValueError("population fractions must be non-negative")
        if abs(sum(self.population_mix.values()) - 1.0) > 1e-9:
            raise ValueError("population fractions must sum to 1")
        if self.population_size < 1:
            raise ValueError("population_size must be at least 1")
        if not 0.0 <= self.corruption_rate <= 0.5:
            raise ValueError("corruption_rate must lie in [0, 0.5]")
        if not 0.0 <= self.honeypot_rate <= 1.0:
            raise ValueError("honeypot_rate must lie in [0, 1]")
        if set(self.honeypot_tier_mix) != set(HONEYPOT_TIERS):
            raise ValueError(f"honeypot_tier_mix must cover exactly {HONEYPOT_TIERS}")
        if abs(sum(self.honeypot_tier_mix.values()) - 1.0) > 1e-9:
            raise ValueError("honeypot tier fractions must sum to 1")
        if set(self.honeypot_detection_factors) != set(HONEYPOT_TIERS):
            raise ValueError("detection factors must cover every honeypot tier")
        if any(not 0.0 <= f <= 1.0 for f in self.honeypot_detection_factors.values()):
            raise ValueError("detection factors must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.initial_reputation <= 1.0:
            raise ValueError("initial_reputation must lie in [0, 1]")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if self.horizon_segments is not None and self.horizon_segments < 1:
            raise ValueError("horizon_segments must be at least 1 when fixed")
        if self.engine not in ("protocol", "vectorized"):
            raise ValueError("engine must be 'protocol' or 'vectorized'")
        if not 0.0 <= self.single_auditor_error <= 1.0:
            raise ValueError("single_auditor_error must lie in [0, 1]")
        counts = self.segment_counts
        if any(c < 0 for c in counts.values()):
            raise ValueError("segment counts must be non-negative")
        if counts.get(AuditorType.HUMAN, 0) < 1:
            raise ValueError("each trace needs at least one human-tier segment")
        for tier, count in counts.items():
            if count > 0 and tier not in self.pools:
                raise ValueError(f"no pool configured for tier {tier.value}")

    def population_counts(self) -> dict[Behavior, int]:
        """Integer head-counts from the mix, by largest remainder."""
        quotas = {
            b: f * self.population_size for b, f in self.population_mix.items()
        }
        counts = {b: int(math.floor(q)) for b, q in quotas.items()}
        short = self.population_size - sum(counts.values())
        leftovers = sorted(
            quotas, key=lambda b: (counts[b] - quotas[b], b.label)
        )
        for b in leftovers[:short]:
            counts[b] += 1
        return counts

    def roster(self) -> list[AuditorProfile]:
        profiles = []
        for behavior, count in self.population_counts().items():
            for _ in range(count):
                profiles.append(
                    AuditorProfile(
                        seat_id=f"{behavior.label}-{len(profiles):02d}",
                        behavior=behavior,
                        reputation=self.initial_reputation,
                    )
                )
        return profiles


# ---------------------------------------------------------------------------
# corruption injection
# ---------------------------------------------------------------------------


def inject_corruption(
    votes: Sequence[bool] | np.ndarray,
    rate: float,
    seed: Union[int, np.random.Generator],
) -> np.ndarray:
    """Flip an exact share of votes, uniformly chosen without replacement.

    The flip count is rate times the vote count rounded half to even,
    and the selection is deterministic given the seed, so applying the
    same seed twice restores the original votes.
    """
    if not 0.0 <= rate <= 0.5:
        raise ValueError("corruption rate must lie in [0, 0.5]")
    arr = np.array(votes, dtype=bool, copy=True)
    n_flips = round(rate * arr.size)
    if n_flips == 0:
        return arr
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = rng.choice(arr.size, size=n_flips, replace=False)
    flat = arr.reshape(-1)
    flat[chosen] = ~flat[chosen]
    return arr


# ---------------------------------------------------------------------------
# shared vote sampling
# ---------------------------------------------------------------------------


@dataclass
class _ReplicaDraw:
    """One replica's sampled world: truths, honeypots, and final votes."""

    n_traces: int
    human_counts: np.ndarray  # human segments per trace
    human_offsets: np.ndarray  # first human-segment row of each trace
    trace_good: np.ndarray
    truth_c: np.ndarray
    truth_l: np.ndarray
    truth_h: np.ndarray
    votes_c: np.ndarray  # (n_c,) single computer seat per segment
    votes_l: np.ndarray  # (n_l, k_l)
    votes_h: np.ndarray  # (n_h, roster size)
    honeypot_tier: np.ndarray  # (n_h,) tier index, -1 where organic


def _behavior_votes(
    behavior: Behavior,
    truth: np.ndarray,
    detect_factor: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample one profile's votes for every human segment."""
    u = rng.random(truth.size)
    if behavior.kind is BehaviorKind.HONEST:
        correct = u < (1.0 - behavior.error_rate) * detect_factor
        return truth == correct
    if behavior.kind is BehaviorKind.MALICIOUS:
        return ~truth
    if behavior.kind is BehaviorKind.RANDOM_GUESSER:
        return u < behavior.pass_rate
    return np.ones(truth.size, dtype=bool)  # rubber stamp


def _sample_replica(config: SimulationConfig, rng: np.random.Generator) -> _ReplicaDraw:
    """Draw truths, honeypots, votes, and corruption for one replica.

    The draw order is fixed (horizon, trace goodness, flaw placement,
    honeypots, machine votes, human votes per profile, corruption), so
    a seed pins the entire sampled world regardless of engine.

    Honeypots flip individual human-segment truths but leave the
    trace-level goodness label alone: a planted flaw tests seats, and
    the operator who planted it would not call the trace defective for
    containing it.  Accuracy is therefore always scored against the
    organic trace label.
    """
    counts = config.segment_counts
    n_c_per = counts.get(AuditorType.COMPUTER, 0)
    n_l_per = counts.get(AuditorType.LLM, 0)
    n_h_per = counts[AuditorType.HUMAN]

    if config.horizon_segments is not None:
        n_h = config.horizon_segments
    else:
        n_h = max(1, int(rng.poisson(config.econ.expected_segments)))

    n_traces = -(-n_h // n_h_per)
    human_counts = np.full(n_traces, n_h_per, dtype=np.int64)
    human_counts[-1] = n_h - n_h_per * (n_traces - 1)
    human_offsets = np.concatenate(([0], np.cumsum(human_counts)[:-1]))

    n_c = n_c_per * n_traces
    n_l = n_l_per * n_traces

    trace_good = rng.random(n_traces) < config.truth_model.good_fraction
    truth_c = np.ones(n_c, dtype=bool)
    truth_l = np.ones(n_l, dtype=bool)
    truth_h = np.ones(n_h, dtype=bool)

    phi = config.truth_model.flawed_segment_fraction
    for t in np.flatnonzero(~trace_good):
        s_total = n_c_per + n_l_per + int(human_counts[t])
        n_flawed = max(1, round(phi * s_total))
        positions = rng.choice(s_total, size=n_flawed, replace=False)
        for pos in positions:
            if pos < n_c_per:
                truth_c[t * n_c_per + pos] = False
            elif pos < n_c_per + n_l_per:
                truth_l[t * n_l_per + (pos - n_c_per)] = False
            else:
                truth_h[int(human_offsets[t]) + (pos - n_c_per - n_l_per)] = False

    # Honeypots are injected flaws on human segments with a known
    # difficulty tier; they override whatever truth was there.
    honeypot_tier = np.full(n_h, -1, dtype=np.int64)
    if config.honeypot_rate > 0.0:
        hp_mask = rng.random(n_h) < config.honeypot_rate
        n_hp = int(hp_mask.sum())
        if n_hp:
            mix = np.array([config.honeypot_tier_mix[t] for t in HONEYPOT_TIERS])
            honeypot_tier[hp_mask] = rng.choice(len(HONEYPOT_TIERS), size=n_hp, p=mix)
            truth_h[hp_mask] = False

    factors = np.ones(n_h)
    for i, tier in enumerate(HONEYPOT_TIERS):
        factors[honeypot_tier == i] = config.honeypot_detection_factors[tier]

    eps_c = config.pools[AuditorType.COMPUTER].epsilon if n_c else 0.0
    votes_c = truth_c ^ (rng.random(n_c) < eps_c)
    k_l = config.pools[AuditorType.LLM].seat_count if n_l else 1
    eps_l = config.pools[AuditorType.LLM].epsilon if n_l else 0.0
    votes_l = truth_l[:, None] ^ (rng.random((n_l, k_l)) < eps_l)

    profiles = config.roster()
    votes_h = np.empty((n_h, len(profiles)), dtype=bool)
    for j, profile in enumerate(profiles):
        votes_h[:, j] = _behavior_votes(profile.behavior, truth_h, factors, rng)

    if config.corruption_rate > 0.0:
        stacked = np.concatenate(
            [votes_c.reshape(-1), votes_l.reshape(-1), votes_h.reshape(-1)]
        )
        stacked = inject_corruption(stacked, config.corruption_rate, rng)
        votes_c = stacked[:n_c].reshape(votes_c.shape)
        votes_l = stacked[n_c : n_c + votes_l.size].reshape(votes_l.shape)
        votes_h = stacked[n_c + votes_l.size :].reshape(votes_h.shape)

    return _ReplicaDraw(
        n_traces=n_traces,
        human_counts=human_counts,
        human_offsets=human_offsets,
        trace_good=trace_good,
        truth_c=truth_c,
        truth_l=truth_l,
        truth_h=truth_h,
        votes_c=votes_c,
        votes_l=votes_l,
        votes_h=votes_h,
        honeypot_tier=honeypot_tier,
    )


def _trace_verdicts(config: SimulationConfig, draw: _ReplicaDraw) -> np.ndarray:
    """Quorum every segment, then weigh passing segments per trace."""
    counts = config.segment_counts
    n_c_per = counts.get(AuditorType.COMPUTER, 0)
    n_l_per = counts.get(AuditorType.LLM, 0)
    roster_size = draw.votes_h.shape[1]

    weight = np.zeros(draw.n_traces)
    total = np.zeros(draw.n_traces)

    if n_c_per:
        pool = config.pools[AuditorType.COMPUTER]
        q = ceil_quorum(1, pool.tau)
        pass_c = draw.votes_c.astype(np.int64) >= q
        weight += pass_c.reshape(draw.n_traces, n_c_per).sum(axis=1) * pool.weight
        total += n_c_per * pool.weight
    if n_l_per:
        pool = config.pools[AuditorType.LLM]
        q = ceil_quorum(pool.seat_count, pool.tau)
        pass_l = draw.votes_l.sum(axis=1) >= q
        weight += pass_l.reshape(draw.n_traces, n_l_per).sum(axis=1) * pool.weight
        total += n_l_per * pool.weight

    pool_h = config.pools[AuditorType.HUMAN]
    q_h = ceil_quorum(roster_size, pool_h.tau)
    pass_h = draw.votes_h.sum(axis=1) >= q_h
    boundaries = draw.human_offsets
    weight += np.add.reduceat(pass_h.astype(np.int64), boundaries) * pool_h.weight
    total += draw.human_counts * pool_h.weight

    return weight >= config.beta * total


def _segment_pass_h(config: SimulationConfig, draw: _ReplicaDraw) -> np.ndarray:
    pool_h = config.pools[AuditorType.HUMAN]
    q_h = ceil_quorum(draw.votes_h.shape[1], pool_h.tau)
    return draw.votes_h.sum(axis=1) >= q_h


# ---------------------------------------------------------------------------
# honeypot bookkeeping and rubber-stamp detection
# ---------------------------------------------------------------------------


@dataclass
class HoneypotStats:
    """One seat's record against injected known-flawed segments."""

    seat_id: str
    seen: int = 0
    detected: int = 0
    tier_seen: dict[str, int] = field(default_factory=dict)
    tier_approved: dict[str, int] = field(default_factory=dict)

    @property
    def detection_rate(self) -> float:
        return self.detected / self.seen if self.seen else 0.0

    @property
    def approval_spread(self) -> float:
        """Gap between the most and least approved difficulty tiers."""
        rates = [
            self.tier_approved.get(t, 0) / n
            for t, n in self.tier_seen.items()
            if n > 0
        ]
        if not rates:
            return 0.0
        return max(rates) - min(rates)

    def merge(self, other: "HoneypotStats") -> None:
        self.seen += other.seen
        self.detected += other.detected
        for t, n in other.tier_seen.items():
            self.tier_seen[t] = self.tier_seen.get(t, 0) + n
        for t, n in other.tier_approved.items():
            self.tier_approved[t] = self.tier_approved.get(t, 0) + n


def _honeypot_stats(
    profiles: Sequence[AuditorProfile], draw: _ReplicaDraw
) -> dict[str, HoneypotStats]:
    stats: dict[str, HoneypotStats] = {}
    hp_rows = np.flatnonzero(draw.honeypot_tier >= 0)
    for j, profile in enumerate(profiles):
        entry = HoneypotStats(seat_id=profile.seat_id)
        entry.seen = hp_rows.size
        if hp_rows.size:
            votes = draw.votes_h[hp_rows, j]
            entry.detected = int((~votes).sum())
            tiers = draw.honeypot_tier[hp_rows]
            for i, tier in enumerate(HONEYPOT_TIERS):
                in_tier = tiers == i
                entry.tier_seen[tier] = int(in_tier.sum())
                entry.tier_approved[tier] = int(votes[in_tier].sum())
        stats[profile.seat_id] = entry
    return stats


def detect_rubber_stamps(
    stats: Union["SimulationReport", Mapping[str, HoneypotStats], Iterable[HoneypotStats]],
    approval_threshold: float = 0.3,
    difficulty_sensitivity: float = 0.15,
) -> frozenset[str]:
    """Flag seats whose honeypot record looks like blanket approval.

    A seat is flagged when it detects fewer than ``approval_threshold``
    of its honeypots and its approval rate barely moves across
    difficulty tiers (spread below ``difficulty_sensitivity``).  Honest
    seats escape on both counts: they catch most honeypots, and what
    they miss skews strongly toward the harder tiers.  Raises
    InsufficientData when any seat has seen fewer than 10 honeypots.
    """
    entries = _coerce_stats(stats)
    thin = sorted(s.seat_id for s in entries if s.seen < 10)
    if thin:
        raise InsufficientData(
            f"seats with fewer than 10 honeypots seen: {', '.join(thin)}"
        )
    flagged = {
        s.seat_id
        for s in entries
        if s.detection_rate < approval_threshold
        and s.approval_spread < difficulty_sensitivity
    }
    return frozenset(flagged)


def _coerce_stats(stats) -> list[HoneypotStats]:
    if isinstance(stats, SimulationReport):
        return list(stats.pooled_honeypot_stats().values())
    if isinstance(stats, Mapping):
        return list(stats.values())
    return list(stats)


# ---------------------------------------------------------------------------
# settlement engines
# ---------------------------------------------------------------------------


def _reputation_paths(
    correct: np.ndarray, step: float, initial: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-profile reputation after each segment, plus the pre-update view.

    The recursion r' = (1-step) r + step hit is a first-order linear
    filter; evaluating it with lfilter reproduces the scalar update
    bit for bit.
    """
    x = correct.astype(np.float64)
    b = np.array([step])
    a = np.array([1.0, -(1.0 - step)])
    zi = np.full((1, correct.shape[1]), (1.0 - step) * initial)
    after, _ = lfilter(b, a, x, axis=0, zi=zi)
    before = np.vstack([np.full((1, correct.shape[1]), initial), after[:-1]])
    return after, before


def _settle_vectorized(
    config: SimulationConfig,
    profiles: Sequence[AuditorProfile],
    draw: _ReplicaDraw,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reputation and payoff trajectories for the tracked roster.

    Returns (reputation_after, payoff, cumulative_payoff) arrays of
    shape (human segments, roster size).
    """
    econ = config.econ
    correct = draw.votes_h == draw.truth_h[:, None]
    rep_after, rep_before = _reputation_paths(
        correct, econ.reputation_step, config.initial_reputation
    )
    p_slash = econ.slash_min + (econ.slash_max - econ.slash_min) * (1.0 - rep_before)
    draws = rng.random(correct.shape)
    payoff = np.where(
        correct, econ.reward, np.where(draws < p_slash, -econ.penalty, 0.0)
    )
    return rep_after, payoff, np.cumsum(payoff, axis=0)


class _RosterReputations(dict):
    """Seat-keyed reputation mapping that aliases human seats to profiles.

    The protocol settle loop updates reputations per session seat id;
    aliasing human seats onto roster slots makes consecutive segments
    in one session read each other's updates, matching the sequential
    semantics of the vectorized engine.  Machine seats fall through to
    ordinary dict entries.
    """

    def __init__(self, profiles: Sequence[AuditorProfile]):
        super().__init__()
        self._profiles = profiles
        self._alias: dict[str, int] = {}

    def alias_human_segment(self, segment_id: str) -> None:
        for j in range(len(self._profiles)):
            self._alias[f"{segment_id}:{j}"] = j

    def __missing__(self, seat_id: str):
        j = self._alias.get(seat_id)
        if j is None:
            raise KeyError(seat_id)
        return self._profiles[j].reputation

    def get(self, seat_id, default=None):
        j = self._alias.get(seat_id)
        if j is not None:
            return self._profiles[j].reputation
        return super().get(seat_id, default)

    def __setitem__(self, seat_id, value):
        j = self._alias.get(seat_id)
        if j is not None:
            self._profiles[j].reputation = value
        else:
            super().__setitem__(seat_id, value)


def _settle_protocol(
    config: SimulationConfig,
    profiles: Sequence[AuditorProfile],
    draw: _ReplicaDraw,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, Ledger]:
    """Run every trace through a commit-reveal session and settle it.

    Same trajectory arrays as the vectorized engine, plus the sessions'
    own trace verdicts and the ledger that accumulated every record.
    """
    counts = config.segment_counts
    n_c_per = counts.get(AuditorType.COMPUTER, 0)
    n_l_per = counts.get(AuditorType.LLM, 0)
    roster_size = len(profiles)
    n_h = draw.truth_h.size
    pool_c = config.pools.get(AuditorType.COMPUTER)
    pool_l = config.pools.get(AuditorType.LLM)
    pool_h = config.pools[AuditorType.HUMAN]
    k_l = pool_l.seat_count if pool_l else 0
    q_h = ceil_quorum(roster_size, pool_h.tau)

    ledger = Ledger()
    reputations = _RosterReputations(profiles)
    rep_after = np.empty((n_h, roster_size))
    payoff = np.zeros((n_h, roster_size))
    verdicts = np.empty(draw.n_traces, dtype=bool)

    for t in range(draw.n_traces):
        h0 = int(draw.human_offsets[t])
        h_count = int(draw.human_counts[t])
        plan: dict[str, SeatAssignment] = {}
        truth: dict[str, bool] = {}
        trace_votes: dict[tuple[str, str], bool] = {}

        for i in range(n_c_per):
            seg = f"t{t:05d}-c{i}"
            plan[seg] = SeatAssignment(
                AuditorType.COMPUTER, 1, ceil_quorum(1, pool_c.tau), pool_c.weight
            )
            truth[seg] = bool(draw.truth_c[t * n_c_per + i])
            trace_votes[(seg, f"{seg}:0")] = bool(draw.votes_c[t * n_c_per + i])
        for i in range(n_l_per):
            seg = f"t{t:05d}-l{i}"
            plan[seg] = SeatAssignment(
                AuditorType.LLM, k_l, ceil_quorum(k_l, pool_l.tau), pool_l.weight
            )
            truth[seg] = bool(draw.truth_l[t * n_l_per + i])
            for s in range(k_l):
                trace_votes[(seg, f"{seg}:{s}")] = bool(
                    draw.votes_l[t * n_l_per + i, s]
                )
        human_segments = []
        for i in range(h_count):
            seg = f"t{t:05d}-h{i}"
            human_segments.append(seg)
            plan[seg] = SeatAssignment(AuditorType.HUMAN, roster_size, q_h, pool_h.weight)
            truth[seg] = bool(draw.truth_h[h0 + i])
            reputations.alias_human_segment(seg)
            for j in range(roster_size):
                trace_votes[(seg, f"{seg}:{j}")] = bool(draw.votes_h[h0 + i, j])

        session = create_session(f"t{t:05d}", plan, ledger, beta=config.beta)
        nonces = {}
        for (seg, seat), vote in sorted(trace_votes.items()):
            nonce = rng.bytes(16)
            nonces[(seg, seat)] = nonce
            digest = make_commitment(
                session.session_id, seg, seat, Vote.PASS if vote else Vote.FAIL, nonce
            )
            commit_vote(session, seg, seat, digest)
        begin_reveal(session)
        for (seg, seat), vote in sorted(trace_votes.items()):
            reveal_vote(
                session,
                seg,
                seat,
                Vote.PASS if vote else Vote.FAIL,
                nonces[(seg, seat)],
            )
        _, verdicts[t] = aggregate(session)
        settle_start = len(ledger.records)
        settle(session, config.econ, truth, reputations, rng)

        # Read per-segment outcomes back off the ledger: settlement
        # walks segments in sorted id order, which is chronological
        # here by construction, so the recorded reputations are the
        # true per-segment path.
        row_of = {seg: h0 + i for i, seg in enumerate(human_segments)}
        for record in ledger.records[settle_start:]:
            row = row_of.get(record.payload.get("segment_id"))
            if row is None:
                continue
            seat = record.payload["seat_id"]
            j = int(seat.rsplit(":", 1)[1])
            if record.kind == "RewardPaid":
                payoff[row, j] = record.payload["amount"]
            elif record.kind == "Slashed":
                payoff[row, j] = -record.payload["amount"]
            elif record.kind == "ReputationUpdated":
                rep_after[row, j] = record.payload["current"]
    return rep_after, payoff, np.cumsum(payoff, axis=0), verdicts, ledger


# ---------------------------------------------------------------------------
# replica driver and report
# ---------------------------------------------------------------------------


@dataclass
class ReplicaOutcome:
    """Scalar summary of one replica, plus optional per-segment series."""

    replica_index: int
    human_segments: int
    traces: int
    trace_accuracy: float
    final_reputation: dict[str, float]
    final_payoff: dict[str, float]
    honeypot_stats: dict[str, HoneypotStats]
    reputation_trajectory: Optional[dict[str, np.ndarray]] = None
    payoff_trajectory: Optional[dict[str, np.ndarray]] = None


def _behavior_columns(profiles: Sequence[AuditorProfile]) -> dict[str, np.ndarray]:
    columns: dict[str, list[int]] = {}
    for j, profile in enumerate(profiles):
        columns.setdefault(profile.behavior.label, []).append(j)
    return {label: np.array(cols) for label, cols in columns.items()}


def _run_replica(
    config: SimulationConfig, replica_index: int, ledger_dir: Optional[str] = None
) -> ReplicaOutcome:
    rng_votes = np.random.default_rng([config.seed, replica_index, 0])
    rng_engine = np.random.default_rng([config.seed, replica_index, 1])
    profiles = config.roster()
    draw = _sample_replica(config, rng_votes)

    if config.engine == "vectorized":
        rep_after, _, cum = _settle_vectorized(config, profiles, draw, rng_engine)
        verdicts = _trace_verdicts(config, draw)
    else:
        rep_after, _, cum, verdicts, ledger = _settle_protocol(
            config, profiles, draw, rng_engine
        )
        if ledger_dir is not None:
            ledger.dump(
                os.path.join(ledger_dir, f"replica-{replica_index:05d}.jsonl")
            )

    columns = _behavior_columns(profiles)
    final_reputation = {
        label: float(rep_after[-1, cols].mean()) for label, cols in columns.items()
    }
    final_payoff = {
        label: float(cum[-1, cols].mean()) for label, cols in columns.items()
    }
    reputation_trajectory = payoff_trajectory = None
    if config.record_trajectories:
        reputation_trajectory = {
            label: rep_after[:, cols].mean(axis=1) for label, cols in columns.items()
        }
        payoff_trajectory = {
            label: cum[:, cols].mean(axis=1) for label, cols in columns.items()
        }
    return ReplicaOutcome(
        replica_index=replica_index,
        human_segments=int(draw.truth_h.size),
        traces=int(draw.n_traces),
        trace_accuracy=float(np.mean(verdicts == draw.trace_good)),
        final_reputation=final_reputation,
        final_payoff=final_payoff,
        honeypot_stats=_honeypot_stats(profiles, draw),
        reputation_trajectory=reputation_trajectory,
        payoff_trajectory=payoff_trajectory,
    )


@dataclass
class SimulationReport:
    """Aggregated result of all replicas of one configuration.

    Trajectories are per-behavior means across replicas, truncated to
    the shortest replica's horizon so every index averages the same
    number of runs.
    """

    replicas: int
    seed: int
    engine: str
    trace_accuracy: float
    trace_accuracy_stderr: float
    mean_final_reputation: dict[str, float]
    mean_final_payoff: dict[str, float]
    reputation_trajectories: dict[str, np.ndarray]
    payoff_trajectories: dict[str, np.ndarray]
    flagged_rubber_stamps: frozenset[str]
    per_replica: list[ReplicaOutcome]
    baseline_accuracies: dict[str, float] = field(default_factory=dict)

    def pooled_honeypot_stats(self) -> dict[str, HoneypotStats]:
        pooled: dict[str, HoneypotStats] = {}
        for outcome in self.per_replica:
            for seat_id, stats in outcome.honeypot_stats.items():
                if seat_id not in pooled:
                    pooled[seat_id] = HoneypotStats(seat_id=seat_id)
                pooled[seat_id].merge(stats)
        return pooled

    def to_json(self) -> str:
        payload = {
            "replicas": self.replicas,
            "seed": self.seed,
            "engine": self.engine,
            "trace_accuracy": {
                "mean": self.trace_accuracy,
                "stderr": self.trace_accuracy_stderr,
            },
            "final_reputation": self.mean_final_reputation,
            "final_payoff": self.mean_final_payoff,
            "reputation_trajectories": {
                label: series.tolist()
                for label, series in self.reputation_trajectories.items()
            },
            "payoff_trajectories": {
                label: series.tolist()
                for label, series in self.payoff_trajectories.items()
            },
            "flagged_rubber_stamps": sorted(self.flagged_rubber_stamps),
            "baseline_accuracies": self.baseline_accuracies,
            "per_replica": [
                {
                    "replica": o.replica_index,
                    "human_segments": o.human_segments,
                    "traces": o.traces,
                    "trace_accuracy": o.trace_accuracy,
                    "final_reputation": o.final_reputation,
                    "final_payoff": o.final_payoff,
                }
                for o in self.per_replica
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def _replica_task(args: tuple) -> ReplicaOutcome:
    config, index, ledger_dir = args
    return _run_replica(config, index, ledger_dir)


def run_simulation(
    config: SimulationConfig,
    workers: int = 1,
    ledger_dir: Optional[str] = None,
) -> SimulationReport:
    """Run every replica and aggregate; deterministic given the seed.

    Replicas draw from independent counter-based streams, so the result
    is byte-identical whether they run serially or across ``workers``
    processes.  ``ledger_dir`` writes each replica's full session
    ledger as JSON Lines and requires the protocol engine.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if ledger_dir is not None:
        if config.engine != "protocol":
            raise ValueError("ledger output requires the protocol engine")
        os.makedirs(ledger_dir, exist_ok=True)

    tasks = [(config, index, ledger_dir) for index in range(config.replicas)]
    if workers > 1 and config.replicas > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replica_task, tasks, chunksize=8))
    else:
        outcomes = [_replica_task(task) for task in tasks]

    accuracies = np.array([o.trace_accuracy for o in outcomes])
    stderr = (
        float(accuracies.std(ddof=1) / math.sqrt(len(outcomes)))
        if len(outcomes) > 1
        else 0.0
    )
    labels = sorted(outcomes[0].final_reputation)
    mean_final_reputation = {
        label: float(np.mean([o.final_reputation[label] for o in outcomes]))
        for label in labels
    }
    mean_final_payoff = {
        label: float(np.mean([o.final_payoff[label] for o in outcomes]))
        for label in labels
    }

    reputation_trajectories: dict[str, np.ndarray] = {}
    payoff_trajectories: dict[str, np.ndarray] = {}
    if config.record_trajectories:
        horizon = min(o.human_segments for o in outcomes)
        for label in labels:
            reputation_trajectories[label] = np.mean(
                [o.reputation_trajectory[label][:horizon] for o in outcomes], axis=0
            )
            payoff_trajectories[label] = np.mean(
                [o.payoff_trajectory[label][:horizon] for o in outcomes], axis=0
            )

    report = SimulationReport(
        replicas=config.replicas,
        seed=config.seed,
        engine=config.engine,
        trace_accuracy=float(accuracies.mean()),
        trace_accuracy_stderr=stderr,
        mean_final_reputation=mean_final_reputation,
        mean_final_payoff=mean_final_payoff,
        reputation_trajectories=reputation_trajectories,
        payoff_trajectories=payoff_trajectories,
        flagged_rubber_stamps=frozenset(),
        per_replica=outcomes,
    )
    if config.honeypot_rate > 0.0:
        try:
            report.flagged_rubber_stamps = detect_rubber_stamps(
                report.pooled_honeypot_stats()
            )
        except InsufficientData:
            pass  # too few honeypots to judge anyone; leave no flags
    return report


# ---------------------------------------------------------------------------
# strategy comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategyResult:
    """Accuracy of one trace-decision rule with its Monte Carlo error."""

    accuracy: float
    stderr: float
    replicas: int


def _vote_tallies(
    config: SimulationConfig, draw: _ReplicaDraw
) -> dict[str, np.ndarray]:
    """Per-trace raw and reliability-weighted vote counts."""
    counts = config.segment_counts
    n_c_per = counts.get(AuditorType.COMPUTER, 0)
    n_l_per = counts.get(AuditorType.LLM, 0)
    roster_size = draw.votes_h.shape[1]
    k_l = draw.votes_l.shape[1] if draw.votes_l.size else 0

    def reliability(tier: AuditorType) -> float:
        pool = config.pools[tier]
        return (1.0 - pool.epsilon) * (1.0 - pool.rho)

    pass_votes = np.zeros(draw.n_traces)
    total_votes = np.zeros(draw.n_traces)
    pass_mass = np.zeros(draw.n_traces)
    total_mass = np.zeros(draw.n_traces)

    if n_c_per:
        per_trace = draw.votes_c.reshape(draw.n_traces, n_c_per).sum(axis=1)
        pass_votes += per_trace
        total_votes += n_c_per
        w = reliability(AuditorType.COMPUTER)
        pass_mass += per_trace * w
        total_mass += n_c_per * w
    if n_l_per:
        per_trace = draw.votes_l.reshape(draw.n_traces, n_l_per * k_l).sum(axis=1)
        pass_votes += per_trace
        total_votes += n_l_per * k_l
        w = reliability(AuditorType.LLM)
        pass_mass += per_trace * w
        total_mass += n_l_per * k_l * w

    human_per_trace = np.add.reduceat(
        draw.votes_h.sum(axis=1), draw.human_offsets
    )
    pass_votes += human_per_trace
    total_votes += draw.human_counts * roster_size
    w = reliability(AuditorType.HUMAN)
    pass_mass += human_per_trace * w
    total_mass += draw.human_counts * roster_size * w

    return {
        "pass_votes": pass_votes,
        "total_votes": total_votes,
        "pass_mass": pass_mass,
        "total_mass": total_mass,
    }


def compare_strategies(
    config: SimulationConfig, strategies: Iterable[str]
) -> dict[str, StrategyResult]:
    """Decide every sampled trace under each strategy and score accuracy.

    All ensemble strategies read the same sampled votes; the single
    auditor casts one trace-level vote of its own, subject to the same
    corruption rate.  Strategy names come from STRATEGY_NAMES.

    Requires honeypot_rate == 0: planted flaws make honest seats vote
    against traces whose organic label is good, which would confound
    the accuracy comparison.
    """
    chosen = list(dict.fromkeys(strategies))
    if not chosen:
        raise ValueError("at least one strategy is required")
    unknown = [s for s in chosen if s not in STRATEGY_NAMES]
    if unknown:
        raise ValueError(f"unknown strategies: {', '.join(unknown)}")
    if config.honeypot_rate != 0.0:
        raise ValueError(
            "strategy comparison needs honeypot_rate=0; planted flaws "
            "would confound the accuracy measure"
        )

    per_replica: dict[str, list[float]] = {s: [] for s in chosen}
    for replica_index in range(config.replicas):
        rng = np.random.default_rng([config.seed, replica_index, 2])
        draw = _sample_replica(config, rng)
        tallies = _vote_tallies(config, draw)
        for strategy in chosen:
            if strategy == "trust_weighted":
                decisions = _trace_verdicts(config, draw)
            elif strategy == "majority":
                decisions = 2 * tallies["pass_votes"] > tallies["total_votes"]
            elif strategy == "supermajority":
                decisions = 3 * tallies["pass_votes"] >= 2 * tallies["total_votes"]
            elif strategy == "unanimous":
                decisions = tallies["pass_votes"] == tallies["total_votes"]
            elif strategy == "weighted":
                decisions = 2 * tallies["pass_mass"] > tallies["total_mass"]
            else:  # single_auditor
                errs = rng.random(draw.n_traces) < config.single_auditor_error
                votes = draw.trace_good ^ errs
                if config.corruption_rate > 0.0:
                    votes = inject_corruption(votes, config.corruption_rate, rng)
                decisions = votes
            per_replica[strategy].append(
                float(np.mean(decisions == draw.trace_good))
            )

    results = {}
    for strategy in chosen:
        values = np.array(per_replica[strategy])
        stderr = (
            float(values.std(ddof=1) / math.sqrt(values.size))
            if values.size > 1
            else 0.0
        )
        results[strategy] = StrategyResult(
            accuracy=float(values.mean()), stderr=stderr, replicas=values.size
        )
    return results
