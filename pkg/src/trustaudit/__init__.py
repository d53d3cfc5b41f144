"""Decentralized auditing of hierarchical reasoning traces.

The package splits into the document layer (hdag), the voting mathematics
(consensus), the staking incentives (economics), the commit-reveal audit
protocol with its hash-chained ledger (protocol), the Monte Carlo harness
(simulation), and a command line front end (cli).
"""

__version__ = "0.1.0"

from .consensus import (  # noqa: F401
    AuditorType,
    SeatPoolConfig,
    SegmentVote,
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
from .economics import (  # noqa: F401
    EconParams,
    GuaranteeReport,
    build_guarantee_report,
    check_economic_dial,
    check_statistical_dial,
    expected_payoff,
    honest_tail_bound,
    malicious_expected_payoff,
    malicious_tail_bound,
    slash_probability,
    update_reputation,
)
from .hdag import (  # noqa: F401
    AbstractionLevel,
    HdagDocument,
    HdagEdge,
    HdagNode,
    parse_hdag,
    plan_assignments,
    serialize_hdag,
    validate_hdag,
    verification_flow,
)
from .protocol import (  # noqa: F401
    AuditSession,
    ContentStore,
    Ledger,
    LedgerRecord,
    Phase,
    Vote,
    aggregate,
    begin_reveal,
    commit_vote,
    create_session,
    make_commitment,
    replay_ledger,
    reveal_vote,
    settle,
    verify_ledger,
)
from .simulation import (  # noqa: F401
    Behavior,
    SimulationConfig,
    SimulationReport,
    StrategyResult,
    TruthModel,
    compare_strategies,
    detect_rubber_stamps,
    inject_corruption,
    run_simulation,
)
