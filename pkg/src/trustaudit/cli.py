"""Command line front end for validation, analysis, and simulation runs.

Subcommands:

    validate       structural checks on a reasoning-graph JSON document
    bounds         failure-probability curves and classification sweep over beta
    economics      stake-economics guarantee report for a parameter file
    simulate       Monte Carlo runs: strategy accuracy and account trajectories
    audit-run      one full commit-reveal session over a document, ledger out
    verify-ledger  hash-chain integrity check of a stored ledger

Exit codes are a stable contract: 0 success, 1 domain violation found
(invalid document, broken ledger), 2 usage or input error.  Randomized
subcommands require an explicit --seed and are byte-deterministic given
one; TRUST_THREADS caps replica parallelism.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

from .consensus import (
    DEFAULT_SEGMENT_COUNTS,
    AuditorType,
    SeatPoolConfig,
    SegmentVote,
    TraceAggregation,
    classification_curve,
    default_pools,
    flawed_segment_pass_probability,
    segment_pass_probability,
    trace_failure_bounds,
)
from .economics import EconParams, build_guarantee_report
from .hdag import ParseError, parse_hdag, plan_assignments, validate_hdag
from .protocol import (
    Ledger,
    Vote,
    aggregate,
    begin_reveal,
    commit_vote,
    create_session,
    first_invalid_record,
    make_commitment,
    reveal_vote,
    settle,
)
from .simulation import (
    Behavior,
    SimulationConfig,
    TruthModel,
    compare_strategies,
    run_simulation,
)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

ACCURACY_TARGET = 0.9999


class UsageError(Exception):
    """Bad input or bad invocation; maps to exit code 2."""


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(loaded, dict):
        raise UsageError(f"{path}: top level must be a JSON object")
    return loaded


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """CSV with '.' decimals and LF line endings regardless of platform."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _print_json(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _auditor_type(name: str) -> AuditorType:
    for member in AuditorType:
        if member.value == name:
            return member
    known = ", ".join(m.value for m in AuditorType)
    raise UsageError(f"unknown auditor type {name!r} (known: {known})")


def _pool_from_dict(tier: AuditorType, raw: Mapping) -> SeatPoolConfig:
    try:
        return SeatPoolConfig(
            auditor_type=tier,
            seat_count=int(raw["k"]),
            tau=Fraction(int(raw["tau_num"]), int(raw["tau_den"])),
            epsilon=float(raw["epsilon"]),
            rho=float(raw["rho"]),
            weight=float(raw.get("weight", 1.0)),
        )
    except KeyError as exc:
        raise UsageError(f"pool for {tier.value} is missing key {exc}") from None
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"pool for {tier.value} is invalid: {exc}") from None


def _pools_from_config(raw: Optional[Mapping]) -> dict[AuditorType, SeatPoolConfig]:
    if raw is None:
        return default_pools()
    pools = {}
    for name, entry in raw.items():
        tier = _auditor_type(name)
        pools[tier] = _pool_from_dict(tier, entry)
    return pools


def _segment_counts_from_config(raw: Optional[Mapping]) -> dict[AuditorType, int]:
    if raw is None:
        return dict(DEFAULT_SEGMENT_COUNTS)
    counts = {}
    for name, value in raw.items():
        counts[_auditor_type(name)] = int(value)
    return counts


def _econ_from_dict(raw: Mapping) -> EconParams:
    """Stake parameters from their conventional short JSON keys."""
    try:
        return EconParams(
            reward=float(raw["R"]),
            penalty=float(raw["P"]),
            slash_min=float(raw["p_min"]),
            slash_max=float(raw["p_max"]),
            reputation_step=float(raw["gamma"]),
            honest_error=float(raw["epsilon_H"]),
            deterrence_margin=float(raw["delta"]),
            arrival_rate=float(raw["lambda_rate"]),
            horizon_hours=float(raw["horizon_T"]),
            payoff_range_override=(
                float(raw["b_override"]) if raw.get("b_override") is not None else None
            ),
        )
    except KeyError as exc:
        raise UsageError(f"economics parameters missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"economics parameters invalid: {exc}") from None


def _require_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise UsageError("this subcommand is randomized; pass an explicit --seed")
    return args.seed


def _worker_count(replicas: int) -> int:
    """Replica parallelism: cpu count, capped by TRUST_THREADS and replicas."""
    workers = os.cpu_count() or 1
    cap = os.environ.get("TRUST_THREADS")
    if cap is not None:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"TRUST_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(workers, replicas))


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        with open(args.path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.path}: {exc}") from None
    try:
        doc = parse_hdag(raw)
    except ParseError as exc:
        _print_json({"path": args.path, "parsed": False, "error": str(exc)})
        return EXIT_USAGE
    issues = validate_hdag(doc)
    _print_json(
        {
            "path": args.path,
            "parsed": True,
            "valid": not issues,
            "nodes": len(doc.nodes),
            "edges": len(doc.edges),
            "issues": [
                {
                    "code": issue.code,
                    "message": issue.message,
                    "subjects": list(issue.subjects),
                }
                for issue in issues
            ],
        }
    )
    return EXIT_OK if not issues else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _beta_grid(beta_from: float, beta_to: float, beta_step: float) -> list[float]:
    if not (0.0 < beta_from < beta_to < 1.0):
        raise UsageError("need 0 < beta-from < beta-to < 1")
    if beta_step <= 0.0:
        raise UsageError("beta-step must be positive")
    count = int((beta_to - beta_from) / beta_step + 1e-9) + 1
    return [beta_from + i * beta_step for i in range(count)]


def _sound_trace_segments(
    pools: Mapping[AuditorType, SeatPoolConfig],
    counts: Mapping[AuditorType, int],
) -> list[SegmentVote]:
    segments = []
    for tier in sorted(counts, key=lambda t: t.value):
        pool = pools.get(tier)
        if pool is None:
            raise UsageError(f"no pool configured for auditor type {tier.value}")
        p = segment_pass_probability(pool)
        for i in range(counts[tier]):
            segments.append(SegmentVote(f"{tier.value}-{i}", p, pool.weight))
    return segments


def _widest_accurate_interval(
    betas: Sequence[float], accuracies: Sequence[float], target: float
) -> Optional[tuple[float, float]]:
    """Widest contiguous run of grid points with accuracy >= target."""
    best = None
    start = None
    for beta, acc in zip(list(betas) + [None], list(accuracies) + [0.0]):
        if beta is not None and acc >= target:
            if start is None:
                start = beta
            end = beta
        elif start is not None:
            if best is None or end - start > best[1] - best[0]:
                best = (start, end)
            start = None
    return best


def cmd_bounds(args: argparse.Namespace) -> int:
    config = _read_json(args.params) if args.params else {}
    pools = _pools_from_config(config.get("pools"))
    counts = _segment_counts_from_config(config.get("segment_counts"))
    prior_good = float(config.get("prior_good", 0.5))
    flawed_fraction = float(config.get("flawed_fraction", 1.0))

    betas = _beta_grid(args.beta_from, args.beta_to, args.beta_step)
    segments = _sound_trace_segments(pools, counts)
    try:
        curve = classification_curve(
            pools, pools, betas, prior_good, counts, flawed_fraction
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    rows = []
    for beta, point in zip(betas, curve):
        bounds = trace_failure_bounds(TraceAggregation(segments, beta))
        exact = "" if bounds.exact is None else repr(bounds.exact)
        rows.append(
            (
                repr(beta),
                exact,
                repr(bounds.hoeffding),
                repr(bounds.chernoff),
                repr(point.tpr),
                repr(point.fpr),
                repr(point.accuracy),
            )
        )
    header = ("beta", "exact", "hoeffding", "chernoff", "tpr", "fpr", "accuracy")
    if args.out:
        _write_csv(args.out, header, rows)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

    interval = _widest_accurate_interval(
        betas, [p.accuracy for p in curve], ACCURACY_TARGET
    )
    summary = {
        "accuracy_target": ACCURACY_TARGET,
        "grid_points": len(betas),
        "interval_low": None if interval is None else interval[0],
        "interval_high": None if interval is None else interval[1],
    }
    # The summary shares stdout with the CSV only when the CSV went to a file.
    stream = sys.stdout if args.out else sys.stderr
    print(json.dumps(summary, sort_keys=True), file=stream)
    return EXIT_OK


# ---------------------------------------------------------------------------
# economics
# ---------------------------------------------------------------------------


def cmd_economics(args: argparse.Namespace) -> int:
    params = _econ_from_dict(_read_json(args.params))
    try:
        report = build_guarantee_report(params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _print_json(report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_BEHAVIOR_BUILDERS = {
    "honest": lambda entry: Behavior.honest(float(entry.get("error_rate", 0.0))),
    "malicious": lambda entry: Behavior.malicious(),
    "random_guesser": lambda entry: Behavior.random_guesser(
        float(entry.get("pass_rate", 0.5))
    ),
    "rubber_stamp": lambda entry: Behavior.rubber_stamp(),
}


def _mix_from_config(raw) -> dict[Behavior, float]:
    if not isinstance(raw, list) or not raw:
        raise UsageError("population.mix must be a non-empty list")
    mix: dict[Behavior, float] = {}
    for entry in raw:
        kind = entry.get("behavior")
        builder = _BEHAVIOR_BUILDERS.get(kind)
        if builder is None:
            known = ", ".join(sorted(_BEHAVIOR_BUILDERS))
            raise UsageError(f"unknown behavior {kind!r} (known: {known})")
        try:
            behavior = builder(entry)
            fraction = float(entry["fraction"])
        except KeyError as exc:
            raise UsageError(f"behavior entry missing key {exc}") from None
        except ValueError as exc:
            raise UsageError(f"behavior entry invalid: {exc}") from None
        if behavior in mix:
            raise UsageError(f"behavior {behavior.label} listed twice")
        mix[behavior] = fraction
    return mix


def _simulation_config(raw: Mapping, seed: int) -> SimulationConfig:
    try:
        econ = _econ_from_dict(raw["econ"])
    except KeyError:
        raise UsageError("simulate config needs an 'econ' section") from None
    population = raw.get("population")
    if not isinstance(population, Mapping):
        raise UsageError("simulate config needs a 'population' section")
    truth_raw = raw.get("truth", {})
    try:
        truth = TruthModel(
            good_fraction=float(truth_raw.get("good_fraction", 1.0)),
            flawed_segment_fraction=float(
                truth_raw.get("flawed_segment_fraction", 1.0)
            ),
        )
        horizon = raw.get("horizon_segments")
        return SimulationConfig(
            econ=econ,
            population_mix=_mix_from_config(population.get("mix")),
            population_size=int(population.get("size", 20)),
            pools=_pools_from_config(raw.get("pools")),
            segment_counts=_segment_counts_from_config(raw.get("segment_counts")),
            truth_model=truth,
            beta=float(raw.get("beta", 0.5)),
            initial_reputation=float(raw.get("initial_reputation", 0.0)),
            corruption_rate=float(raw.get("corruption_rate", 0.0)),
            honeypot_rate=float(raw.get("honeypot_rate", 0.0)),
            replicas=int(raw.get("replicas", 100)),
            seed=seed,
            horizon_segments=None if horizon is None else int(horizon),
            engine=str(raw.get("engine", "vectorized")),
            single_auditor_error=float(raw.get("single_auditor_error", 0.05)),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"simulate config invalid: {exc}") from None


def _strategy_metrics(
    base: SimulationConfig, raw: Mapping
) -> list[tuple[str, str, str, str, str]]:
    """One row per (corruption rate, strategy): accuracy with its stderr."""
    rates = raw.get("corruption_rates", [base.corruption_rate])
    strategies = raw.get("strategies", ["trust_weighted"])
    rows = []
    for rate in rates:
        config = replace(
            base,
            corruption_rate=float(rate),
            honeypot_rate=0.0,
            record_trajectories=False,
        )
        try:
            results = compare_strategies(config, strategies)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for name in strategies:
            result = results[name]
            rows.append(
                (
                    repr(float(rate)),
                    name,
                    repr(result.accuracy),
                    repr(result.stderr),
                    str(result.replicas),
                )
            )
    return rows


def cmd_simulate(args: argparse.Namespace) -> int:
    seed = _require_seed(args)
    raw = _read_json(args.config)
    config = _simulation_config(raw, seed)
    os.makedirs(args.out, exist_ok=True)

    ledger_dir = None
    if args.emit_ledgers:
        if config.engine != "protocol":
            raise UsageError("--emit-ledgers needs \"engine\": \"protocol\" in the config")
        ledger_dir = os.path.join(args.out, "ledgers")

    workers = _worker_count(config.replicas)
    try:
        report = run_simulation(config, workers=workers, ledger_dir=ledger_dir)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    with open(
        os.path.join(args.out, "report.json"), "w", encoding="utf-8", newline=""
    ) as fh:
        fh.write(report.to_json())
        fh.write("\n")

    trajectory_rows = []
    for label in sorted(report.reputation_trajectories):
        reputation = report.reputation_trajectories[label]
        payoff = report.payoff_trajectories[label]
        for index in range(reputation.size):
            trajectory_rows.append(
                (
                    str(index),
                    label,
                    repr(float(reputation[index])),
                    repr(float(payoff[index])),
                )
            )
    _write_csv(
        os.path.join(args.out, "trajectories.csv"),
        ("segment_index", "behavior", "mean_reputation", "mean_cumulative_payoff"),
        trajectory_rows,
    )

    metrics_rows = _strategy_metrics(config, raw)
    _write_csv(
        os.path.join(args.out, "metrics.csv"),
        ("corruption_rate", "strategy", "accuracy", "stderr", "replicas"),
        metrics_rows,
    )

    _print_json(
        {
            "out_dir": args.out,
            "replicas": report.replicas,
            "engine": report.engine,
            "trace_accuracy": report.trace_accuracy,
            "flagged_rubber_stamps": sorted(report.flagged_rubber_stamps),
            "workers": workers,
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# audit-run
# ---------------------------------------------------------------------------


def _reference_econ() -> EconParams:
    """Reference stake parameters used when audit-run gets no --params."""
    return EconParams(
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


def cmd_audit_run(args: argparse.Namespace) -> int:
    seed = _require_seed(args)
    try:
        with open(args.hdag, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.hdag}: {exc}") from None
    try:
        doc = parse_hdag(raw)
    except HdagError as exc:
        raise UsageError(f"{args.hdag}: {exc}") from None
    issues = validate_hdag(doc)
    if issues:
        _print_json(
            {
                "valid": False,
                "issues": [
                    {"code": issue.code, "message": issue.message} for issue in issues
                ],
            }
        )
        return EXIT_VIOLATION

    econ = _econ_from_dict(_read_json(args.params)) if args.params else _reference_econ()
    pools = default_pools()
    plan = plan_assignments(doc, pools)
    rng = np.random.default_rng(seed)
    trace_id = doc.title or os.path.basename(args.hdag)

    ledger = Ledger()
    session = create_session(trace_id, plan, ledger, beta=args.beta)

    # Every segment is treated as sound; each seat votes honestly at its
    # tier's error rate, so quorums can genuinely fail on noisy tiers.
    votes: dict[tuple[str, str], tuple[Vote, bytes]] = {}
    for segment_id in sorted(plan):
        assignment = plan[segment_id]
        epsilon = pools[assignment.auditor_type].epsilon
        for i in range(assignment.seat_count):
            seat_id = f"{segment_id}:{i}"
            vote = Vote.FAIL if rng.random() < epsilon else Vote.PASS
            nonce = rng.bytes(16)
            votes[(segment_id, seat_id)] = (vote, nonce)
            digest = make_commitment(session.session_id, segment_id, seat_id, vote, nonce)
            commit_vote(session, segment_id, seat_id, digest)

    begin_reveal(session)
    for (segment_id, seat_id), (vote, nonce) in votes.items():
        reveal_vote(session, segment_id, seat_id, vote, nonce)

    segment_verdicts, trace_verdict = aggregate(session)
    reputations: dict[str, float] = {}
    payoff_records = settle(
        session, econ, {seg: True for seg in plan}, reputations, rng
    )

    ledger.dump(args.out)
    rewards = sum(1 for r in payoff_records if r.kind == "RewardPaid")
    _print_json(
        {
            "session_id": session.session_id,
            "trace_id": trace_id,
            "segments": len(plan),
            "segments_passed": sum(segment_verdicts.values()),
            "trace_verdict": trace_verdict,
            "seats": len(votes),
            "rewards_paid": rewards,
            "slashes": sum(1 for r in payoff_records if r.kind == "Slashed"),
            "ledger_records": len(ledger.records),
            "ledger_path": args.out,
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-ledger
# ---------------------------------------------------------------------------


def cmd_verify_ledger(args: argparse.Namespace) -> int:
    try:
        ledger = Ledger.load(args.path)
    except OSError as exc:
        raise UsageError(f"cannot read {args.path}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"{args.path}: {exc}") from None

    records = ledger.records
    first_bad = first_invalid_record(records)
    _print_json(
        {
            "path": args.path,
            "records": len(records),
            "intact": first_bad is None,
            "first_bad_index": first_bad,
        }
    )
    return EXIT_OK if first_bad is None else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trustaudit",
        description="Reasoning-trace audit toolkit: validation, bounds, economics, simulation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_validate = sub.add_parser("validate", help="validate a reasoning-graph JSON file")
    p_validate.add_argument("path", help="document to check")
    p_validate.set_defaults(func=cmd_validate)

    p_bounds = sub.add_parser(
        "bounds", help="failure bounds and classification sweep over beta"
    )
    p_bounds.add_argument("--params", help="JSON file with pools / priors", default=None)
    p_bounds.add_argument("--beta-from", type=float, required=True)
    p_bounds.add_argument("--beta-to", type=float, required=True)
    p_bounds.add_argument("--beta-step", type=float, required=True)
    p_bounds.add_argument("--out", help="CSV output path (default stdout)", default=None)
    p_bounds.set_defaults(func=cmd_bounds)

    p_econ = sub.add_parser("economics", help="stake-economics guarantee report")
    p_econ.add_argument("--params", required=True, help="JSON parameter file")
    p_econ.set_defaults(func=cmd_economics)

    p_sim = sub.add_parser("simulate", help="Monte Carlo strategy and account runs")
    p_sim.add_argument("--config", required=True, help="JSON simulation config")
    p_sim.add_argument("--seed", type=int, default=None, help="master seed (required)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument(
        "--emit-ledgers",
        action="store_true",
        help="write one session ledger per replica (protocol engine only)",
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser(
        "audit-run", help="run one commit-reveal session over a document"
    )
    p_run.add_argument("--hdag", required=True, help="reasoning-graph JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="master seed (required)")
    p_run.add_argument("--out", required=True, help="ledger output path (JSON Lines)")
    p_run.add_argument("--beta", type=float, default=0.5, help="trace acceptance threshold")
    p_run.add_argument("--params", default=None, help="economics JSON (default: reference)")
    p_run.set_defaults(func=cmd_audit_run)

    p_verify = sub.add_parser("verify-ledger", help="check a stored ledger's hash chain")
    p_verify.add_argument("path", help="ledger file (JSON Lines)")
    p_verify.set_defaults(func=cmd_verify_ledger)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return EXIT_USAGE if exc.code not in (0,) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
