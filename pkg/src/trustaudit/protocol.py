"""Commit-reveal audit sessions over a hash-chained append-only ledger.

This module is the in-process stand-in for the infrastructure a deployed
audit network would outsource: a ledger whose records are chained by
SHA-256 digests (tamper-evident without any consensus machinery), a
content-addressed byte store, and the session state machine that runs a
two-phase vote.  Auditors first commit a digest of their vote, then
reveal the vote and nonce; the reveal is checked against the commitment
so nobody can change their mind after seeing others vote.

Sessions are single-writer state machines.  Phases advance only through
explicit calls (``begin_reveal``, ``aggregate``, ``settle``), never by
wall-clock time, so every run is deterministic and replayable.  Calling
``aggregate`` is what ends the reveal window: seats that have not
revealed by then count as no-votes for the quorum and as incorrect votes
for settlement.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from math import fsum
from typing import Mapping, MutableMapping, Optional, Sequence

import numpy as np

from .consensus import AuditorType
from .economics import EconParams, slash_probability, update_reputation
from .hdag import SeatAssignment

__all__ = [
    "GENESIS_HASH",
    "NONCE_LENGTH",
    "AuditSession",
    "ContentStore",
    "DuplicateCommit",
    "DuplicateReveal",
    "Ledger",
    "LedgerRecord",
    "NoCommitment",
    "NotFound",
    "Phase",
    "ProtocolError",
    "RecordKind",
    "RevealedVote",
    "UnknownSeat",
    "Vote",
    "WrongPhase",
    "aggregate",
    "begin_reveal",
    "canonical_json",
    "commit_vote",
    "create_session",
    "first_invalid_record",
    "make_commitment",
    "replay_ledger",
    "reveal_vote",
    "seat_ids",
    "settle",
    "verify_ledger",
]

GENESIS_HASH = bytes(32)
NONCE_LENGTH = 16
_DIGEST_LENGTH = 32


class ProtocolError(Exception):
    """Base class for session and ledger rule violations."""


class WrongPhase(ProtocolError):
    pass


class UnknownSeat(ProtocolError):
    pass


class DuplicateCommit(ProtocolError):
    pass


class DuplicateReveal(ProtocolError):
    pass


class NoCommitment(ProtocolError):
    pass


class NotFound(KeyError):
    """Requested content id is absent from the store."""


class Phase(Enum):
    CREATED = "Created"
    COMMITTING = "Committing"
    REVEALING = "Revealing"
    AGGREGATED = "Aggregated"
    FINALIZED = "Finalized"


_PHASE_ORDER = {
    Phase.CREATED: 0,
    Phase.COMMITTING: 1,
    Phase.REVEALING: 2,
    Phase.AGGREGATED: 3,
    Phase.FINALIZED: 4,
}


class Vote(Enum):
    PASS = "Pass"
    FAIL = "Fail"


class RecordKind(Enum):
    SESSION_CREATED = "SessionCreated"
    SEAT_ASSIGNED = "SeatAssigned"
    VOTE_COMMITTED = "VoteCommitted"
    VOTE_REVEALED = "VoteRevealed"
    SEGMENT_DECIDED = "SegmentDecided"
    TRACE_DECIDED = "TraceDecided"
    REWARD_PAID = "RewardPaid"
    SLASHED = "Slashed"
    REPUTATION_UPDATED = "ReputationUpdated"


_KNOWN_KINDS = frozenset(k.value for k in RecordKind)


# ---------------------------------------------------------------------------
# canonical serialization and the ledger
# ---------------------------------------------------------------------------


def canonical_json(obj: object) -> bytes:
    """Serialize to UTF-8 JSON with sorted keys and no insignificant bytes.

    The output is byte-reproducible for any JSON-compatible value, which
    makes it safe to hash.  NaN and infinities are rejected because they
    have no canonical JSON form.
    """
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


_HEX_DIGITS = frozenset("0123456789abcdef")


def _strict_hex_bytes(text: object) -> bytes:
    """Decode a 32-byte digest from exactly 64 lowercase hex characters.

    Stricter than ``bytes.fromhex``, which tolerates uppercase and
    whitespace; those lenient spellings would make some single-byte
    file tampers semantically invisible.
    """
    if (
        not isinstance(text, str)
        or len(text) != 2 * _DIGEST_LENGTH
        or not set(text) <= _HEX_DIGITS
    ):
        raise ValueError("digest must be 64 lowercase hex characters")
    return bytes.fromhex(text)


def _record_body_bytes(index: int, prev_hash: bytes, kind: str, payload: Mapping) -> bytes:
    return canonical_json(
        {
            "index": index,
            "kind": kind,
            "payload": payload,
            "prev_hash": prev_hash.hex(),
        }
    )


def compute_record_hash(index: int, prev_hash: bytes, kind: str, payload: Mapping) -> bytes:
    """Digest of a record's canonical body (everything but the hash itself)."""
    return hashlib.sha256(_record_body_bytes(index, prev_hash, kind, payload)).digest()


@dataclass(frozen=True)
class LedgerRecord:
    index: int
    prev_hash: bytes
    kind: str
    payload: Mapping[str, object]
    record_hash: bytes

    def to_json_line(self) -> str:
        return canonical_json(
            {
                "index": self.index,
                "kind": self.kind,
                "payload": self.payload,
                "prev_hash": self.prev_hash.hex(),
                "record_hash": self.record_hash.hex(),
            }
        ).decode("utf-8")

    @classmethod
    def from_json_line(cls, line: str) -> "LedgerRecord":
        raw = json.loads(line)
        if not isinstance(raw, dict):
            raise ValueError("ledger line must be a JSON object")
        try:
            index = raw["index"]
            kind = raw["kind"]
            payload = raw["payload"]
            prev_hash = _strict_hex_bytes(raw["prev_hash"])
            record_hash = _strict_hex_bytes(raw["record_hash"])
        except KeyError as exc:
            raise ValueError(f"ledger line missing field {exc.args[0]!r}") from exc
        if not isinstance(index, int) or isinstance(index, bool) or index < 0:
            raise ValueError("record index must be a non-negative integer")
        if not isinstance(kind, str) or not isinstance(payload, dict):
            raise ValueError("record kind must be a string and payload an object")
        return cls(index, prev_hash, kind, payload, record_hash)


class Ledger:
    """Append-only sequence of hash-chained records.

    Each record stores the digest of its predecessor, so any mutation,
    insertion, removal, or reorder downstream of the genesis breaks the
    chain and is caught by :func:`verify_ledger`.
    """

    def __init__(self, records: Optional[Sequence[LedgerRecord]] = None) -> None:
        self._records: list[LedgerRecord] = list(records) if records else []

    @property
    def records(self) -> list[LedgerRecord]:
        """The underlying record list; treat it as read-only."""
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    @property
    def head_hash(self) -> bytes:
        if not self._records:
            return GENESIS_HASH
        return self._records[-1].record_hash

    def append(self, kind: str, payload: Mapping[str, object]) -> LedgerRecord:
        """Append a record, hashing it into the chain.

        The payload is round-tripped through canonical JSON so the stored
        copy is detached from caller-held references and is guaranteed to
        be serializable.
        """
        if kind not in _KNOWN_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        normalized = json.loads(canonical_json(dict(payload)))
        index = len(self._records)
        prev_hash = self.head_hash
        record_hash = compute_record_hash(index, prev_hash, kind, normalized)
        record = LedgerRecord(index, prev_hash, kind, normalized, record_hash)
        self._records.append(record)
        return record

    def dumps(self) -> str:
        """Serialize to JSON Lines, one canonical record per line."""
        return "".join(r.to_json_line() + "\n" for r in self._records)

    @classmethod
    def loads(cls, text: str) -> "Ledger":
        # Split on the newline byte alone: the unicode line breaks that
        # str.splitlines also accepts would let a corrupted separator
        # byte pass unnoticed.
        records = [
            LedgerRecord.from_json_line(line) for line in text.split("\n") if line
        ]
        return cls(records)

    def dump(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Ledger":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read())


def first_invalid_record(records: Sequence[LedgerRecord]) -> Optional[int]:
    """Position of the first record breaking the chain, or None if intact.

    Checks that indices are consecutive from zero, that each record's
    prev_hash equals its predecessor's record_hash (genesis links to 32
    zero bytes), and that every record_hash matches a recomputation from
    the record's own body.
    """
    prev = GENESIS_HASH
    for position, record in enumerate(records):
        if record.index != position:
            return position
        if record.prev_hash != prev:
            return position
        if len(record.record_hash) != _DIGEST_LENGTH:
            return position
        try:
            expected = compute_record_hash(
                record.index, record.prev_hash, record.kind, record.payload
            )
        except (TypeError, ValueError):
            return position
        if record.record_hash != expected:
            return position
        prev = record.record_hash
    return None


def verify_ledger(records: Sequence[LedgerRecord]) -> bool:
    """Check every hash-chain invariant; True only for an intact ledger."""
    return first_invalid_record(records) is None


# ---------------------------------------------------------------------------
# content-addressed store
# ---------------------------------------------------------------------------


class ContentStore:
    """Byte blobs keyed by the hex SHA-256 of their content."""

    def __init__(self) -> None:
        self._blobs: dict[str, bytes] = {}

    def put(self, data: bytes) -> str:
        cid = hashlib.sha256(data).hexdigest()
        self._blobs[cid] = bytes(data)
        return cid

    def get(self, cid: str) -> bytes:
        try:
            return self._blobs[cid]
        except KeyError:
            raise NotFound(cid) from None

    def __contains__(self, cid: str) -> bool:
        return cid in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def to_directory(self, path: str | os.PathLike) -> None:
        """Write one file per blob, named by its content id."""
        os.makedirs(path, exist_ok=True)
        for cid, data in self._blobs.items():
            with open(os.path.join(path, cid), "wb") as fh:
                fh.write(data)

    @classmethod
    def from_directory(cls, path: str | os.PathLike) -> "ContentStore":
        """Load a directory written by :meth:`to_directory`, re-verifying ids."""
        store = cls()
        for name in sorted(os.listdir(path)):
            with open(os.path.join(path, name), "rb") as fh:
                data = fh.read()
            cid = store.put(data)
            if cid != name:
                raise ValueError(f"content id mismatch for {name!r}")
        return store


# ---------------------------------------------------------------------------
# audit sessions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RevealedVote:
    vote: Vote
    nonce: bytes
    valid: bool


@dataclass(eq=True)
class AuditSession:
    """Mutable state of one two-phase audit vote over a trace.

    Mutation happens only through the module-level operations; the
    session holds a reference to the ledger it writes to.  The ledger
    reference is excluded from equality so a replayed session compares
    equal to the live one.
    """

    session_id: str
    trace_id: str
    plan: dict[str, SeatAssignment]
    beta: float
    phase: Phase = Phase.CREATED
    commitments: dict[tuple[str, str], bytes] = field(default_factory=dict)
    reveals: dict[tuple[str, str], RevealedVote] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)
    trace_verdict: Optional[bool] = None
    ledger: Optional[Ledger] = field(default=None, compare=False, repr=False)


def seat_ids(segment_id: str, seat_count: int) -> tuple[str, ...]:
    """Deterministic seat identifiers for one segment's pool."""
    return tuple(f"{segment_id}:{i}" for i in range(seat_count))


def make_commitment(
    session_id: str, segment_id: str, seat_id: str, vote: Vote, nonce: bytes
) -> bytes:
    """Digest binding a vote to a seat within a session.

    The preimage is the UTF-8 identifiers joined by single zero bytes,
    followed by one vote byte (0x01 pass, 0x00 fail) and the 16-byte
    nonce, so no field can bleed into its neighbour.
    """
    if len(nonce) != NONCE_LENGTH:
        raise ValueError(f"nonce must be exactly {NONCE_LENGTH} bytes")
    vote_byte = b"\x01" if vote is Vote.PASS else b"\x00"
    preimage = (
        session_id.encode("utf-8")
        + b"\x00"
        + segment_id.encode("utf-8")
        + b"\x00"
        + seat_id.encode("utf-8")
        + b"\x00"
        + vote_byte
        + bytes(nonce)
    )
    return hashlib.sha256(preimage).digest()


def _require_phase(session: AuditSession, expected: Phase) -> None:
    if session.phase is not expected:
        raise WrongPhase(
            f"operation requires phase {expected.value}, session is in {session.phase.value}"
        )


def create_session(
    trace_id: str,
    plan: Mapping[str, SeatAssignment],
    ledger: Ledger,
    beta: float = 0.5,
) -> AuditSession:
    """Open a session: record its creation and every seat assignment.

    The session id is derived from the ledger head and the trace id, so
    ids are deterministic yet distinct across sessions on one ledger.
    Returns the session already advanced to the committing phase.
    """
    if not plan:
        raise ValueError("assignment plan must not be empty")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    seed = b"session" + ledger.head_hash + trace_id.encode("utf-8")
    session_id = hashlib.sha256(seed).hexdigest()[:16]
    session = AuditSession(
        session_id=session_id,
        trace_id=trace_id,
        plan=dict(plan),
        beta=float(beta),
        ledger=ledger,
    )
    ledger.append(
        RecordKind.SESSION_CREATED.value,
        {
            "session_id": session_id,
            "trace_id": trace_id,
            "beta": float(beta),
            "segments": len(plan),
        },
    )
    for segment_id in sorted(plan):
        assignment = plan[segment_id]
        ledger.append(
            RecordKind.SEAT_ASSIGNED.value,
            {
                "session_id": session_id,
                "segment_id": segment_id,
                "auditor_type": assignment.auditor_type.value,
                "seats": list(seat_ids(segment_id, assignment.seat_count)),
                "quorum": assignment.quorum,
                "weight": assignment.weight,
            },
        )
    session.phase = Phase.COMMITTING
    return session


def commit_vote(
    session: AuditSession, segment_id: str, seat_id: str, digest: bytes
) -> AuditSession:
    """Store a vote commitment; only the digest reaches the ledger."""
    _require_phase(session, Phase.COMMITTING)
    assignment = session.plan.get(segment_id)
    if assignment is None or seat_id not in seat_ids(segment_id, assignment.seat_count):
        raise UnknownSeat(f"seat {seat_id!r} is not assigned to segment {segment_id!r}")
    key = (segment_id, seat_id)
    if key in session.commitments:
        raise DuplicateCommit(f"seat {seat_id!r} already committed for {segment_id!r}")
    if len(digest) != _DIGEST_LENGTH:
        raise ValueError("commitment digest must be 32 bytes")
    session.commitments[key] = bytes(digest)
    assert session.ledger is not None
    session.ledger.append(
        RecordKind.VOTE_COMMITTED.value,
        {
            "session_id": session.session_id,
            "segment_id": segment_id,
            "seat_id": seat_id,
            "digest": digest.hex(),
        },
    )
    return session


def begin_reveal(session: AuditSession) -> AuditSession:
    """Close the commit window.  No further commitments are accepted."""
    _require_phase(session, Phase.COMMITTING)
    session.phase = Phase.REVEALING
    return session


def reveal_vote(
    session: AuditSession, segment_id: str, seat_id: str, vote: Vote, nonce: bytes
) -> bool:
    """Disclose a vote and check it against the stored commitment.

    A mismatched reveal is not an exception: it is recorded on the
    ledger with ``valid=false`` and later treated as an incorrect vote.
    Returns whether the reveal matched.
    """
    _require_phase(session, Phase.REVEALING)
    key = (segment_id, seat_id)
    stored = session.commitments.get(key)
    if stored is None:
        raise NoCommitment(f"no commitment from seat {seat_id!r} for {segment_id!r}")
    if key in session.reveals:
        raise DuplicateReveal(f"seat {seat_id!r} already revealed for {segment_id!r}")
    expected = make_commitment(session.session_id, segment_id, seat_id, vote, nonce)
    valid = expected == stored
    session.reveals[key] = RevealedVote(vote=vote, nonce=bytes(nonce), valid=valid)
    assert session.ledger is not None
    session.ledger.append(
        RecordKind.VOTE_REVEALED.value,
        {
            "session_id": session.session_id,
            "segment_id": segment_id,
            "seat_id": seat_id,
            "vote": vote.value,
            "nonce": nonce.hex(),
            "valid": valid,
        },
    )
    return valid


def aggregate(session: AuditSession) -> tuple[dict[str, bool], bool]:
    """Decide every segment by quorum, then the trace by weighted share.

    Calling this ends the reveal window: seats without a valid reveal
    contribute nothing toward the quorum.  A segment passes when its
    valid pass-votes reach the quorum; the trace passes when the weight
    of passing segments is at least the beta share of all weight.
    """
    _require_phase(session, Phase.REVEALING)
    ledger = session.ledger
    assert ledger is not None
    for segment_id in sorted(session.plan):
        assignment = session.plan[segment_id]
        pass_votes = 0
        for seat_id in seat_ids(segment_id, assignment.seat_count):
            reveal = session.reveals.get((segment_id, seat_id))
            if reveal is not None and reveal.valid and reveal.vote is Vote.PASS:
                pass_votes += 1
        passed = pass_votes >= assignment.quorum
        session.verdicts[segment_id] = passed
        ledger.append(
            RecordKind.SEGMENT_DECIDED.value,
            {
                "session_id": session.session_id,
                "segment_id": segment_id,
                "passed": passed,
                "pass_votes": pass_votes,
                "quorum": assignment.quorum,
            },
        )
    total_weight = fsum(a.weight for a in session.plan.values())
    passed_weight = fsum(
        session.plan[s].weight for s, passed in session.verdicts.items() if passed
    )
    session.trace_verdict = passed_weight >= session.beta * total_weight
    ledger.append(
        RecordKind.TRACE_DECIDED.value,
        {
            "session_id": session.session_id,
            "trace_id": session.trace_id,
            "passed": session.trace_verdict,
            "passed_weight": passed_weight,
            "total_weight": total_weight,
            "beta": session.beta,
        },
    )
    session.phase = Phase.AGGREGATED
    return dict(session.verdicts), session.trace_verdict


def settle(
    session: AuditSession,
    econ: EconParams,
    ground_truth: Mapping[str, bool],
    reputations: MutableMapping[str, float],
    rng: np.random.Generator,
) -> list[LedgerRecord]:
    """Pay or slash every seat against ground truth and update reputations.

    A seat is correct when it revealed a valid vote agreeing with the
    segment's ground truth; unrevealed and mismatched seats are
    incorrect.  Correct seats earn the reward.  Incorrect seats are
    slashed with the reputation-dependent probability (drawn from
    ``rng``), evaluated at the reputation held before this settlement.
    Every seat gets a reputation update.  Returns the payoff records
    (rewards and slashes) appended to the ledger.
    """
    _require_phase(session, Phase.AGGREGATED)
    missing = sorted(set(session.plan) - set(ground_truth))
    if missing:
        raise ValueError(f"ground truth missing for segments: {missing}")
    ledger = session.ledger
    assert ledger is not None
    payoff_records: list[LedgerRecord] = []
    for segment_id in sorted(session.plan):
        truth = bool(ground_truth[segment_id])
        assignment = session.plan[segment_id]
        for seat_id in seat_ids(segment_id, assignment.seat_count):
            reveal = session.reveals.get((segment_id, seat_id))
            correct = (
                reveal is not None
                and reveal.valid
                and (reveal.vote is Vote.PASS) == truth
            )
            reputation = float(reputations.get(seat_id, 0.0))
            if correct:
                payoff_records.append(
                    ledger.append(
                        RecordKind.REWARD_PAID.value,
                        {
                            "session_id": session.session_id,
                            "segment_id": segment_id,
                            "seat_id": seat_id,
                            "amount": econ.reward,
                        },
                    )
                )
            else:
                probability = slash_probability(reputation, econ)
                if rng.random() < probability:
                    payoff_records.append(
                        ledger.append(
                            RecordKind.SLASHED.value,
                            {
                                "session_id": session.session_id,
                                "segment_id": segment_id,
                                "seat_id": seat_id,
                                "amount": econ.penalty,
                                "probability": probability,
                            },
                        )
                    )
            updated = update_reputation(reputation, correct, econ.reputation_step)
            reputations[seat_id] = updated
            ledger.append(
                RecordKind.REPUTATION_UPDATED.value,
                {
                    "session_id": session.session_id,
                    "segment_id": segment_id,
                    "seat_id": seat_id,
                    "previous": reputation,
                    "current": updated,
                    "correct": correct,
                },
            )
    session.phase = Phase.FINALIZED
    return payoff_records


# ---------------------------------------------------------------------------
# event-sourcing replay
# ---------------------------------------------------------------------------


def _advance_replay_phase(session: AuditSession, at_least: Phase) -> None:
    if _PHASE_ORDER[session.phase] < _PHASE_ORDER[at_least]:
        session.phase = at_least


def replay_ledger(records: Sequence[LedgerRecord]) -> dict[str, AuditSession]:
    """Rebuild session states purely from ledger records.

    The commit/reveal window boundary leaves no record of its own, so a
    session that committed but never revealed replays as Committing;
    any later record pins the phase unambiguously.  The result of a
    finished session compares equal to the live object.
    """
    sessions: dict[str, AuditSession] = {}
    for record in records:
        payload = record.payload
        kind = record.kind
        if kind == RecordKind.SESSION_CREATED.value:
            session = AuditSession(
                session_id=str(payload["session_id"]),
                trace_id=str(payload["trace_id"]),
                plan={},
                beta=float(payload["beta"]),
                phase=Phase.COMMITTING,
            )
            sessions[session.session_id] = session
            continue
        session = sessions.get(str(payload.get("session_id", "")))
        if session is None:
            raise ValueError(f"record {record.index} references an unknown session")
        if kind == RecordKind.SEAT_ASSIGNED.value:
            seats = payload["seats"]
            session.plan[str(payload["segment_id"])] = SeatAssignment(
                auditor_type=AuditorType(payload["auditor_type"]),
                seat_count=len(seats),
                quorum=int(payload["quorum"]),
                weight=float(payload["weight"]),
            )
        elif kind == RecordKind.VOTE_COMMITTED.value:
            key = (str(payload["segment_id"]), str(payload["seat_id"]))
            session.commitments[key] = bytes.fromhex(str(payload["digest"]))
        elif kind == RecordKind.VOTE_REVEALED.value:
            _advance_replay_phase(session, Phase.REVEALING)
            key = (str(payload["segment_id"]), str(payload["seat_id"]))
            session.reveals[key] = RevealedVote(
                vote=Vote(payload["vote"]),
                nonce=bytes.fromhex(str(payload["nonce"])),
                valid=bool(payload["valid"]),
            )
        elif kind == RecordKind.SEGMENT_DECIDED.value:
            session.verdicts[str(payload["segment_id"])] = bool(payload["passed"])
        elif kind == RecordKind.TRACE_DECIDED.value:
            session.trace_verdict = bool(payload["passed"])
            _advance_replay_phase(session, Phase.AGGREGATED)
        elif kind in (RecordKind.REWARD_PAID.value, RecordKind.SLASHED.value):
            _advance_replay_phase(session, Phase.FINALIZED)
        elif kind == RecordKind.REPUTATION_UPDATED.value:
            _advance_replay_phase(session, Phase.FINALIZED)
        else:
            raise ValueError(f"record {record.index} has unknown kind {kind!r}")
    return sessions
