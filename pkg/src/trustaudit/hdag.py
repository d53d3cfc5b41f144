"""Hierarchical reasoning-graph documents: parsing, validation, and audit planning.

A reasoning trace is stored as a JSON document holding typed nodes (goal down
to operation granularity) and directed edges between them.  Three edge
relationships express real dependencies (decomposes_to, depends_on, enables);
the rest (validates, exemplifies, refines, contradicts, or anything unknown)
are annotations and stay out of ordering and acyclity analysis.  This module
turns raw bytes into a typed document model, checks the structural invariants,
derives execution order for auditors, and maps each node onto a seat pool.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from .consensus import AuditorType, SeatPoolConfig

# Relationships that constrain ordering.  Everything else is annotation.
DEPENDENCY_RELATIONSHIPS = frozenset({"decomposes_to", "depends_on", "enables"})

ANNOTATION_RELATIONSHIPS = frozenset({"validates", "exemplifies", "refines", "contradicts"})

KNOWN_RELATIONSHIPS = DEPENDENCY_RELATIONSHIPS | ANNOTATION_RELATIONSHIPS

EDGE_STRENGTHS = frozenset({"weak", "medium", "strong"})


class ParseError(ValueError):
    """Input is not a JSON reasoning-graph document at all."""


class SchemaError(ParseError):
    """Document is JSON but a field is missing, mistyped, or out of range."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class CyclicGraph(Exception):
    """Dependency edges form a cycle; carries one offending node sequence."""

    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class MissingPool(KeyError):
    """No seat pool configured for an auditor type the document requires."""


class AbstractionLevel(Enum):
    GOAL = "GOAL"
    STRATEGY = "STRATEGY"
    TACTIC = "TACTIC"
    STEP = "STEP"
    OPERATION = "OPERATION"


class Complexity(Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


# JSON files use tier tags; configs and humans use the plain names.  Accept both.
_AUDITOR_JSON_NAMES = {
    AuditorType.COMPUTER: "T_Auto",
    AuditorType.LLM: "T_LLM",
    AuditorType.HUMAN: "T_Human",
}
_AUDITOR_FROM_STRING = {v: k for k, v in _AUDITOR_JSON_NAMES.items()}
_AUDITOR_FROM_STRING.update({t.value: t for t in AuditorType})


def auditor_type_from_string(raw: str) -> AuditorType:
    """Map either spelling ("T_Auto" or "Computer") onto the enum."""
    try:
        return _AUDITOR_FROM_STRING[raw]
    except KeyError:
        raise KeyError(f"unknown auditor type {raw!r}") from None


def auditor_type_json_name(auditor: AuditorType) -> str:
    return _AUDITOR_JSON_NAMES[auditor]


@dataclass
class HdagNode:
    id: str
    content: str
    abstraction_level: AbstractionLevel
    primary_auditor: AuditorType
    node_type: str = ""
    summary: str = ""
    secondary_auditors: list[AuditorType] = field(default_factory=list)
    complexity: Optional[Complexity] = None


@dataclass
class HdagEdge:
    from_id: str
    to_id: str
    relationship: str
    strength: Optional[str] = None
    confidence: Optional[float] = None

    @property
    def is_dependency(self) -> bool:
        return self.relationship in DEPENDENCY_RELATIONSHIPS


@dataclass
class HdagMetadata:
    total_nodes: int
    total_edges: int
    auditor_distribution: dict[AuditorType, int] = field(default_factory=dict)


@dataclass
class HdagDocument:
    nodes: list[HdagNode]
    edges: list[HdagEdge]
    metadata: Optional[HdagMetadata] = None
    title: str = ""

    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def dependency_edges(self) -> list[HdagEdge]:
        return [e for e in self.edges if e.is_dependency]


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str
    subjects: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


@dataclass
class VerificationFlow:
    entry_points: list[str]
    topological_order: list[str]
    parallel_groups: list[list[str]]


@dataclass(frozen=True)
class SeatAssignment:
    auditor_type: AuditorType
    seat_count: int
    quorum: int
    weight: float


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _require(obj: Mapping, key: str, kind, path: str):
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}.{key}", f"expected number, got {type(value).__name__}")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_node(raw: object, path: str) -> HdagNode:
    if not isinstance(raw, dict):
        raise SchemaError(path, "node must be an object")
    node_id = _require(raw, "id", str, path)
    content = _require(raw, "content", str, path)
    level_raw = _require(raw, "abstraction_level", str, path)
    try:
        level = AbstractionLevel(level_raw)
    except ValueError:
        raise SchemaError(f"{path}.abstraction_level", f"unknown level {level_raw!r}") from None
    auditor_raw = _require(raw, "primary_auditor", str, path)
    try:
        primary = auditor_type_from_string(auditor_raw)
    except KeyError:
        raise SchemaError(f"{path}.primary_auditor", f"unknown auditor type {auditor_raw!r}") from None

    secondary: list[AuditorType] = []
    if "secondary_auditors" in raw:
        raw_sec = raw["secondary_auditors"]
        if not isinstance(raw_sec, list):
            raise SchemaError(f"{path}.secondary_auditors", "expected list")
        for i, entry in enumerate(raw_sec):
            if not isinstance(entry, str):
                raise SchemaError(f"{path}.secondary_auditors[{i}]", "expected string")
            try:
                secondary.append(auditor_type_from_string(entry))
            except KeyError:
                raise SchemaError(
                    f"{path}.secondary_auditors[{i}]", f"unknown auditor type {entry!r}"
                ) from None

    complexity = None
    if raw.get("complexity") is not None:
        comp_raw = raw["complexity"]
        if not isinstance(comp_raw, str):
            raise SchemaError(f"{path}.complexity", "expected string")
        try:
            complexity = Complexity(comp_raw)
        except ValueError:
            raise SchemaError(f"{path}.complexity", f"unknown complexity {comp_raw!r}") from None

    node_type = raw.get("type", "")
    if not isinstance(node_type, str):
        raise SchemaError(f"{path}.type", "expected string")
    summary = raw.get("summary", "")
    if not isinstance(summary, str):
        raise SchemaError(f"{path}.summary", "expected string")

    return HdagNode(
        id=node_id,
        content=content,
        abstraction_level=level,
        primary_auditor=primary,
        node_type=node_type,
        summary=summary,
        secondary_auditors=secondary,
        complexity=complexity,
    )


def _parse_edge(raw: object, path: str) -> HdagEdge:
    if not isinstance(raw, dict):
        raise SchemaError(path, "edge must be an object")
    from_id = _require(raw, "from", str, path)
    to_id = _require(raw, "to", str, path)
    # Generators disagree on the key name for the edge relationship.
    if "relationship" in raw:
        relationship = _require(raw, "relationship", str, path)
    elif "type" in raw:
        relationship = _require(raw, "type", str, path)
    else:
        raise SchemaError(f"{path}.relationship", "missing required field")

    strength = raw.get("strength")
    if strength is not None:
        if not isinstance(strength, str) or strength not in EDGE_STRENGTHS:
            raise SchemaError(f"{path}.strength", f"expected one of {sorted(EDGE_STRENGTHS)}")

    confidence = None
    if raw.get("confidence") is not None:
        confidence = _require(raw, "confidence", float, path)
        if not 0.0 <= confidence <= 1.0:
            raise SchemaError(f"{path}.confidence", "must be within [0, 1]")

    return HdagEdge(from_id=from_id, to_id=to_id, relationship=relationship,
                    strength=strength, confidence=confidence)


def _parse_metadata(raw: object, path: str) -> HdagMetadata:
    if not isinstance(raw, dict):
        raise SchemaError(path, "metadata must be an object")
    total_nodes = _require(raw, "total_nodes", int, path)
    total_edges = _require(raw, "total_edges", int, path)
    distribution: dict[AuditorType, int] = {}
    if "auditor_distribution" in raw:
        raw_dist = raw["auditor_distribution"]
        if not isinstance(raw_dist, dict):
            raise SchemaError(f"{path}.auditor_distribution", "expected object")
        for key, count in raw_dist.items():
            try:
                auditor = auditor_type_from_string(key)
            except KeyError:
                raise SchemaError(
                    f"{path}.auditor_distribution.{key}", "unknown auditor type"
                ) from None
            if isinstance(count, bool) or not isinstance(count, int):
                raise SchemaError(f"{path}.auditor_distribution.{key}", "expected integer")
            distribution[auditor] = count
    return HdagMetadata(total_nodes=total_nodes, total_edges=total_edges,
                        auditor_distribution=distribution)


def parse_hdag(data: bytes | str) -> HdagDocument:
    """Decode a reasoning-graph JSON document into the typed model.

    Raises ParseError when the input is not JSON, and SchemaError (with a
    field path) when the JSON shape is wrong.  Unknown fields are ignored so
    documents from different generators stay readable.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc}") from None
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("$", "document root must be an object")

    raw_nodes = _require(raw, "nodes", list, "$")
    raw_edges = _require(raw, "edges", list, "$")

    nodes = [_parse_node(n, f"$.nodes[{i}]") for i, n in enumerate(raw_nodes)]
    edges = [_parse_edge(e, f"$.edges[{i}]") for i, e in enumerate(raw_edges)]

    seen: set[str] = set()
    for i, node in enumerate(nodes):
        if node.id in seen:
            raise SchemaError(f"$.nodes[{i}].id", f"duplicate node id {node.id!r}")
        seen.add(node.id)

    metadata = None
    if raw.get("metadata") is not None:
        metadata = _parse_metadata(raw["metadata"], "$.metadata")

    title = raw.get("title", "")
    if not isinstance(title, str):
        raise SchemaError("$.title", "expected string")

    return HdagDocument(nodes=nodes, edges=edges, metadata=metadata, title=title)


def serialize_hdag(doc: HdagDocument) -> str:
    """Inverse of parse_hdag: render the model back to document JSON."""
    out: dict = {}
    if doc.title:
        out["title"] = doc.title
    out["nodes"] = []
    for node in doc.nodes:
        entry: dict = {"id": node.id}
        if node.node_type:
            entry["type"] = node.node_type
        if node.summary:
            entry["summary"] = node.summary
        entry["content"] = node.content
        entry["abstraction_level"] = node.abstraction_level.value
        entry["primary_auditor"] = auditor_type_json_name(node.primary_auditor)
        if node.secondary_auditors:
            entry["secondary_auditors"] = [auditor_type_json_name(a) for a in node.secondary_auditors]
        if node.complexity is not None:
            entry["complexity"] = node.complexity.value
        out["nodes"].append(entry)
    out["edges"] = []
    for edge in doc.edges:
        entry = {"from": edge.from_id, "to": edge.to_id, "relationship": edge.relationship}
        if edge.strength is not None:
            entry["strength"] = edge.strength
        if edge.confidence is not None:
            entry["confidence"] = edge.confidence
        out["edges"].append(entry)
    if doc.metadata is not None:
        dist = {
            auditor_type_json_name(a): doc.metadata.auditor_distribution[a]
            for a in AuditorType
            if a in doc.metadata.auditor_distribution
        }
        out["metadata"] = {
            "total_nodes": doc.metadata.total_nodes,
            "total_edges": doc.metadata.total_edges,
            "auditor_distribution": dist,
        }
    return json.dumps(out, indent=2, ensure_ascii=False)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _dependency_adjacency(doc: HdagDocument) -> dict[str, list[str]]:
    """Forward adjacency over dependency edges, dropping dangling endpoints."""
    ids = set(doc.node_ids())
    adjacency: dict[str, list[str]] = {nid: [] for nid in ids}
    for edge in doc.dependency_edges():
        if edge.from_id in ids and edge.to_id in ids and edge.from_id != edge.to_id:
            adjacency[edge.from_id].append(edge.to_id)
    return adjacency


def _find_dependency_cycle(doc: HdagDocument) -> Optional[list[str]]:
    """Iterative DFS three-coloring; returns one cycle as a node id list."""
    adjacency = _dependency_adjacency(doc)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in adjacency}
    parent: dict[str, Optional[str]] = {}

    for root in sorted(adjacency):
        if color[root] != WHITE:
            continue
        stack: list[tuple[str, Iterable[str]]] = [(root, iter(adjacency[root]))]
        color[root] = GRAY
        parent[root] = None
        while stack:
            node, children = stack[-1]
            advanced = False
            for child in children:
                if color[child] == WHITE:
                    color[child] = GRAY
                    parent[child] = node
                    stack.append((child, iter(adjacency[child])))
                    advanced = True
                    break
                if color[child] == GRAY:
                    cycle = [child]
                    cursor = node
                    while cursor is not None and cursor != child:
                        cycle.append(cursor)
                        cursor = parent[cursor]
                    cycle.append(child)
                    cycle.reverse()
                    return cycle
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def _dependency_in_degrees(doc: HdagDocument) -> dict[str, int]:
    ids = set(doc.node_ids())
    degrees = {nid: 0 for nid in ids}
    for edge in doc.dependency_edges():
        if edge.from_id in ids and edge.to_id in ids and edge.from_id != edge.to_id:
            degrees[edge.to_id] += 1
    return degrees


def _undirected_components(doc: HdagDocument) -> list[set[str]]:
    ids = set(doc.node_ids())
    neighbors: dict[str, set[str]] = {nid: set() for nid in ids}
    for edge in doc.edges:
        if edge.from_id in ids and edge.to_id in ids and edge.from_id != edge.to_id:
            neighbors[edge.from_id].add(edge.to_id)
            neighbors[edge.to_id].add(edge.from_id)
    components = []
    unvisited = set(ids)
    while unvisited:
        start = unvisited.pop()
        component = {start}
        frontier = [start]
        while frontier:
            current = frontier.pop()
            for nxt in neighbors[current]:
                if nxt in unvisited:
                    unvisited.discard(nxt)
                    component.add(nxt)
                    frontier.append(nxt)
        components.append(component)
    return components


def validate_hdag(doc: HdagDocument) -> list[ValidationIssue]:
    """Check every structural invariant; an empty list means the document is valid.

    Checks, in order: node ids nonempty, edge endpoints resolve, no self
    loops, primary auditor not repeated among secondaries, dependency edges
    acyclic, every connected component anchored by a dependency entry node,
    and metadata totals agreeing with the collections.  The auditor
    distribution map inside metadata is generator-reported data and is not
    cross-checked against the node histogram.
    """
    issues: list[ValidationIssue] = []
    ids = set(doc.node_ids())

    for node in doc.nodes:
        if not node.id:
            issues.append(ValidationIssue("empty-node-id", "node with empty id", ()))
        if node.primary_auditor in node.secondary_auditors:
            issues.append(ValidationIssue(
                "auditor-overlap",
                f"node {node.id}: primary auditor repeated in secondary_auditors",
                (node.id,),
            ))

    for i, edge in enumerate(doc.edges):
        for endpoint in (edge.from_id, edge.to_id):
            if endpoint not in ids:
                issues.append(ValidationIssue(
                    "dangling-edge",
                    f"edge #{i} references missing node {endpoint!r}",
                    (edge.from_id, edge.to_id),
                ))
        if edge.from_id == edge.to_id:
            issues.append(ValidationIssue(
                "self-loop", f"edge #{i} is a self loop on {edge.from_id!r}", (edge.from_id,)
            ))

    cycle = _find_dependency_cycle(doc)
    if cycle is not None:
        issues.append(ValidationIssue(
            "dependency-cycle",
            "dependency edges form a cycle: " + " -> ".join(cycle),
            tuple(cycle),
        ))

    # Each component needs at least one node nothing depends on, otherwise
    # no auditor could ever start working on it.
    in_degree = _dependency_in_degrees(doc)
    for component in _undirected_components(doc):
        if not any(in_degree[nid] == 0 for nid in component):
            issues.append(ValidationIssue(
                "no-entry-node",
                "component has no dependency entry node: " + ", ".join(sorted(component)),
                tuple(sorted(component)),
            ))

    if doc.metadata is not None:
        if doc.metadata.total_nodes != len(doc.nodes):
            issues.append(ValidationIssue(
                "metadata-node-count",
                f"metadata says {doc.metadata.total_nodes} nodes, document has {len(doc.nodes)}",
                (),
            ))
        if doc.metadata.total_edges != len(doc.edges):
            issues.append(ValidationIssue(
                "metadata-edge-count",
                f"metadata says {doc.metadata.total_edges} edges, document has {len(doc.edges)}",
                (),
            ))

    return issues


# ---------------------------------------------------------------------------
# ordering and assignment
# ---------------------------------------------------------------------------


def verification_flow(doc: HdagDocument) -> VerificationFlow:
    """Derive audit scheduling structure from the dependency subgraph.

    entry_points are the nodes an audit can start from: zero dependency
    in-degree and at least one incident dependency edge.  Nodes touched only
    by annotation edges are scheduled (they appear in the order and in depth
    group zero) but are not called entries, except in the degenerate case of
    a document with no dependency edges at all, where every node is an entry.

    topological_order is a Kahn ordering with lexicographic tie-breaks, and
    parallel_groups buckets nodes by dependency depth, so each group is an
    antichain that can be audited concurrently.

    Raises CyclicGraph when the dependency edges contain a cycle.
    """
    cycle = _find_dependency_cycle(doc)
    if cycle is not None:
        raise CyclicGraph(cycle)

    adjacency = _dependency_adjacency(doc)
    in_degree = _dependency_in_degrees(doc)

    touched: set[str] = set()
    for source, targets in adjacency.items():
        if targets:
            touched.add(source)
            touched.update(targets)

    if touched:
        entry_points = sorted(nid for nid in adjacency if in_degree[nid] == 0 and nid in touched)
    else:
        entry_points = sorted(adjacency)

    remaining = dict(in_degree)
    frontier = sorted(nid for nid, deg in remaining.items() if deg == 0)
    heapq.heapify(frontier)
    order: list[str] = []
    depth = {nid: 0 for nid in frontier}
    while frontier:
        node = heapq.heappop(frontier)
        order.append(node)
        for child in adjacency[node]:
            remaining[child] -= 1
            depth[child] = max(depth.get(child, 0), depth[node] + 1)
            if remaining[child] == 0:
                heapq.heappush(frontier, child)

    groups: dict[int, list[str]] = {}
    for nid in order:
        groups.setdefault(depth[nid], []).append(nid)
    parallel_groups = [sorted(groups[d]) for d in sorted(groups)]

    return VerificationFlow(entry_points=entry_points, topological_order=order,
                            parallel_groups=parallel_groups)


def plan_assignments(
    doc: HdagDocument, pools: Mapping[AuditorType, SeatPoolConfig]
) -> dict[str, SeatAssignment]:
    """Assign every node a seat pool drawn from its primary auditor type.

    The quorum is computed in exact rational arithmetic, so ceil(tau * k)
    never suffers a floating-point boundary error.  Raises MissingPool when
    the document needs an auditor type the pool map does not provide.
    """
    plan: dict[str, SeatAssignment] = {}
    for node in doc.nodes:
        pool = pools.get(node.primary_auditor)
        if pool is None:
            raise MissingPool(f"no seat pool for auditor type {node.primary_auditor.value}")
        plan[node.id] = SeatAssignment(
            auditor_type=node.primary_auditor,
            seat_count=pool.seat_count,
            quorum=pool.quorum,
            weight=pool.weight,
        )
    return plan
