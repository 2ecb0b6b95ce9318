"""Timestamped scene graphs: the shared currency of every module.

A scene graph holds the entities visible at one timestep (objects, hands,
actions, UI elements, the user) and the directed relations between them.
Graphs are immutable; diffing, patching, similarity and the canonical text
form are all pure functions over them.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import CanonicalParseError, DiffConsistencyError, GraphValidationError

logger = logging.getLogger(__name__)

NODE_FEATURE_DIM = 64

ENTITY_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")
ENTITY_ID_MAX_LEN = 64

# Relation triple over node labels: (source_label, kind, target_label).
Triple = tuple[str, str, str]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, the engine's only hashing primitive."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


class NodeKind(str, Enum):
    OBJECT = "Object"
    HAND = "Hand"
    ACTION = "Action"
    UI_ELEMENT = "UiElement"
    USER = "User"


class EdgeKind(str, Enum):
    GRASPING = "grasping"
    NEXT_TO = "next_to"
    HOLDS = "holds"
    PERFORMS = "performs"
    ACTS_ON = "acts_on"
    RELATES_TO = "relates_to"
    LOOKING_AT = "looking_at"
    ATTENDING_TO = "attending_to"
    FIND = "find"
    NOTIFY = "notify"
    TO_BE_GRASPED = "to_be_grasped"


class EdgeCategory(str, Enum):
    PHYSICAL = "Physical"
    ATTENTIONAL = "Attentional"
    GUIDANCE = "Guidance"


# Closed kind -> category table; unknown kinds are rejected at construction.
KIND_CATEGORY: dict[EdgeKind, EdgeCategory] = {
    EdgeKind.GRASPING: EdgeCategory.PHYSICAL,
    EdgeKind.NEXT_TO: EdgeCategory.PHYSICAL,
    EdgeKind.HOLDS: EdgeCategory.PHYSICAL,
    EdgeKind.PERFORMS: EdgeCategory.PHYSICAL,
    EdgeKind.ACTS_ON: EdgeCategory.PHYSICAL,
    EdgeKind.RELATES_TO: EdgeCategory.PHYSICAL,
    EdgeKind.LOOKING_AT: EdgeCategory.ATTENTIONAL,
    EdgeKind.ATTENDING_TO: EdgeCategory.ATTENTIONAL,
    EdgeKind.FIND: EdgeCategory.GUIDANCE,
    EdgeKind.NOTIFY: EdgeCategory.GUIDANCE,
    EdgeKind.TO_BE_GRASPED: EdgeCategory.GUIDANCE,
}

HAND_SIDES = ("left", "right")
HAND_POSES = ("open", "pinch", "grasp")

# Buckets 56-60 carry a one-hot node-kind flag, 61-63 carry the position.
_KIND_BUCKET = {
    NodeKind.OBJECT: 56,
    NodeKind.HAND: 57,
    NodeKind.ACTION: 58,
    NodeKind.UI_ELEMENT: 59,
    NodeKind.USER: 60,
}
_POSITION_BUCKET = 61
_HASH_BUCKET_MASK = 0x3F


def valid_entity_id(value: str) -> bool:
    return (
        isinstance(value, str)
        and 0 < len(value) <= ENTITY_ID_MAX_LEN
        and ENTITY_ID_RE.match(value) is not None
    )


@dataclass(frozen=True)
class Node:
    """One entity in a scene graph.

    ``features`` is derived, never stored: a signed feature hash of the
    label tokens plus a kind flag and the raw position, so equal
    (label, kind, position) always yields bit-identical vectors.
    """

    id: str
    kind: NodeKind
    label: str
    position: tuple[float, float, float] | None = None
    attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.position is not None:
            object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    @cached_property
    def features(self) -> np.ndarray:
        vec = np.zeros(NODE_FEATURE_DIM, dtype=np.float64)
        for token in self.label.split():
            h = fnv1a64(token.encode("utf-8"))
            sign = 1.0 if (h & 1) == 0 else -1.0
            bucket = (h >> 1) & _HASH_BUCKET_MASK
            vec[bucket] += sign
        vec[_KIND_BUCKET[self.kind]] += 1.0
        if self.position is not None:
            vec[_POSITION_BUCKET:_POSITION_BUCKET + 3] += np.asarray(self.position)
        return vec

    def is_virtual(self) -> bool:
        return self.attributes.get("virtual") == "true"


@dataclass(frozen=True)
class Edge:
    """Directed relation between two nodes of one graph."""

    source: str
    kind: EdgeKind
    target: str
    category: EdgeCategory

    @classmethod
    def of(cls, source: str, kind: EdgeKind, target: str) -> "Edge":
        return cls(source, kind, target, KIND_CATEGORY[kind])

    def sort_key(self) -> tuple[str, str, str]:
        return (self.source, self.kind.value, self.target)


def _edge_sort_key(e: Edge) -> tuple[str, str, str]:
    return e.sort_key()


@dataclass(frozen=True)
class SceneGraph:
    """Entities and relations at one timestep.

    Nodes are kept sorted by id and edges by (source, kind, target), so
    structural equality is plain field equality regardless of the order
    the caller supplied. A graph carrying Guidance edges is a guidance
    graph; same type, extra edges.
    """

    t: int
    nodes: tuple[Node, ...] = ()
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=_edge_sort_key)))

    @cached_property
    def _by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> Node | None:
        return self._by_id.get(node_id)

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def nodes_of_kind(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def triples(self, include_guidance: bool = False) -> Counter:
        """Labeled relation-triple multiset over (source_label, kind, target_label)."""
        out: Counter = Counter()
        for e in self.edges:
            if not include_guidance and e.category == EdgeCategory.GUIDANCE:
                continue
            src, tgt = self._by_id.get(e.source), self._by_id.get(e.target)
            if src is None or tgt is None:
                continue
            out[(src.label, e.kind.value, tgt.label)] += 1
        return out

    def physical_triples(self) -> frozenset[Triple]:
        return frozenset(
            (self._by_id[e.source].label, e.kind.value, self._by_id[e.target].label)
            for e in self.edges
            if e.category == EdgeCategory.PHYSICAL
            and e.source in self._by_id
            and e.target in self._by_id
        )


@dataclass(frozen=True)
class GraphDiff:
    """Pure set delta between two graphs.

    A node whose id persists but whose value changed appears as a
    removal plus an addition. ``t_new`` carries the target timestep so
    patching reproduces the second graph exactly. ``magnitude`` counts
    added plus removed Physical edges only.
    """

    added_nodes: tuple[Node, ...]
    removed_nodes: tuple[Node, ...]
    added_edges: tuple[Edge, ...]
    removed_edges: tuple[Edge, ...]
    t_new: int
    magnitude: int

    def is_empty(self) -> bool:
        return not (self.added_nodes or self.removed_nodes or self.added_edges or self.removed_edges)


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by validate_graph."""

    code: str
    subject: str
    detail: str


def _node_violations(g: SceneGraph) -> list[Violation]:
    out: list[Violation] = []
    seen: dict[str, int] = {}
    for n in g.nodes:
        seen[n.id] = seen.get(n.id, 0) + 1
    for n in g.nodes:
        if not valid_entity_id(n.id):
            out.append(Violation("bad_id", n.id, f"node id {n.id!r} is not a valid entity id"))
        if seen[n.id] > 1:
            out.append(Violation("duplicate_id", n.id, f"node id {n.id!r} occurs {seen[n.id]} times"))
            seen[n.id] = 1  # report once
        if not n.label or n.label != n.label.lower():
            out.append(Violation("bad_label", n.id, f"node {n.id!r} label {n.label!r} must be non-empty lowercase"))
        if not np.isfinite(n.features).all():
            out.append(Violation("nonfinite_feature", n.id, f"node {n.id!r} has non-finite features"))
        if n.kind == NodeKind.HAND:
            if n.attributes.get("side") not in HAND_SIDES:
                out.append(Violation("hand_side", n.id, f"hand node {n.id!r} needs attribute side in {HAND_SIDES}"))
            if n.attributes.get("pose") not in HAND_POSES:
                out.append(Violation("hand_pose", n.id, f"hand node {n.id!r} needs attribute pose in {HAND_POSES}"))
        if n.kind == NodeKind.ACTION and not n.attributes.get("verb"):
            out.append(Violation("action_verb", n.id, f"action node {n.id!r} needs attribute verb"))
    return out


def _edge_violations(g: SceneGraph) -> list[Violation]:
    out: list[Violation] = []
    ids = {n.id for n in g.nodes}
    seen_triples: set[tuple[str, str, str]] = set()
    for e in g.edges:
        name = f"{e.source}-{e.kind.value}->{e.target}"
        for endpoint in (e.source, e.target):
            if endpoint not in ids:
                out.append(Violation("dangling_edge", endpoint, f"edge {name} references missing node {endpoint!r}"))
        if e.source == e.target:
            out.append(Violation("self_edge", e.source, f"edge {name} is a self loop"))
        if KIND_CATEGORY[e.kind] != e.category:
            out.append(
                Violation(
                    "kind_category",
                    name,
                    f"edge {name} has category {e.category.value}, kind {e.kind.value} requires "
                    f"{KIND_CATEGORY[e.kind].value}",
                )
            )
        triple = e.sort_key()
        if triple in seen_triples:
            out.append(Violation("duplicate_edge", name, f"edge {name} occurs more than once"))
        seen_triples.add(triple)
    return out


def validate_graph(g: SceneGraph) -> list[Violation]:
    """Return every invariant violation; an empty list means the graph is valid.

    Ordering is deterministic: graph-level first, then node violations
    sorted by node id, then edge violations sorted by (source, kind, target).
    """
    out: list[Violation] = []
    if not isinstance(g.t, int) or g.t < 0:
        out.append(Violation("bad_timestep", "t", f"timestep {g.t!r} must be a non-negative integer"))
    out.extend(_node_violations(g))
    out.extend(_edge_violations(g))
    return out


def ensure_valid(g: SceneGraph) -> SceneGraph:
    violations = validate_graph(g)
    if violations:
        raise GraphValidationError(violations)
    return g


def diff_graphs(a: SceneGraph, b: SceneGraph) -> GraphDiff:
    """Set-difference delta turning ``a`` into ``b``. Both graphs must be valid."""
    ensure_valid(a)
    ensure_valid(b)
    a_nodes = {n.id: n for n in a.nodes}
    b_nodes = {n.id: n for n in b.nodes}
    removed_nodes = tuple(n for n in a.nodes if b_nodes.get(n.id) != n)
    added_nodes = tuple(n for n in b.nodes if a_nodes.get(n.id) != n)
    a_edges, b_edges = set(a.edges), set(b.edges)
    removed_edges = tuple(sorted(a_edges - b_edges, key=_edge_sort_key))
    added_edges = tuple(sorted(b_edges - a_edges, key=_edge_sort_key))
    magnitude = sum(
        1 for e in added_edges + removed_edges if e.category == EdgeCategory.PHYSICAL
    )
    return GraphDiff(added_nodes, removed_nodes, added_edges, removed_edges, b.t, magnitude)


def apply_diff(a: SceneGraph, d: GraphDiff) -> SceneGraph:
    """Patch ``a`` with a delta produced against it (round-trips with diff_graphs)."""
    nodes = {n.id: n for n in a.nodes}
    for n in d.removed_nodes:
        if nodes.get(n.id) != n:
            raise DiffConsistencyError(f"cannot remove node {n.id!r}: not present with that value")
        del nodes[n.id]
    for n in d.added_nodes:
        nodes[n.id] = n
    edges = set(a.edges)
    for e in d.removed_edges:
        if e not in edges:
            raise DiffConsistencyError(
                f"cannot remove edge {e.source}-{e.kind.value}->{e.target}: not present"
            )
        edges.remove(e)
    edges.update(d.added_edges)
    return ensure_valid(SceneGraph(d.t_new, tuple(nodes.values()), tuple(edges)))


def graph_similarity(a: SceneGraph, b: SceneGraph) -> float:
    """Jaccard similarity of labeled relation-triple multisets, Guidance excluded.

    When both graphs carry no such edges the node label sets decide:
    equal sets score 1.0, otherwise their plain Jaccard.
    """
    ensure_valid(a)
    ensure_valid(b)
    ta, tb = a.triples(), b.triples()
    if not ta and not tb:
        la = {n.label for n in a.nodes}
        lb = {n.label for n in b.nodes}
        if la == lb:
            return 1.0
        if not la and not lb:
            return 1.0
        return len(la & lb) / len(la | lb)
    inter = sum((ta & tb).values())
    union = sum((ta | tb).values())
    return inter / union


def _node_to_obj(n: Node) -> dict:
    obj = {
        "id": n.id,
        "kind": n.kind.value,
        "label": n.label,
        "attributes": dict(sorted(n.attributes.items())),
    }
    if n.position is not None:
        obj["position"] = list(n.position)
    return obj


def canonical_encode(g: SceneGraph) -> bytes:
    """Canonical UTF-8 text form: sorted keys, sorted nodes/edges, shortest
    round-trip reals, features omitted. Equal graphs encode byte-identically."""
    ensure_valid(g)
    obj = {
        "t": g.t,
        "nodes": [_node_to_obj(n) for n in g.nodes],
        "edges": [
            {"source": e.source, "kind": e.kind.value, "target": e.target, "category": e.category.value}
            for e in g.edges
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False, ensure_ascii=False).encode(
        "utf-8"
    )


_KNOWN_GRAPH_KEYS = {"t", "nodes", "edges"}
_KNOWN_NODE_KEYS = {"id", "kind", "label", "position", "attributes", "features"}
_KNOWN_EDGE_KEYS = {"source", "kind", "target", "category"}


def _warn_unknown(keys, known, where: str) -> None:
    for key in sorted(set(keys) - known):
        logger.warning("ignoring unknown key %r in %s", key, where)


def _parse_position(raw, where: str):
    if raw is None:
        return None
    if not isinstance(raw, list) or len(raw) != 3 or not all(isinstance(c, (int, float)) for c in raw):
        raise CanonicalParseError(f"{where}: position must be a 3-array of numbers")
    return tuple(float(c) for c in raw)


def canonical_decode(data: bytes | str) -> SceneGraph:
    """Inverse of canonical_encode; tolerant of key order, strict on structure.

    Unknown keys are ignored with a warning. Malformed text raises
    CanonicalParseError with the position; a well-formed object that
    violates graph invariants raises GraphValidationError.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CanonicalParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(obj, dict):
        raise CanonicalParseError("top level must be an object")
    _warn_unknown(obj.keys(), _KNOWN_GRAPH_KEYS, "graph")
    t = obj.get("t")
    if not isinstance(t, int):
        raise CanonicalParseError("key 't' must be an integer")
    nodes = []
    for i, raw in enumerate(obj.get("nodes", [])):
        where = f"nodes[{i}]"
        if not isinstance(raw, dict):
            raise CanonicalParseError(f"{where}: node must be an object")
        _warn_unknown(raw.keys(), _KNOWN_NODE_KEYS, where)
        try:
            kind = NodeKind(raw.get("kind"))
        except ValueError:
            raise CanonicalParseError(f"{where}: unknown node kind {raw.get('kind')!r}") from None
        attrs = raw.get("attributes", {})
        if not isinstance(attrs, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()
        ):
            raise CanonicalParseError(f"{where}: attributes must map strings to strings")
        if not isinstance(raw.get("id"), str) or not isinstance(raw.get("label"), str):
            raise CanonicalParseError(f"{where}: id and label must be strings")
        nodes.append(
            Node(
                id=raw["id"],
                kind=kind,
                label=raw["label"],
                position=_parse_position(raw.get("position"), where),
                attributes=dict(attrs),
            )
        )
    edges = []
    for i, raw in enumerate(obj.get("edges", [])):
        where = f"edges[{i}]"
        if not isinstance(raw, dict):
            raise CanonicalParseError(f"{where}: edge must be an object")
        _warn_unknown(raw.keys(), _KNOWN_EDGE_KEYS, where)
        try:
            kind = EdgeKind(raw.get("kind"))
        except ValueError:
            raise CanonicalParseError(f"{where}: unknown edge kind {raw.get('kind')!r}") from None
        try:
            category = EdgeCategory(raw.get("category", KIND_CATEGORY[kind].value))
        except ValueError:
            raise CanonicalParseError(f"{where}: unknown edge category {raw.get('category')!r}") from None
        if not isinstance(raw.get("source"), str) or not isinstance(raw.get("target"), str):
            raise CanonicalParseError(f"{where}: source and target must be strings")
        edges.append(Edge(raw["source"], kind, raw["target"], category))
    return ensure_valid(SceneGraph(t, tuple(nodes), tuple(edges)))


def gaze_angle_deg(direction, origin, point) -> float:
    """Angle in degrees between a gaze ray and the direction to a point."""
    d = np.asarray(point, dtype=float) - np.asarray(origin, dtype=float)
    norm = float(np.linalg.norm(d))
    if norm < 1e-12:
        return 0.0
    u = np.asarray(direction, dtype=float)
    cos = float(np.dot(d, u) / (norm * float(np.linalg.norm(u))))
    return math.degrees(math.acos(max(-1.0, min(1.0, cos))))
