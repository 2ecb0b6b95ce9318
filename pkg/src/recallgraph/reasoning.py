"""Plan inference, live progress tracking, and next-step guidance.

A stored episode is segmented into steps at physical-interaction change
points; a live session then folds incoming graphs through a tolerance-
windowed tracker that never regresses, rides out short off-task stretches,
and skips over a step the user demonstrably reordered. Guidance comes back
as the current graph augmented with find / notify / to_be_grasped edges.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .errors import GraphValidationError, OracleScaleError, UnplannableEpisodeError
from .memory import Episode
from .scene_graph import (
    Edge,
    EdgeKind,
    Node,
    NodeKind,
    SceneGraph,
    Triple,
    diff_graphs,
    ensure_valid,
    validate_graph,
)

logger = logging.getLogger(__name__)

# Edge kinds whose appearance marks a step boundary: the user physically
# committed to something new.
BOUNDARY_KINDS = frozenset({EdgeKind.GRASPING.value, EdgeKind.ACTS_ON.value, EdgeKind.NEXT_TO.value})

COMPLETION_NODE_ID = "task_complete"
VIRTUAL_PREFIX = "virtual_"


@dataclass(frozen=True)
class Step:
    """One inferred step: the physical triples the user newly created in
    its span, plus what held when the span ended."""

    index: int
    required_triples: frozenset[Triple]
    postcondition_triples: frozenset[Triple]
    span: tuple[int, int]
    description: str


@dataclass(frozen=True)
class TaskPlan:
    """Ordered steps recovered from one episode.

    ``entity_refs`` keeps each entity label's feature vector from the
    episode so live guidance can disambiguate duplicate labels.
    """

    episode_id: str
    steps: tuple[Step, ...]
    entities: frozenset[str]
    entity_refs: dict[str, tuple[float, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class TrackerConfig:
    """Tolerance windows for progress tracking; frame units throughout."""

    satisfy_window: int = 5
    memory_window: int = 30
    off_task_window: int = 20
    skip_window: int = 10
    confidence_alpha: float = 0.3
    segment_threshold: int = 1
    min_segment_frames: int = 2

    @classmethod
    def from_mapping(cls, raw: dict) -> "TrackerConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        return cls(**known)


@dataclass(frozen=True)
class ProgressState:
    """Live pointer into a plan plus the evidence window behind it."""

    current_step: int = 0
    satisfied: tuple[bool, ...] = ()
    skipped: tuple[bool, ...] = ()
    off_task: bool = False
    idle_frames: int = 0
    confidence: float = 0.0
    history: tuple[frozenset[Triple], ...] = ()
    lookahead_hit: bool = False
    lookahead_wait: int = 0

    @classmethod
    def fresh(cls, plan: TaskPlan) -> "ProgressState":
        n = len(plan.steps)
        return cls(satisfied=(False,) * n, skipped=(False,) * n)

    def is_complete(self, plan: TaskPlan) -> bool:
        return self.current_step >= len(plan.steps)

    def steps_completed(self) -> int:
        return sum(self.satisfied)


def _describe_triple(triple: Triple) -> str:
    src, kind, tgt = triple
    if kind == EdgeKind.GRASPING.value:
        return f"grasp {tgt}"
    if kind == EdgeKind.ACTS_ON.value:
        return f"{src} {tgt}"
    if kind == EdgeKind.PERFORMS.value:
        return f"{tgt}"
    return f"{src} {kind} {tgt}"


def _describe_step(required: frozenset[Triple]) -> str:
    ordered = sorted(required, key=lambda tr: (_KIND_RANK.get(tr[1], 9), tr))
    return "; ".join(_describe_triple(tr) for tr in ordered[:2])


_KIND_RANK = {
    EdgeKind.GRASPING.value: 0,
    EdgeKind.ACTS_ON.value: 1,
    EdgeKind.NEXT_TO.value: 2,
    EdgeKind.HOLDS.value: 3,
    EdgeKind.RELATES_TO.value: 4,
    EdgeKind.PERFORMS.value: 5,
}


def infer_task_plan(
    episode: Episode, cfg: TrackerConfig | None = None
) -> TaskPlan:
    """Segment an episode into steps at physical-interaction change points.

    A boundary is cut wherever the frame-to-frame physical-edge delta
    reaches the threshold and the additions include a grasping, acts_on
    or next_to edge. Undersized segments merge into their successor, and
    segments contributing no new physical triples merge forward, so every
    resulting step demands something.
    """
    cfg = cfg or TrackerConfig()
    graphs = episode.graphs
    triple_sets = [g.physical_triples() for g in graphs]
    if not any(triple_sets):
        raise UnplannableEpisodeError(
            f"episode {episode.meta.id} has no physical interaction edges to plan from"
        )

    boundaries = [0]
    for i in range(1, len(graphs)):
        delta = diff_graphs(graphs[i - 1], graphs[i])
        if delta.magnitude < cfg.segment_threshold:
            continue
        added_kinds = {e.kind.value for e in delta.added_edges}
        if added_kinds & BOUNDARY_KINDS:
            boundaries.append(i)
    spans = [(start, end - 1) for start, end in zip(boundaries, boundaries[1:] + [len(graphs)])]

    # Undersized segments merge into their successor (predecessor for the last).
    merged: list[tuple[int, int]] = []
    pending: tuple[int, int] | None = None
    for span in spans:
        if pending is not None:
            span = (pending[0], span[1])
            pending = None
        if span[1] - span[0] + 1 < cfg.min_segment_frames:
            pending = span
        else:
            merged.append(span)
    if pending is not None:
        if merged:
            merged[-1] = (merged[-1][0], pending[1])
        else:
            merged.append(pending)

    def new_triples(span: tuple[int, int]) -> frozenset[Triple]:
        out: set[Triple] = set()
        for i in range(span[0], span[1] + 1):
            before = triple_sets[i - 1] if i > 0 else frozenset()
            out |= triple_sets[i] - before
        return frozenset(out)

    # Segments with nothing new merge forward.
    final: list[tuple[int, int]] = []
    carry: tuple[int, int] | None = None
    for span in merged:
        if carry is not None:
            span = (carry[0], span[1])
            carry = None
        if not new_triples(span):
            carry = span
        else:
            final.append(span)
    if carry is not None:
        if final:
            final[-1] = (final[-1][0], carry[1])
        else:
            raise UnplannableEpisodeError(
                f"episode {episode.meta.id} has no physical interaction edges to plan from"
            )

    steps = []
    for index, span in enumerate(final):
        required = new_triples(span)
        steps.append(
            Step(
                index=index,
                required_triples=required,
                postcondition_triples=triple_sets[span[1]],
                span=span,
                description=_describe_step(required),
            )
        )

    # Plan entities are the task's things, not the user's own body or the
    # verb vocabulary: a grasp of some unrelated object must still read as
    # off-task, so only Object/UiElement labels count as plan-relevant.
    kind_by_label: dict[str, NodeKind] = {}
    for g in graphs:
        for node in g.nodes:
            kind_by_label.setdefault(node.label, node.kind)
    mentioned: set[str] = set()
    for step in steps:
        for src, _, tgt in step.required_triples:
            mentioned.add(src)
            mentioned.add(tgt)
    entities = {
        label
        for label in mentioned
        if kind_by_label.get(label) in (NodeKind.OBJECT, NodeKind.UI_ELEMENT)
    }
    entity_refs: dict[str, tuple[float, ...]] = {}
    for g in graphs:
        for node in g.nodes:
            if node.label in entities:
                entity_refs[node.label] = tuple(float(x) for x in node.features)
    return TaskPlan(episode.meta.id, tuple(steps), frozenset(entities), entity_refs)


def _window(history: tuple[frozenset[Triple], ...], size: int) -> frozenset[Triple]:
    out: set[Triple] = set()
    for entry in history[-size:]:
        out |= entry
    return frozenset(out)


def track_progress(
    state: ProgressState, plan: TaskPlan, g: SceneGraph, cfg: TrackerConfig | None = None
) -> ProgressState:
    """Fold one observed graph into the progress state. Pure; returns a new state.

    The pointer advances when every required triple of the current step
    appears in the union of the last few observations; it never regresses.
    A fully-evidenced next step latches a lookahead, and if the current
    step stays unsatisfied long enough it is marked skipped-satisfied and
    the pointer jumps past both. Frames touching no plan entity count
    toward the off-task window; while off-task the pointer is frozen.
    """
    cfg = cfg or TrackerConfig()
    violations = validate_graph(g)
    if violations:
        raise GraphValidationError(violations)

    observed = g.physical_triples()
    history = (state.history + (observed,))[-cfg.memory_window:]
    relevant = any(src in plan.entities or tgt in plan.entities for src, _, tgt in observed)
    idle = 0 if relevant else state.idle_frames + 1
    off_task = (not relevant) and (state.off_task or idle >= cfg.off_task_window)

    satisfied = list(state.satisfied)
    skipped = list(state.skipped)
    k = state.current_step
    look_hit, look_wait = state.lookahead_hit, state.lookahead_wait
    n = len(plan.steps)
    window = _window(history, cfg.satisfy_window)

    if not off_task and k < n:
        def advance_direct(k: int) -> int:
            nonlocal look_hit, look_wait
            while k < n and plan.steps[k].required_triples <= window:
                satisfied[k] = True
                k += 1
                look_hit, look_wait = False, 0
            return k

        k = advance_direct(k)
        if k < n and k + 1 < n and plan.steps[k + 1].required_triples <= window:
            if not look_hit:
                look_hit, look_wait = True, 0
            else:
                look_wait += 1
        elif look_hit:
            look_wait += 1
        if look_hit and look_wait >= cfg.skip_window and k + 1 < n:
            satisfied[k] = True
            skipped[k] = True
            satisfied[k + 1] = True
            k += 2
            look_hit, look_wait = False, 0
            k = advance_direct(k)

    if k >= n:
        coverage = 1.0
    else:
        required = plan.steps[k].required_triples
        coverage = len(required & window) / len(required) if required else 1.0
    confidence = (1 - cfg.confidence_alpha) * state.confidence + cfg.confidence_alpha * coverage

    return replace(
        state,
        current_step=k,
        satisfied=tuple(satisfied),
        skipped=tuple(skipped),
        off_task=off_task,
        idle_frames=idle,
        confidence=confidence,
        history=history,
        lookahead_hit=look_hit,
        lookahead_wait=look_wait,
    )


def _sanitize_id(label: str) -> str:
    cleaned = "".join(c if c.isalnum() or c in "_.-" else "_" for c in label)
    return cleaned or "entity"


def _resolve_label(label: str, g: SceneGraph, refs: dict[str, tuple[float, ...]]) -> Node | None:
    """Node of ``g`` carrying the label; duplicate labels break ties by
    feature cosine against the episode's node, then by id."""
    candidates = [n for n in g.nodes if n.label == label and not n.is_virtual()]
    if not candidates:
        return None
    if len(candidates) == 1:
        return candidates[0]
    ref = refs.get(label)
    if ref is None:
        return min(candidates, key=lambda n: n.id)
    ref_vec = np.asarray(ref)
    ref_norm = float(np.linalg.norm(ref_vec))

    def closeness(n: Node) -> tuple[float, str]:
        vec = n.features
        norm = float(np.linalg.norm(vec))
        cos = float(np.dot(vec, ref_vec) / (norm * ref_norm)) if norm > 0 and ref_norm > 0 else 0.0
        return (-cos, n.id)

    return min(candidates, key=closeness)


def plan_action(
    state: ProgressState, plan: TaskPlan, g: SceneGraph, cfg: TrackerConfig | None = None
) -> SceneGraph:
    """Current graph plus guidance edges for the step's unmet triples.

    The target label of each unmet triple resolves against the live graph:
    visible targets get a to_be_grasped or notify edge from the user,
    unresolved ones a virtual placeholder with a find edge. Triples whose
    target is an action verb (performs) are side effects of acting and
    yield no guidance. Once complete, a single completion notice remains.
    """
    cfg = cfg or TrackerConfig()
    ensure_valid(g)
    nodes: dict[str, Node] = {n.id: n for n in g.nodes}
    edges: set[Edge] = set(g.edges)
    user = next((n for n in g.nodes if n.kind == NodeKind.USER), None)
    user_id = user.id if user else None

    if user_id is None:
        return ensure_valid(SceneGraph(g.t, tuple(nodes.values()), tuple(edges)))

    if state.is_complete(plan):
        if COMPLETION_NODE_ID not in nodes:
            nodes[COMPLETION_NODE_ID] = Node(
                COMPLETION_NODE_ID, NodeKind.UI_ELEMENT, "task complete", None, {"virtual": "true"}
            )
        edges.add(Edge.of(user_id, EdgeKind.NOTIFY, COMPLETION_NODE_ID))
        return ensure_valid(SceneGraph(g.t, tuple(nodes.values()), tuple(edges)))

    step = plan.steps[state.current_step]
    window = _window(state.history, cfg.satisfy_window)
    for triple in sorted(step.required_triples):
        if triple in window:
            continue
        _, kind, target_label = triple
        if kind == EdgeKind.PERFORMS.value:
            continue
        target = _resolve_label(target_label, g, plan.entity_refs)
        if target is not None and target.id != user_id:
            guide = EdgeKind.TO_BE_GRASPED if kind == EdgeKind.GRASPING.value else EdgeKind.NOTIFY
            edges.add(Edge.of(user_id, guide, target.id))
        else:
            placeholder_id = f"{VIRTUAL_PREFIX}{_sanitize_id(target_label)}"
            if placeholder_id not in nodes:
                nodes[placeholder_id] = Node(
                    placeholder_id, NodeKind.OBJECT, target_label, None, {"virtual": "true"}
                )
            edges.add(Edge.of(user_id, EdgeKind.FIND, placeholder_id))
    return ensure_valid(SceneGraph(g.t, tuple(nodes.values()), tuple(edges)))


@dataclass(frozen=True)
class Alignment:
    """Best monotone split of an observation sequence into plan steps."""

    spans: tuple[tuple[int, int], ...]
    scores: tuple[float, ...]
    total: float

    def covered_steps(self) -> frozenset[int]:
        return frozenset(i for i, s in enumerate(self.scores) if s == 1.0)


MAX_ORACLE_STEPS = 8
MAX_ORACLE_FRAMES = 200
_ENUMERATION_LIMIT = 300_000


def brute_force_align(plan: TaskPlan, graphs) -> Alignment:
    """Exhaustive best-scoring split of the observations into contiguous,
    ordered blocks, one per step; the independent yardstick for the online
    tracker. Ties resolve to the earliest boundaries. Refuses inputs
    beyond the exhaustive scale bounds.
    """
    graphs = list(graphs)
    n = len(graphs)
    s = len(plan.steps)
    if s > MAX_ORACLE_STEPS or n > MAX_ORACLE_FRAMES:
        raise OracleScaleError(
            f"alignment bound exceeded: {s} steps (max {MAX_ORACLE_STEPS}), {n} frames (max {MAX_ORACLE_FRAMES})"
        )
    if n < s:
        raise OracleScaleError(f"cannot split {n} frames into {s} non-empty blocks")
    observed = [g.physical_triples() for g in graphs]

    # Per step, per required triple: prefix counts of frames containing it.
    req_lists = [sorted(step.required_triples) for step in plan.steps]
    prefix: list[list[list[int]]] = []
    for req in req_lists:
        rows = []
        for triple in req:
            row = [0]
            for frame in observed:
                row.append(row[-1] + (1 if triple in frame else 0))
            rows.append(row)
        prefix.append(rows)

    def block_score(k: int, lo: int, hi: int) -> float:
        rows = prefix[k]
        if not rows:
            return 1.0
        hit = sum(1 for row in rows if row[hi] > row[lo])
        return hit / len(rows)

    if s == 1:
        return Alignment(((0, n - 1),), (block_score(0, 0, n),), block_score(0, 0, n))

    if math.comb(n - 1, s - 1) <= _ENUMERATION_LIMIT:
        best: tuple[float, tuple[int, ...]] | None = None
        for cuts in combinations(range(1, n), s - 1):
            total = block_score(0, 0, cuts[0])
            for k in range(1, s - 1):
                total += block_score(k, cuts[k - 1], cuts[k])
            total += block_score(s - 1, cuts[-1], n)
            if best is None or total > best[0] or (total == best[0] and cuts < best[1]):
                best = (total, cuts)
        assert best is not None
        cuts = best[1]
    else:
        # Same objective solved exactly by dynamic programming; tie-break
        # keeps the lexicographically smallest boundary tuple.
        NEG = float("-inf")
        table: list[list[tuple[float, tuple[int, ...]]]] = [
            [(NEG, ())] * (n + 1) for _ in range(s + 1)
        ]
        table[0][0] = (0.0, ())
        for k in range(1, s + 1):
            for i in range(k, n + 1):
                if s - k > n - i:
                    continue
                best_entry = (NEG, ())
                for j in range(k - 1, i):
                    prev_score, prev_cuts = table[k - 1][j]
                    if prev_score == NEG:
                        continue
                    cand = (
                        prev_score + block_score(k - 1, j, i),
                        prev_cuts + ((j,) if k > 1 else ()),
                    )
                    if cand[0] > best_entry[0] or (
                        cand[0] == best_entry[0] and cand[1] < best_entry[1]
                    ):
                        best_entry = cand
                table[k][i] = best_entry
        _, cuts = table[s][n]

    bounds = [0, *cuts, n]
    spans = tuple((bounds[i], bounds[i + 1] - 1) for i in range(s))
    scores = tuple(block_score(k, bounds[k], bounds[k + 1]) for k in range(s))
    return Alignment(spans, scores, sum(scores))
