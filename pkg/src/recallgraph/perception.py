"""Egocentric event-stream parsing and per-frame scene graph construction.

Events arrive pre-detected (labels, positions, gaze rays, hand poses,
transcripts) as line-delimited JSON records. Each frame folds into one
valid scene graph: attention from the gaze ray, grasps from hand pose and
proximity, adjacency from pairwise object distance.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

from .errors import StreamFormatError
from .scene_graph import (
    Edge,
    EdgeKind,
    Node,
    NodeKind,
    SceneGraph,
    ensure_valid,
    gaze_angle_deg,
    valid_entity_id,
)

logger = logging.getLogger(__name__)

USER_NODE_ID = "user"
DETECTION_CATEGORIES = ("object", "ui_element")

# Persistence counter for sustained gaze, carried frame to frame on the
# User node as "<target_id>:<consecutive frames>".
ATTENTION_STREAK_ATTR = "attention_streak"
UTTERANCES_ATTR = "utterances"


@dataclass(frozen=True)
class Detection:
    kind = "detection"
    t: int
    entity_id: str
    label: str
    category: str
    position: tuple[float, float, float]
    confidence: float


@dataclass(frozen=True)
class Gaze:
    kind = "gaze"
    t: int
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]


@dataclass(frozen=True)
class HandState:
    kind = "hand"
    t: int
    side: str
    position: tuple[float, float, float]
    pose: str


@dataclass(frozen=True)
class Speech:
    kind = "speech"
    t: int
    text: str


@dataclass(frozen=True)
class UserAction:
    kind = "user_action"
    t: int
    verb: str
    subject_id: str
    object_id: str | None = None
    relation: str | None = None


EgoEvent = Detection | Gaze | HandState | Speech | UserAction


@dataclass(frozen=True)
class EventFrame:
    """All events sharing one timestep."""

    t: int
    events: tuple[EgoEvent, ...]

    @property
    def detections(self) -> list[Detection]:
        return [e for e in self.events if isinstance(e, Detection)]

    @property
    def gaze(self) -> Gaze | None:
        for e in self.events:
            if isinstance(e, Gaze):
                return e
        return None

    @property
    def hands(self) -> list[HandState]:
        return [e for e in self.events if isinstance(e, HandState)]

    @property
    def speeches(self) -> list[Speech]:
        return [e for e in self.events if isinstance(e, Speech)]

    @property
    def actions(self) -> list[UserAction]:
        return [e for e in self.events if isinstance(e, UserAction)]


@dataclass(frozen=True)
class PerceptionConfig:
    """Thresholds for edge inference; every value is config-file overridable."""

    min_confidence: float = 0.5
    grasp_radius: float = 0.15
    proximity_radius: float = 0.30
    gaze_cone_deg: float = 10.0
    attention_frames: int = 3

    @classmethod
    def from_mapping(cls, raw: dict) -> "PerceptionConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        return cls(**known)


def _vec3(raw, line: int, fieldname: str) -> tuple[float, float, float]:
    if not isinstance(raw, list) or len(raw) != 3 or not all(isinstance(c, (int, float)) for c in raw):
        raise StreamFormatError(f"field {fieldname!r} must be a 3-array of numbers", line)
    vec = tuple(float(c) for c in raw)
    if not all(math.isfinite(c) for c in vec):
        raise StreamFormatError(f"field {fieldname!r} must be finite", line)
    return vec


def _require(raw: dict, fieldname: str, typ, line: int):
    value = raw.get(fieldname)
    if not isinstance(value, typ):
        raise StreamFormatError(f"field {fieldname!r} missing or not {typ.__name__}", line)
    return value


_KNOWN_FIELDS = {
    "detection": {"t", "kind", "entity_id", "label", "category", "position", "confidence"},
    "gaze": {"t", "kind", "origin", "direction"},
    "hand": {"t", "kind", "side", "position", "pose"},
    "speech": {"t", "kind", "text"},
    "user_action": {"t", "kind", "verb", "subject_id", "object_id", "relation"},
}


def parse_event(raw: dict, line: int = 0) -> EgoEvent:
    """Validate one record against its kind's schema and build the event."""
    kind = raw.get("kind")
    if kind not in _KNOWN_FIELDS:
        raise StreamFormatError(f"unknown event kind {kind!r}", line)
    for key in sorted(set(raw) - _KNOWN_FIELDS[kind]):
        logger.warning("line %d: ignoring unknown field %r on %s event", line, key, kind)
    t = raw.get("t")
    if not isinstance(t, int) or t < 0:
        raise StreamFormatError("field 't' must be a non-negative integer", line)
    if kind == "detection":
        entity_id = _require(raw, "entity_id", str, line)
        if not valid_entity_id(entity_id):
            raise StreamFormatError(f"field 'entity_id' value {entity_id!r} is not a valid entity id", line)
        category = _require(raw, "category", str, line)
        if category not in DETECTION_CATEGORIES:
            raise StreamFormatError(f"field 'category' must be one of {DETECTION_CATEGORIES}", line)
        confidence = raw.get("confidence")
        if not isinstance(confidence, (int, float)) or not 0.0 <= confidence <= 1.0:
            raise StreamFormatError("field 'confidence' must be a number in [0, 1]", line)
        return Detection(
            t=t,
            entity_id=entity_id,
            label=_require(raw, "label", str, line),
            category=category,
            position=_vec3(raw.get("position"), line, "position"),
            confidence=float(confidence),
        )
    if kind == "gaze":
        direction = _vec3(raw.get("direction"), line, "direction")
        norm = math.sqrt(sum(c * c for c in direction))
        if abs(norm - 1.0) > 1e-6:
            raise StreamFormatError(f"field 'direction' must have unit norm (got {norm!r})", line)
        return Gaze(t=t, origin=_vec3(raw.get("origin"), line, "origin"), direction=direction)
    if kind == "hand":
        side = _require(raw, "side", str, line)
        if side not in ("left", "right"):
            raise StreamFormatError("field 'side' must be 'left' or 'right'", line)
        pose = _require(raw, "pose", str, line)
        if pose not in ("open", "pinch", "grasp"):
            raise StreamFormatError("field 'pose' must be one of open/pinch/grasp", line)
        return HandState(t=t, side=side, position=_vec3(raw.get("position"), line, "position"), pose=pose)
    if kind == "speech":
        return Speech(t=t, text=_require(raw, "text", str, line))
    for optional in ("object_id", "relation"):
        if raw.get(optional) is not None and not isinstance(raw[optional], str):
            raise StreamFormatError(f"field {optional!r} must be a string when present", line)
    return UserAction(
        t=t,
        verb=_require(raw, "verb", str, line),
        subject_id=_require(raw, "subject_id", str, line),
        object_id=raw.get("object_id"),
        relation=raw.get("relation"),
    )


def event_to_record(event: EgoEvent) -> dict:
    """Flat JSON record for one event; inverse of parse_event."""
    rec: dict = {"t": event.t, "kind": event.kind}
    if isinstance(event, Detection):
        rec.update(
            entity_id=event.entity_id,
            label=event.label,
            category=event.category,
            position=list(event.position),
            confidence=event.confidence,
        )
    elif isinstance(event, Gaze):
        rec.update(origin=list(event.origin), direction=list(event.direction))
    elif isinstance(event, HandState):
        rec.update(side=event.side, position=list(event.position), pose=event.pose)
    elif isinstance(event, Speech):
        rec.update(text=event.text)
    else:
        rec.update(verb=event.verb, subject_id=event.subject_id)
        if event.object_id is not None:
            rec["object_id"] = event.object_id
        if event.relation is not None:
            rec["relation"] = event.relation
    return rec


def serialize_events(events) -> bytes:
    """Canonical JSONL bytes for a sequence of events (one record per line)."""
    lines = [
        json.dumps(event_to_record(e), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        for e in events
    ]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def _check_frame_invariants(t: int, events: list[EgoEvent], line_of: dict) -> None:
    gazes = [e for e in events if isinstance(e, Gaze)]
    if len(gazes) > 1:
        raise StreamFormatError(f"frame t={t} has {len(gazes)} gaze events (at most one)", line_of[id(gazes[1])])
    sides: dict[str, int] = {}
    for e in events:
        if isinstance(e, HandState):
            sides[e.side] = sides.get(e.side, 0) + 1
            if sides[e.side] > 1:
                raise StreamFormatError(f"frame t={t} has duplicate hand events for side {e.side!r}", line_of[id(e)])


def parse_event_stream(data: bytes | str) -> list[EventFrame]:
    """Parse JSONL input into frames grouped by timestep, sorted ascending.

    Non-monotone timesteps are accepted and re-sorted with a warning;
    malformed lines and schema violations raise StreamFormatError with
    the line number.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    by_t: dict[int, list[EgoEvent]] = {}
    line_of: dict[int, int] = {}
    last_t = None
    warned_order = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StreamFormatError(f"malformed JSON ({exc.msg})", line_no) from exc
        if not isinstance(raw, dict):
            raise StreamFormatError("record must be a JSON object", line_no)
        event = parse_event(raw, line_no)
        if last_t is not None and event.t < last_t and not warned_order:
            logger.warning("line %d: non-monotone timestep %d after %d; re-sorting", line_no, event.t, last_t)
            warned_order = True
        last_t = event.t
        by_t.setdefault(event.t, []).append(event)
        line_of[id(event)] = line_no
    frames = []
    for t in sorted(by_t):
        events = by_t[t]
        _check_frame_invariants(t, events, line_of)
        frames.append(EventFrame(t, tuple(events)))
    return frames


def infer_attention(gaze: Gaze, objects: list[Node], cfg: PerceptionConfig) -> str | None:
    """Object id the gaze ray points at, if any lies inside the cone.

    Minimizes the ray angle; ties break by distance, then id.
    """
    best = None
    for obj in objects:
        if obj.position is None:
            continue
        angle = gaze_angle_deg(gaze.direction, gaze.origin, obj.position)
        if angle >= cfg.gaze_cone_deg:
            continue
        dist = math.dist(gaze.origin, obj.position)
        key = (angle, dist, obj.id)
        if best is None or key < best:
            best = key
    return best[2] if best else None


def detect_grasp(hand: HandState, objects: list[Node], cfg: PerceptionConfig) -> str | None:
    """Id of the nearest object within grasp radius while the pose is a grasp."""
    if hand.pose != "grasp":
        return None
    best = None
    for obj in objects:
        if obj.position is None:
            continue
        dist = math.dist(hand.position, obj.position)
        if dist >= cfg.grasp_radius:
            continue
        key = (dist, obj.id)
        if best is None or key < best:
            best = key
    return best[1] if best else None


def _hand_node_id(side: str) -> str:
    return f"{side}_hand"


def _streak_from(prev: SceneGraph | None) -> tuple[str, int] | None:
    if prev is None:
        return None
    user = prev.node(USER_NODE_ID)
    if user is None:
        return None
    raw = user.attributes.get(ATTENTION_STREAK_ATTR)
    if not raw or ":" not in raw:
        return None
    target, _, count = raw.rpartition(":")
    try:
        return (target, int(count))
    except ValueError:
        return None


def build_scene_graph(
    frame: EventFrame, prev: SceneGraph | None, cfg: PerceptionConfig | None = None
) -> SceneGraph:
    """Fold one frame's events into a valid scene graph.

    ``prev`` chains frames so sustained gaze can be promoted to an
    attending_to edge. Actions that reference entities not detected this
    frame are dropped with a warning rather than fabricating nodes.
    """
    cfg = cfg or PerceptionConfig()
    if prev is not None and prev.t >= frame.t:
        raise ValueError(f"prev graph timestep {prev.t} must precede frame timestep {frame.t}")
    nodes: dict[str, Node] = {}
    edges: set[Edge] = set()

    for det in frame.detections:
        if det.confidence < cfg.min_confidence:
            continue
        if det.entity_id in nodes or det.entity_id == USER_NODE_ID:
            logger.warning("t=%d: dropping detection with colliding id %r", frame.t, det.entity_id)
            continue
        kind = NodeKind.OBJECT if det.category == "object" else NodeKind.UI_ELEMENT
        nodes[det.entity_id] = Node(det.entity_id, kind, det.label.lower(), det.position)

    objects = [n for n in nodes.values() if n.kind in (NodeKind.OBJECT, NodeKind.UI_ELEMENT)]

    for hand in frame.hands:
        node_id = _hand_node_id(hand.side)
        nodes[node_id] = Node(
            node_id,
            NodeKind.HAND,
            node_id,
            hand.position,
            {"side": hand.side, "pose": hand.pose},
        )
        grasped = detect_grasp(hand, objects, cfg)
        if grasped:
            edges.add(Edge.of(node_id, EdgeKind.GRASPING, grasped))

    user_attrs: dict[str, str] = {}
    if frame.speeches:
        user_attrs[UTTERANCES_ATTR] = "\n".join(s.text for s in frame.speeches)

    gaze = frame.gaze
    looked_at = infer_attention(gaze, objects, cfg) if gaze else None
    if looked_at:
        edges.add(Edge.of(USER_NODE_ID, EdgeKind.LOOKING_AT, looked_at))
        prev_streak = _streak_from(prev)
        streak = prev_streak[1] + 1 if prev_streak and prev_streak[0] == looked_at else 1
        user_attrs[ATTENTION_STREAK_ATTR] = f"{looked_at}:{streak}"
        if streak >= cfg.attention_frames + 1:
            edges.add(Edge.of(USER_NODE_ID, EdgeKind.ATTENDING_TO, looked_at))

    nodes[USER_NODE_ID] = Node(USER_NODE_ID, NodeKind.USER, "user", None, user_attrs)

    action_count = 0
    for act in frame.actions:
        referenced = [act.subject_id] + ([act.object_id] if act.object_id else [])
        missing = [r for r in referenced if r not in nodes]
        if missing:
            logger.warning(
                "t=%d: dropping user_action %r referencing undetected %s", frame.t, act.verb, missing
            )
            continue
        action_id = f"act_{action_count}_{act.verb}"
        action_count += 1
        if not valid_entity_id(action_id):
            logger.warning("t=%d: dropping user_action with unusable verb %r", frame.t, act.verb)
            continue
        nodes[action_id] = Node(action_id, NodeKind.ACTION, act.verb.lower(), None, {"verb": act.verb.lower()})
        edges.add(Edge.of(USER_NODE_ID, EdgeKind.PERFORMS, action_id))
        edges.add(Edge.of(action_id, EdgeKind.ACTS_ON, act.subject_id))
        if act.object_id and act.object_id != act.subject_id:
            edges.add(Edge.of(action_id, EdgeKind.RELATES_TO, act.object_id))
            if act.relation == EdgeKind.NEXT_TO.value:
                lo, hi = sorted((act.subject_id, act.object_id))
                edges.add(Edge.of(lo, EdgeKind.NEXT_TO, hi))
            elif act.relation == EdgeKind.HOLDS.value:
                edges.add(Edge.of(act.subject_id, EdgeKind.HOLDS, act.object_id))
            elif act.relation is not None:
                logger.warning("t=%d: ignoring unknown action relation %r", frame.t, act.relation)

    # Symmetric adjacency gets one canonical direction: lower id -> higher id.
    positioned = sorted((n for n in objects), key=lambda n: n.id)
    for i, a in enumerate(positioned):
        for b in positioned[i + 1:]:
            if math.dist(a.position, b.position) < cfg.proximity_radius:
                edges.add(Edge.of(a.id, EdgeKind.NEXT_TO, b.id))

    return ensure_valid(SceneGraph(frame.t, tuple(nodes.values()), tuple(edges)))


def fold_stream(frames, cfg: PerceptionConfig | None = None) -> list[SceneGraph]:
    """Build the graph sequence for a whole recording, chaining prev graphs."""
    graphs: list[SceneGraph] = []
    prev = None
    for frame in frames:
        graph = build_scene_graph(frame, prev, cfg)
        graphs.append(graph)
        prev = graph
    return graphs
