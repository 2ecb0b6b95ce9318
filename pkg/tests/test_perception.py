"""Event-stream parsing and scene graph construction."""

from __future__ import annotations

import json
import logging
import math
import random
from pathlib import Path

import pytest

from recallgraph.errors import StreamFormatError
from recallgraph.perception import (
    Detection,
    EventFrame,
    Gaze,
    HandState,
    PerceptionConfig,
    Speech,
    UserAction,
    build_scene_graph,
    detect_grasp,
    fold_stream,
    infer_attention,
    parse_event_stream,
    serialize_events,
)
from recallgraph.scene_graph import (
    EdgeCategory,
    EdgeKind,
    Node,
    NodeKind,
    canonical_encode,
    gaze_angle_deg,
    validate_graph,
)

FIXTURES = Path(__file__).parent / "fixtures"


def detection(t=0, entity_id="pot", label=None, position=(0.0, 0.0, 0.0), confidence=0.9, category="object"):
    return Detection(t, entity_id, label or entity_id, category, position, confidence)


class TestParsing:
    def test_empty_input(self):
        assert parse_event_stream(b"") == []

    def test_grouping_by_timestep(self):
        events = [detection(0, "pot"), detection(0, "pan"), detection(1, "pot")]
        frames = parse_event_stream(serialize_events(events))
        assert [f.t for f in frames] == [0, 1]
        assert [len(f.events) for f in frames] == [2, 1]

    def test_kitchen_small_fixture_field_exact(self):
        frames = parse_event_stream((FIXTURES / "kitchen_small.jsonl").read_bytes())
        assert len(frames) == 12
        assert [f.t for f in frames] == list(range(12))
        for frame in frames:
            assert len(frame.detections) == 6
            assert frame.gaze is not None
            assert {h.side for h in frame.hands} == {"left", "right"}
            assert {d.entity_id for d in frame.detections} == {
                "onion", "carrot", "chicken", "spoon", "pot", "stove"
            }
        assert [f.t for f in frames if f.speeches] == [3, 10]
        assert frames[3].speeches[0].text == "start with the onion"
        action_frames = [f.t for f in frames if f.actions]
        assert action_frames == [5, 6, 7]
        reach = frames[5].actions[0]
        assert (reach.verb, reach.subject_id, reach.object_id, reach.relation) == ("add", "onion", "pot", None)
        settle = frames[6].actions[0]
        assert (settle.verb, settle.subject_id, settle.object_id, settle.relation) == (
            "add", "onion", "pot", "next_to",
        )
        assert frames[5].hands[1].pose == "grasp" or frames[5].hands[0].pose == "grasp"

    def test_malformed_line_reports_number(self):
        blob = b'{"t":0,"kind":"speech","text":"hi"}\nnot json\n'
        with pytest.raises(StreamFormatError) as err:
            parse_event_stream(blob)
        assert err.value.line == 2

    def test_non_monotone_resorted_with_warning(self, caplog):
        events = [detection(5, "pot"), detection(2, "pan")]
        with caplog.at_level(logging.WARNING, logger="recallgraph.perception"):
            frames = parse_event_stream(serialize_events(events))
        assert [f.t for f in frames] == [2, 5]
        assert any("non-monotone" in r.message for r in caplog.records)

    def test_duplicate_gaze_rejected(self):
        gaze = Gaze(0, (0.0, 1.5, 0.0), (0.0, 0.0, 1.0))
        with pytest.raises(StreamFormatError, match="gaze"):
            parse_event_stream(serialize_events([gaze, gaze]))

    def test_duplicate_hand_side_rejected(self):
        hand = HandState(0, "right", (0.0, 1.0, 0.3), "open")
        with pytest.raises(StreamFormatError, match="side"):
            parse_event_stream(serialize_events([hand, hand]))

    def test_schema_violations_name_field(self):
        cases = [
            ({"t": 0, "kind": "detection", "entity_id": "a", "label": "a", "category": "object",
              "position": [0, 0], "confidence": 0.9}, "position"),
            ({"t": 0, "kind": "detection", "entity_id": "a", "label": "a", "category": "object",
              "position": [0, 0, 0], "confidence": 1.5}, "confidence"),
            ({"t": 0, "kind": "gaze", "origin": [0, 0, 0], "direction": [0.5, 0.5, 0.5]}, "direction"),
            ({"t": 0, "kind": "hand", "side": "up", "position": [0, 0, 0], "pose": "open"}, "side"),
            ({"t": -1, "kind": "speech", "text": "x"}, "'t'"),
            ({"t": 0, "kind": "mystery"}, "kind"),
        ]
        for raw, needle in cases:
            with pytest.raises(StreamFormatError, match=needle):
                parse_event_stream(json.dumps(raw).encode())

    def test_unknown_field_warns_and_parses(self, caplog):
        raw = {"t": 0, "kind": "speech", "text": "hello", "volume": 3}
        with caplog.at_level(logging.WARNING, logger="recallgraph.perception"):
            frames = parse_event_stream(json.dumps(raw).encode())
        assert frames[0].speeches[0].text == "hello"
        assert any("volume" in r.message for r in caplog.records)

    def test_serialize_roundtrip(self):
        frames = parse_event_stream((FIXTURES / "kitchen_small.jsonl").read_bytes())
        blob = serialize_events([e for f in frames for e in f.events])
        assert blob == (FIXTURES / "kitchen_small.jsonl").read_bytes()


class TestBuildGraph:
    def test_empty_frame_gives_user_only(self):
        g = build_scene_graph(EventFrame(0, ()), None)
        assert [n.id for n in g.nodes] == ["user"]
        assert not g.edges

    def test_grasp_example(self):
        frame = EventFrame(
            0,
            (
                detection(0, "pot", position=(0.0, 0.0, 0.0), confidence=0.9),
                HandState(0, "right", (0.05, 0.0, 0.0), "grasp"),
            ),
        )
        g = build_scene_graph(frame, None)
        assert {n.id for n in g.nodes} == {"user", "pot", "right_hand"}
        assert [(e.source, e.kind, e.target) for e in g.edges] == [
            ("right_hand", EdgeKind.GRASPING, "pot")
        ]

    def test_confidence_gate(self):
        frame = EventFrame(0, (detection(0, "pot", confidence=0.4),))
        g = build_scene_graph(frame, None)
        assert not g.has_node("pot")
        assert build_scene_graph(frame, None, PerceptionConfig(min_confidence=0.3)).has_node("pot")

    def test_speech_lands_on_user(self):
        frame = EventFrame(0, (Speech(0, "hello there"), Speech(0, "second line")))
        g = build_scene_graph(frame, None)
        assert g.node("user").attributes["utterances"] == "hello there\nsecond line"

    def test_action_edges_and_dropped_unknown_subject(self, caplog):
        frame = EventFrame(
            0,
            (
                detection(0, "onion", position=(0.0, 0.9, 0.5)),
                detection(0, "pot", position=(0.9, 0.9, 0.5)),
                UserAction(0, "add", "onion", "pot", "next_to"),
                UserAction(0, "chop", "ghost"),
            ),
        )
        with caplog.at_level(logging.WARNING, logger="recallgraph.perception"):
            g = build_scene_graph(frame, None)
        triples = g.physical_triples()
        assert ("user", "performs", "add") in triples
        assert ("add", "acts_on", "onion") in triples
        assert ("add", "relates_to", "pot") in triples
        assert ("onion", "next_to", "pot") in triples
        assert not any(n.label == "chop" for n in g.nodes)
        assert any("ghost" in r.message for r in caplog.records)

    def test_proximity_edge_orientation(self):
        frame = EventFrame(
            0,
            (
                detection(0, "zebra", position=(0.0, 0.0, 0.0)),
                detection(0, "apple", position=(0.1, 0.0, 0.0)),
            ),
        )
        g = build_scene_graph(frame, None)
        assert [(e.source, e.target) for e in g.edges if e.kind == EdgeKind.NEXT_TO] == [("apple", "zebra")]

    def test_golden_frame7(self):
        frames = parse_event_stream((FIXTURES / "kitchen_small.jsonl").read_bytes())
        graphs = fold_stream(frames)
        expected = (FIXTURES / "kitchen_small_frame7.sg").read_bytes().strip()
        assert canonical_encode(graphs[7]) == expected

    def test_every_output_validates_and_is_deterministic(self):
        frames = parse_event_stream((FIXTURES / "kitchen_small.jsonl").read_bytes())
        graphs = fold_stream(frames)
        again = fold_stream(frames)
        for g, h in zip(graphs, again):
            assert validate_graph(g) == []
            assert canonical_encode(g) == canonical_encode(h)

    def test_monotone_confidence(self):
        frames = parse_event_stream((FIXTURES / "kitchen_small.jsonl").read_bytes())
        lo = fold_stream(frames, PerceptionConfig(min_confidence=0.5))
        hi = fold_stream(frames, PerceptionConfig(min_confidence=0.9))
        for g_lo, g_hi in zip(lo, hi):
            assert {n.id for n in g_hi.nodes} <= {n.id for n in g_lo.nodes}

    def test_attending_to_needs_persistence_and_implies_looking(self):
        target = detection(0, "pot", position=(0.0, 1.5, 1.0))
        gaze = Gaze(0, (0.0, 1.5, 0.1), (0.0, 0.0, 1.0))
        prev = None
        saw_attending = False
        for t in range(5):
            frame = EventFrame(
                t,
                (
                    Detection(t, "pot", "pot", "object", (0.0, 1.5, 1.0), 0.9),
                    Gaze(t, gaze.origin, gaze.direction),
                ),
            )
            g = build_scene_graph(frame, prev, PerceptionConfig(attention_frames=3))
            attending = [e for e in g.edges if e.kind == EdgeKind.ATTENDING_TO]
            looking = [e for e in g.edges if e.kind == EdgeKind.LOOKING_AT]
            assert looking and looking[0].target == "pot"
            if t < 3:
                assert not attending
            else:
                assert attending and attending[0].target == "pot"
                saw_attending = True
            for e in attending:
                assert any(l.target == e.target for l in looking)
            prev = g
        assert saw_attending
        assert target.label == "pot"

    def test_dropping_gaze_removes_exactly_attentional_edges(self):
        frames = parse_event_stream((FIXTURES / "kitchen_small.jsonl").read_bytes())
        with_gaze = fold_stream(frames)
        without = fold_stream(
            [EventFrame(f.t, tuple(e for e in f.events if not isinstance(e, Gaze))) for f in frames]
        )
        for g, h in zip(with_gaze, without):
            assert not [e for e in h.edges if e.category == EdgeCategory.ATTENTIONAL]
            non_attentional = [e for e in g.edges if e.category != EdgeCategory.ATTENTIONAL]
            assert sorted(e.sort_key() for e in non_attentional) == sorted(e.sort_key() for e in h.edges)
            assert {n.id for n in g.nodes} == {n.id for n in h.nodes}
            # only the gaze-persistence counter on the user node may differ
            for node in g.nodes:
                other = h.node(node.id)
                if node.kind == NodeKind.USER:
                    trimmed = {k: v for k, v in node.attributes.items() if k != "attention_streak"}
                    assert trimmed == {k: v for k, v in other.attributes.items() if k != "attention_streak"}
                else:
                    assert node == other


class TestAttention:
    cfg = PerceptionConfig()

    def test_object_along_ray(self):
        gaze = Gaze(0, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        objs = [Node("pot", NodeKind.OBJECT, "pot", (0.0, 0.0, 2.0))]
        assert infer_attention(gaze, objs, self.cfg) == "pot"

    def test_angle_argmin(self):
        gaze = Gaze(0, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))

        def at_angle(deg, node_id):
            rad = math.radians(deg)
            return Node(node_id, NodeKind.OBJECT, "pot", (math.sin(rad), 0.0, math.cos(rad)))

        objs = [at_angle(6.0, "far"), at_angle(4.0, "near")]
        assert infer_attention(gaze, objs, self.cfg) == "near"

    def test_none_outside_cone(self):
        gaze = Gaze(0, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        objs = [Node("pot", NodeKind.OBJECT, "pot", (1.0, 0.0, 1.0))]
        assert infer_attention(gaze, objs, self.cfg) is None

    def test_matches_exhaustive_scan_50_layouts(self):
        rng = random.Random(7)
        for _ in range(50):
            origin = (rng.uniform(-1, 1), rng.uniform(0, 2), rng.uniform(-1, 1))
            theta, phi = rng.uniform(0, 2 * math.pi), rng.uniform(-0.5, 0.5)
            direction = (
                math.cos(phi) * math.cos(theta),
                math.sin(phi),
                math.cos(phi) * math.sin(theta),
            )
            objs = [
                Node(f"o{i}", NodeKind.OBJECT, "pot",
                     (rng.uniform(-2, 2), rng.uniform(0, 2), rng.uniform(-2, 2)))
                for i in range(rng.randint(1, 8))
            ]
            gaze = Gaze(0, origin, direction)
            # independent oracle: score every object directly
            best = None
            for obj in objs:
                angle = gaze_angle_deg(direction, origin, obj.position)
                if angle < self.cfg.gaze_cone_deg:
                    key = (angle, math.dist(origin, obj.position), obj.id)
                    if best is None or key < best:
                        best = key
            assert infer_attention(gaze, objs, self.cfg) == (best[2] if best else None)


class TestGrasp:
    cfg = PerceptionConfig()

    def test_pose_gate(self):
        hand = HandState(0, "right", (0.0, 0.0, 0.0), "open")
        objs = [Node("pot", NodeKind.OBJECT, "pot", (0.05, 0.0, 0.0))]
        assert detect_grasp(hand, objs, self.cfg) is None

    def test_radius_and_argmin(self):
        hand = HandState(0, "right", (0.0, 0.0, 0.0), "grasp")
        objs = [
            Node("pot", NodeKind.OBJECT, "pot", (0.10, 0.0, 0.0)),
            Node("pan", NodeKind.OBJECT, "pan", (0.20, 0.0, 0.0)),
        ]
        assert detect_grasp(hand, objs, self.cfg) == "pot"

    def test_tie_breaks_lexicographic(self):
        hand = HandState(0, "right", (0.0, 0.0, 0.0), "grasp")
        objs = [
            Node("b", NodeKind.OBJECT, "pot", (0.10, 0.0, 0.0)),
            Node("a", NodeKind.OBJECT, "pan", (-0.10, 0.0, 0.0)),
        ]
        assert detect_grasp(hand, objs, self.cfg) == "a"
