"""Shared generators and fixtures for the test suite."""

from __future__ import annotations

import random

import pytest

from recallgraph.scene_graph import (
    Edge,
    EdgeKind,
    Node,
    NodeKind,
    SceneGraph,
)

LABEL_POOL = ["onion", "pot", "pan", "knife", "board", "towel", "cup", "lid", "bowl"]
VERB_POOL = ["chop", "stir", "add", "move"]
ID_POOL = [f"e{i}" for i in range(12)]


def random_node(rng: random.Random, node_id: str) -> Node:
    kind = rng.choice(
        [NodeKind.OBJECT, NodeKind.OBJECT, NodeKind.OBJECT, NodeKind.UI_ELEMENT, NodeKind.HAND, NodeKind.ACTION]
    )
    attrs: dict[str, str] = {}
    if kind == NodeKind.HAND:
        attrs = {"side": rng.choice(["left", "right"]), "pose": rng.choice(["open", "pinch", "grasp"])}
        label = f"{attrs['side']}_hand"
    elif kind == NodeKind.ACTION:
        verb = rng.choice(VERB_POOL)
        attrs = {"verb": verb}
        label = verb
    else:
        label = rng.choice(LABEL_POOL)
    position = None
    if rng.random() < 0.7:
        position = tuple(round(rng.uniform(-2.0, 2.0), 3) for _ in range(3))
    return Node(node_id, kind, label, position, attrs)


def random_graph(rng: random.Random, t: int | None = None) -> SceneGraph:
    """Valid random graph drawn from a small shared id/label universe."""
    ids = rng.sample(ID_POOL, rng.randint(0, 8))
    nodes = [random_node(rng, node_id) for node_id in ids]
    if rng.random() < 0.8:
        nodes.append(Node("user", NodeKind.USER, "user"))
    all_ids = [n.id for n in nodes]
    edges = []
    seen = set()
    if len(all_ids) >= 2:
        for _ in range(rng.randint(0, 10)):
            source, target = rng.sample(all_ids, 2)
            kind = rng.choice(list(EdgeKind))
            if (source, kind.value, target) in seen:
                continue
            seen.add((source, kind.value, target))
            edges.append(Edge.of(source, kind, target))
    return SceneGraph(t if t is not None else rng.randint(0, 99), tuple(nodes), tuple(edges))


def simple_graph(t: int = 0, labels: tuple[str, ...] = ("onion", "pot"), edges: tuple = ()) -> SceneGraph:
    """Tiny hand-made graph: user plus labeled objects plus explicit edges."""
    nodes = [Node("user", NodeKind.USER, "user")]
    nodes.extend(Node(label, NodeKind.OBJECT, label, (0.1 * i, 0.9, 0.5)) for i, label in enumerate(labels))
    return SceneGraph(t, tuple(nodes), tuple(Edge.of(*triple) for triple in edges))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(42)
