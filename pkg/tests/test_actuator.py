"""Command selection, cooldown suppression, feasibility filtering."""

from __future__ import annotations

import random

import pytest

from recallgraph.actuator import (
    ActuationCommand,
    ActuatorConfig,
    CommandKind,
    CooldownState,
    feasibility_filter,
    select_commands,
)
from recallgraph.scene_graph import Edge, EdgeKind, Node, NodeKind, SceneGraph

from conftest import simple_graph


def guidance_graph(t=0, *edges, extra_nodes=()):
    base = simple_graph(t, ("onion", "pot"))
    return SceneGraph(t, base.nodes + tuple(extra_nodes), base.edges + tuple(edges))


class TestSelectCommands:
    def test_no_guidance_edges(self):
        assert select_commands(simple_graph(), CooldownState()) == []

    def test_single_to_be_grasped(self):
        gg = guidance_graph(0, Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"))
        cmds = select_commands(gg, CooldownState())
        assert [(c.kind, c.target, c.text) for c in cmds] == [
            (CommandKind.HIGHLIGHT, "onion", None),
            (CommandKind.VOICE, None, "Grasp the onion"),
        ]
        assert all(c.issued_at == 0 for c in cmds)

    def test_cooldown_suppresses_repeat(self):
        cooldown = CooldownState()
        gg = guidance_graph(0, Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"))
        assert select_commands(gg, cooldown)
        gg_later = guidance_graph(5, Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"))
        assert select_commands(gg_later, cooldown) == []

    def test_cooldown_expires_after_window(self):
        cooldown = CooldownState()
        first = guidance_graph(0, Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"))
        select_commands(first, cooldown)
        again = guidance_graph(10, Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"))
        cmds = select_commands(again, cooldown)
        assert [c.kind for c in cmds] == [CommandKind.HIGHLIGHT, CommandKind.VOICE]

    def test_one_highlight_with_priority(self):
        gg = guidance_graph(
            0,
            Edge.of("user", EdgeKind.NOTIFY, "onion"),
            Edge.of("user", EdgeKind.TO_BE_GRASPED, "pot"),
        )
        cmds = select_commands(gg, CooldownState())
        highlights = [c for c in cmds if c.kind == CommandKind.HIGHLIGHT]
        assert [c.target for c in highlights] == ["pot"]

    def test_highlight_tie_breaks_by_target_id(self):
        gg = guidance_graph(
            0,
            Edge.of("user", EdgeKind.TO_BE_GRASPED, "pot"),
            Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"),
        )
        cmds = select_commands(gg, CooldownState())
        highlights = [c for c in cmds if c.kind == CommandKind.HIGHLIGHT]
        assert [c.target for c in highlights] == ["onion"]

    def test_find_virtual_gives_voice_and_tip(self):
        ghost = Node("virtual_lid", NodeKind.OBJECT, "lid", None, {"virtual": "true"})
        gg = guidance_graph(0, Edge.of("user", EdgeKind.FIND, "virtual_lid"), extra_nodes=(ghost,))
        cmds = select_commands(gg, CooldownState())
        assert [(c.kind, c.target, c.text) for c in cmds] == [
            (CommandKind.VOICE, None, "Find the lid"),
            (CommandKind.TIP, "user", "Find the lid"),
        ]

    def test_order_is_highlight_voice_tip(self):
        ghost = Node("virtual_lid", NodeKind.OBJECT, "lid", None, {"virtual": "true"})
        gg = guidance_graph(
            0,
            Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"),
            Edge.of("user", EdgeKind.FIND, "virtual_lid"),
            extra_nodes=(ghost,),
        )
        kinds = [c.kind for c in select_commands(gg, CooldownState())]
        assert kinds == [CommandKind.HIGHLIGHT, CommandKind.VOICE, CommandKind.VOICE, CommandKind.TIP]

    def test_deterministic_given_state(self):
        gg = guidance_graph(
            3,
            Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"),
            Edge.of("user", EdgeKind.NOTIFY, "pot"),
        )
        a = select_commands(gg, CooldownState())
        b = select_commands(gg, CooldownState())
        assert a == b


class TestInvariants:
    def test_command_shape_rules(self):
        with pytest.raises(ValueError):
            ActuationCommand(CommandKind.HIGHLIGHT, 0)
        with pytest.raises(ValueError):
            ActuationCommand(CommandKind.HIGHLIGHT, 0, target="x", text="no")
        with pytest.raises(ValueError):
            ActuationCommand(CommandKind.VOICE, 0)
        long_text = "x" * 500
        cmd = ActuationCommand(CommandKind.VOICE, 0, text=long_text)
        assert len(cmd.text) == 200

    def test_no_identical_commands_within_window_on_trace(self):
        cooldown = CooldownState()
        log: list[tuple[tuple, int]] = []
        for t in range(40):
            gg = guidance_graph(t, Edge.of("user", EdgeKind.TO_BE_GRASPED, "onion"))
            for cmd in select_commands(gg, cooldown, ActuatorConfig(cooldown=10)):
                for identity, when in log:
                    if identity == cmd.identity():
                        assert t - when >= 10
                log.append((cmd.identity(), t))
        assert log  # something was actually emitted


class TestFeasibility:
    def test_visible_highlight_unchanged(self):
        g = simple_graph(0, ("onion",))
        cmds = [ActuationCommand(CommandKind.HIGHLIGHT, 0, target="onion")]
        assert feasibility_filter(cmds, g) == cmds

    def test_absent_target_becomes_find_voice(self):
        g = simple_graph(0, ("pot",))
        cmds = [ActuationCommand(CommandKind.HIGHLIGHT, 0, target="onion")]
        out = feasibility_filter(cmds, g)
        assert [(c.kind, c.text) for c in out] == [(CommandKind.VOICE, "Find the onion")]

    def test_virtual_target_becomes_find_voice(self):
        ghost = Node("virtual_onion", NodeKind.OBJECT, "onion", None, {"virtual": "true"})
        g = SceneGraph(0, (Node("user", NodeKind.USER, "user"), ghost))
        cmds = [ActuationCommand(CommandKind.HIGHLIGHT, 0, target="virtual_onion")]
        out = feasibility_filter(cmds, g)
        assert [(c.kind, c.text) for c in out] == [(CommandKind.VOICE, "Find the onion")]

    def test_tip_reanchors_to_user(self):
        g = simple_graph(0, ("pot",))
        cmds = [ActuationCommand(CommandKind.TIP, 0, target="gone", text="look around")]
        out = feasibility_filter(cmds, g)
        assert [(c.kind, c.target, c.text) for c in out] == [(CommandKind.TIP, "user", "look around")]

    def test_property_sweep_no_invisible_highlights(self):
        rng = random.Random(5)
        ids = [f"n{i}" for i in range(6)] + ["virtual_x"]
        checked = 0
        for _ in range(2000):
            present = rng.sample(ids, rng.randint(0, 4))
            nodes = [Node("user", NodeKind.USER, "user")]
            for node_id in present:
                attrs = {"virtual": "true"} if node_id.startswith("virtual") else {}
                nodes.append(Node(node_id, NodeKind.OBJECT, "thing", None, attrs))
            g = SceneGraph(0, tuple(nodes))
            cmds = []
            for _ in range(rng.randint(0, 4)):
                kind = rng.choice(list(CommandKind))
                target = rng.choice(ids + ["user"])
                if kind == CommandKind.HIGHLIGHT:
                    cmds.append(ActuationCommand(kind, 0, target=target))
                elif kind == CommandKind.TIP:
                    cmds.append(ActuationCommand(kind, 0, target=target, text="tip text"))
                else:
                    cmds.append(ActuationCommand(kind, 0, text="voice line"))
            for cmd in feasibility_filter(cmds, g):
                checked += 1
                if cmd.kind == CommandKind.HIGHLIGHT:
                    node = g.node(cmd.target)
                    assert node is not None and not node.is_virtual()
        assert checked > 0
