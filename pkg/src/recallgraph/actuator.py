"""Turns guidance edges into concrete user-facing commands.

Modality policy is deliberately mechanical: highlight what is visible,
speak about what is not, tip as a fallback anchor. A per-session cooldown
keeps identical prompts from repeating every frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .scene_graph import EdgeCategory, EdgeKind, NodeKind, SceneGraph

logger = logging.getLogger(__name__)

MAX_TEXT_LEN = 200
DEFAULT_COOLDOWN = 10


class CommandKind(str, Enum):
    HIGHLIGHT = "Highlight"
    TIP = "Tip"
    VOICE = "Voice"


@dataclass(frozen=True)
class ActuationCommand:
    """One delivered cue: an object highlight, an anchored tip, or a voice line."""

    kind: CommandKind
    issued_at: int
    target: str | None = None
    text: str | None = None

    def __post_init__(self):
        if self.text is not None and len(self.text) > MAX_TEXT_LEN:
            object.__setattr__(self, "text", self.text[:MAX_TEXT_LEN])
        if self.kind == CommandKind.HIGHLIGHT and (self.target is None or self.text is not None):
            raise ValueError("Highlight needs a target and carries no text")
        if self.kind in (CommandKind.VOICE, CommandKind.TIP) and not self.text:
            raise ValueError(f"{self.kind.value} needs text")

    def identity(self) -> tuple:
        return (self.kind.value, self.target, self.text)

    def to_record(self) -> dict:
        rec: dict = {"kind": self.kind.value, "issued_at": self.issued_at}
        if self.target is not None:
            rec["target"] = self.target
        if self.text is not None:
            rec["text"] = self.text
        return rec


@dataclass
class CooldownState:
    """Last emission timestep per command identity, owned by one session."""

    window: int = DEFAULT_COOLDOWN
    last_issued: dict[tuple, int] = field(default_factory=dict)

    def suppressed(self, cmd: ActuationCommand, t: int) -> bool:
        last = self.last_issued.get(cmd.identity())
        return last is not None and t - last < self.window

    def mark(self, cmd: ActuationCommand, t: int) -> None:
        self.last_issued[cmd.identity()] = t

    def copy(self) -> "CooldownState":
        return CooldownState(self.window, dict(self.last_issued))


@dataclass(frozen=True)
class ActuatorConfig:
    cooldown: int = DEFAULT_COOLDOWN

    @classmethod
    def from_mapping(cls, raw: dict) -> "ActuatorConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        return cls(**known)


def _voice_text(kind: EdgeKind, label: str, virtual: bool) -> str:
    if kind == EdgeKind.TO_BE_GRASPED:
        return f"Grasp the {label}"
    if kind == EdgeKind.FIND:
        return f"Find the {label}"
    if virtual:
        return label[:1].upper() + label[1:]
    return f"Continue with the {label}"


def select_commands(
    gg: SceneGraph, cooldown: CooldownState, cfg: ActuatorConfig | None = None
) -> list[ActuationCommand]:
    """Map guidance edges to commands, one highlight at most, cooldown applied.

    to_be_grasped and notify edges to visible targets yield a highlight
    plus a spoken line; find edges yield a spoken line plus a tip anchored
    to the user. Output order is highlights, voices, tips.
    """
    cfg = cfg or ActuatorConfig()
    cooldown.window = cfg.cooldown
    t = gg.t
    highlight_candidates: list[tuple[int, str, ActuationCommand]] = []
    voices: list[ActuationCommand] = []
    tips: list[ActuationCommand] = []
    user = next((n for n in gg.nodes if n.kind == NodeKind.USER), None)

    for edge in gg.edges:
        if edge.category != EdgeCategory.GUIDANCE:
            continue
        target = gg.node(edge.target)
        if target is None:
            continue
        virtual = target.is_virtual()
        if edge.kind in (EdgeKind.TO_BE_GRASPED, EdgeKind.NOTIFY) and not virtual:
            priority = 0 if edge.kind == EdgeKind.TO_BE_GRASPED else 1
            highlight_candidates.append(
                (priority, target.id, ActuationCommand(CommandKind.HIGHLIGHT, t, target=target.id))
            )
            voices.append(
                ActuationCommand(CommandKind.VOICE, t, text=_voice_text(edge.kind, target.label, False))
            )
        elif edge.kind == EdgeKind.FIND:
            text = _voice_text(EdgeKind.FIND, target.label, virtual)
            voices.append(ActuationCommand(CommandKind.VOICE, t, text=text))
            if user is not None:
                tips.append(ActuationCommand(CommandKind.TIP, t, target=user.id, text=text))
        else:
            voices.append(
                ActuationCommand(CommandKind.VOICE, t, text=_voice_text(edge.kind, target.label, virtual))
            )

    ordered: list[ActuationCommand] = []
    if highlight_candidates:
        highlight_candidates.sort(key=lambda c: (c[0], c[1]))
        ordered.append(highlight_candidates[0][2])
    ordered.extend(sorted(voices, key=lambda c: c.text or ""))
    ordered.extend(sorted(tips, key=lambda c: (c.target or "", c.text or "")))

    emitted: list[ActuationCommand] = []
    seen: set[tuple] = set()
    for cmd in ordered:
        if cmd.identity() in seen or cooldown.suppressed(cmd, t):
            continue
        seen.add(cmd.identity())
        cooldown.mark(cmd, t)
        emitted.append(cmd)
    return emitted


def feasibility_filter(commands, g: SceneGraph) -> list[ActuationCommand]:
    """Drop or downgrade commands the current scene cannot honor.

    A highlight of an absent or virtual node becomes a find voice line; a
    tip anchored to a missing node re-anchors to the user. Voice passes
    through untouched. The output never highlights an invisible node.
    """
    user = next((n for n in g.nodes if n.kind == NodeKind.USER), None)
    out: list[ActuationCommand] = []
    for cmd in commands:
        if cmd.kind == CommandKind.HIGHLIGHT:
            node = g.node(cmd.target)
            if node is not None and not node.is_virtual():
                out.append(cmd)
            else:
                label = node.label if node is not None else cmd.target
                out.append(ActuationCommand(CommandKind.VOICE, cmd.issued_at, text=f"Find the {label}"))
        elif cmd.kind == CommandKind.TIP:
            if cmd.target is not None and g.has_node(cmd.target):
                out.append(cmd)
            else:
                anchor = user.id if user is not None else None
                if anchor is None:
                    out.append(ActuationCommand(CommandKind.VOICE, cmd.issued_at, text=cmd.text))
                else:
                    out.append(ActuationCommand(CommandKind.TIP, cmd.issued_at, target=anchor, text=cmd.text))
        else:
            out.append(cmd)
    return out
