"""Record everyday task episodes as scene-graph sequences; recall them as
live, step-aware guidance over structured event streams."""

from .actuator import ActuationCommand, CommandKind, CooldownState, feasibility_filter, select_commands
from .memory import Episode, EpisodeMeta, MemoryStore, embed_graph, extract_keyframes
from .perception import EventFrame, PerceptionConfig, build_scene_graph, parse_event_stream
from .reasoning import (
    ProgressState,
    Step,
    TaskPlan,
    TrackerConfig,
    brute_force_align,
    infer_task_plan,
    plan_action,
    track_progress,
)
from .scene_graph import (
    Edge,
    EdgeCategory,
    EdgeKind,
    GraphDiff,
    Node,
    NodeKind,
    SceneGraph,
    apply_diff,
    canonical_decode,
    canonical_encode,
    diff_graphs,
    graph_similarity,
    validate_graph,
)
from .service import EngineConfig, SessionService

__version__ = "0.1.0"

__all__ = [
    "ActuationCommand",
    "CommandKind",
    "CooldownState",
    "Edge",
    "EdgeCategory",
    "EdgeKind",
    "EngineConfig",
    "Episode",
    "EpisodeMeta",
    "EventFrame",
    "GraphDiff",
    "MemoryStore",
    "Node",
    "NodeKind",
    "PerceptionConfig",
    "ProgressState",
    "SceneGraph",
    "SessionService",
    "Step",
    "TaskPlan",
    "TrackerConfig",
    "apply_diff",
    "brute_force_align",
    "build_scene_graph",
    "canonical_decode",
    "canonical_encode",
    "diff_graphs",
    "embed_graph",
    "extract_keyframes",
    "feasibility_filter",
    "graph_similarity",
    "infer_task_plan",
    "parse_event_stream",
    "plan_action",
    "select_commands",
    "track_progress",
    "validate_graph",
]
