"""Closed-loop orchestration: record into memory, recall as a live session.

The recording path parses a stream, folds it into graphs and stores the
episode. The recall path retrieves or accepts an episode, infers its plan,
then per incoming frame runs perception, progress tracking, action
planning and actuation in strict frame order, collecting metrics that
mirror the replay evaluation: completion rate and completion time in
frames (wall-clock conversion at a fixed frames-per-second constant).
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .actuator import ActuatorConfig, CooldownState, feasibility_filter, select_commands
from .errors import (
    EmptyRecordingError,
    NoMatchingEpisodeError,
    UnknownSessionError,
)
from .harness import (
    GroundTruth,
    MetricsRow,
    TraceRow,
    evaluate_run,
    generate_scenario,
    load_noise_profiles,
    parse_suite,
    perturb_stream,
)
from .memory import EpisodeMeta, MemoryStore
from .perception import EventFrame, PerceptionConfig, build_scene_graph, parse_event_stream
from .reasoning import (
    ProgressState,
    TaskPlan,
    TrackerConfig,
    infer_task_plan,
    plan_action,
    track_progress,
)
from .scene_graph import SceneGraph

logger = logging.getLogger(__name__)

FRAMES_PER_SECOND = 2
EVAL_RECORDED_AT = datetime(2025, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class EngineConfig:
    perception: PerceptionConfig = PerceptionConfig()
    tracker: TrackerConfig = TrackerConfig()
    actuator: ActuatorConfig = ActuatorConfig()

    @classmethod
    def from_mapping(cls, raw: dict) -> "EngineConfig":
        return cls(
            perception=PerceptionConfig.from_mapping(raw.get("perception", {})),
            tracker=TrackerConfig.from_mapping(raw.get("tracker", {})),
            actuator=ActuatorConfig.from_mapping(raw.get("actuator", {})),
        )


@dataclass
class MetricsRecord:
    steps_total: int = 0
    steps_completed: int = 0
    frames_elapsed: int = 0
    off_task_frames: int = 0
    commands_issued: int = 0

    def to_record(self) -> dict:
        return {
            "steps_total": self.steps_total,
            "steps_completed": self.steps_completed,
            "frames_elapsed": self.frames_elapsed,
            "off_task_frames": self.off_task_frames,
            "commands_issued": self.commands_issued,
            "elapsed_seconds": self.frames_elapsed / FRAMES_PER_SECOND,
        }


@dataclass
class Session:
    """One live recall run; all mutation goes through its lock."""

    id: str
    episode_meta: EpisodeMeta
    plan: TaskPlan
    progress: ProgressState
    prev_graph: SceneGraph | None = None
    cooldown: CooldownState = field(default_factory=CooldownState)
    metrics: MetricsRecord = field(default_factory=MetricsRecord)
    trace: list[TraceRow] = field(default_factory=list)
    last_t: int | None = None
    started_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    subscribers: list[queue.Queue] = field(default_factory=list, repr=False)

    def snapshot(self) -> dict:
        done = self.progress.is_complete(self.plan)
        steps = []
        for step in self.plan.steps:
            steps.append(
                {
                    "index": step.index,
                    "description": step.description,
                    "span": list(step.span),
                    "required_triples": sorted(list(t) for t in step.required_triples),
                    "satisfied": self.progress.satisfied[step.index],
                    "skipped": self.progress.skipped[step.index],
                    "current": (not done) and step.index == self.progress.current_step,
                }
            )
        return {
            "session_id": self.id,
            "episode_id": self.episode_meta.id,
            "title": self.episode_meta.title,
            "current_step": "complete" if done else self.progress.current_step,
            "steps": steps,
            "entities": sorted(self.plan.entities),
            "off_task": self.progress.off_task,
            "idle_frames": self.progress.idle_frames,
            "confidence": round(self.progress.confidence, 6),
            "metrics": self.metrics.to_record(),
            "graph": _graph_record(self.prev_graph),
        }


class SessionService:
    """Facade over the store, the reasoning stack and live sessions."""

    def __init__(self, store: MemoryStore, config: EngineConfig | None = None):
        self.store = store
        self.config = config or EngineConfig()
        self.sessions: dict[str, Session] = {}
        self._session_seq = 0
        self._registry_lock = threading.Lock()

    # -- recording phase -------------------------------------------------

    def ingest_recording(
        self,
        stream: bytes | str,
        title: str,
        location: str,
        recorded_at: datetime | None = None,
    ) -> EpisodeMeta:
        """Parse, fold and store one recording as a titled episode."""
        frames = parse_event_stream(stream)
        if not frames:
            raise EmptyRecordingError("recording stream contains no events")
        graphs = []
        prev = None
        for frame in frames:
            graph = build_scene_graph(frame, prev, self.config.perception)
            graphs.append(graph)
            prev = graph
        when = recorded_at or datetime.now(timezone.utc).replace(microsecond=0)
        return self.store.store_episode(graphs, title, location, when)

    # -- recall phase ----------------------------------------------------

    def create_session(self, query: dict) -> dict:
        """Candidate retrieval plus session creation in one call.

        An explicit ``episode_id`` (the user picked from the overlay) or a
        single positive-scoring candidate starts a session immediately;
        an ambiguous query returns the ranked candidates and no session.
        """
        episode_id = query.get("episode_id")
        candidates: list[tuple[EpisodeMeta, float]] = []
        if episode_id is None:
            ranked = self.store.retrieve(
                location=query.get("location"),
                keywords=query.get("keywords"),
                context=query.get("context"),
                k=int(query.get("k", 3)),
            )
            candidates = [(meta, score) for meta, score in ranked if score > 0.0]
            if not candidates:
                raise NoMatchingEpisodeError("no stored episode matches the query")
            if len(candidates) > 1:
                return {"session_id": None, "candidates": self._candidate_records(candidates)}
            episode_id = candidates[0][0].id
        episode = self.store.load_into_working_memory(episode_id)
        plan = infer_task_plan(episode, self.config.tracker)
        with self._registry_lock:
            self._session_seq += 1
            session_id = f"s{self._session_seq:04d}"
            session = Session(
                id=session_id,
                episode_meta=episode.meta,
                plan=plan,
                progress=ProgressState.fresh(plan),
                cooldown=CooldownState(self.config.actuator.cooldown),
                metrics=MetricsRecord(steps_total=len(plan.steps)),
            )
            self.sessions[session_id] = session
        return {
            "session_id": session_id,
            "candidates": self._candidate_records(candidates),
            "chosen": _meta_record(episode.meta),
            "snapshot": session.snapshot(),
        }

    @staticmethod
    def _candidate_records(candidates) -> list[dict]:
        return [dict(_meta_record(meta), score=round(score, 6)) for meta, score in candidates]

    def _session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(f"no session with id {session_id!r}")
        return session

    def ingest_events(self, session_id: str, frames: list[EventFrame]) -> dict:
        """Advance one session through frames, strictly in order.

        Returns the latest snapshot plus every command emitted for these
        frames. A frame that fails perception or arrives out of order is
        rejected with a warning and leaves the session unchanged.
        """
        session = self._session(session_id)
        emitted: list[dict] = []
        rejected = 0
        with session.lock:
            for frame in frames:
                if session.last_t is not None and frame.t <= session.last_t:
                    logger.warning("session %s: rejecting stale frame t=%d", session_id, frame.t)
                    rejected += 1
                    continue
                try:
                    graph = build_scene_graph(frame, session.prev_graph, self.config.perception)
                    progress = track_progress(session.progress, session.plan, graph, self.config.tracker)
                except Exception as exc:  # noqa: BLE001 - frame faults must not poison the session
                    logger.warning("session %s: rejecting frame t=%d (%s)", session_id, frame.t, exc)
                    rejected += 1
                    continue
                session.prev_graph = graph
                session.last_t = frame.t
                session.progress = progress
                guidance = plan_action(progress, session.plan, graph, self.config.tracker)
                commands = feasibility_filter(
                    select_commands(guidance, session.cooldown, self.config.actuator), graph
                )
                session.metrics.frames_elapsed += 1
                session.metrics.off_task_frames += 1 if progress.off_task else 0
                session.metrics.commands_issued += len(commands)
                session.metrics.steps_completed = progress.steps_completed()
                session.trace.append(
                    TraceRow(
                        frame=len(session.trace),
                        t=frame.t,
                        current_step=progress.current_step,
                        off_task=progress.off_task,
                        satisfied=progress.satisfied,
                    )
                )
                emitted.extend(cmd.to_record() for cmd in commands)
            result = {
                "snapshot": session.snapshot(),
                "commands": emitted,
                "rejected_frames": rejected,
            }
            self._publish(session, result)
        return result

    def ingest_event_stream(self, session_id: str, stream: bytes | str) -> dict:
        return self.ingest_events(session_id, parse_event_stream(stream))

    def session_state(self, session_id: str) -> dict:
        return self._session(session_id).snapshot()

    def episode_listing(self) -> list[dict]:
        return [_meta_record(meta) for meta in self.store.metas()]

    # -- live update fan-out ----------------------------------------------

    def subscribe(self, session_id: str) -> queue.Queue:
        session = self._session(session_id)
        q: queue.Queue = queue.Queue()
        with session.lock:
            session.subscribers.append(q)
            q.put({"snapshot": session.snapshot(), "commands": []})
        return q

    def unsubscribe(self, session_id: str, q: queue.Queue) -> None:
        session = self.sessions.get(session_id)
        if session is None:
            return
        with session.lock:
            if q in session.subscribers:
                session.subscribers.remove(q)

    @staticmethod
    def _publish(session: Session, update: dict) -> None:
        for q in session.subscribers:
            q.put(update)

    # -- replay evaluation -------------------------------------------------

    def run_replay_eval(
        self,
        runs: list[tuple[str, int, str]],
        base_seed: int = 0,
        profiles: dict | None = None,
    ) -> list[MetricsRow]:
        """Record-then-recall each (template, seed, profile) run and score it.

        Recordings are stored once per (template, seed) and shared across
        profiles; every run gets a fresh session. Unknown templates or
        profiles yield a failed row and the suite continues.
        """
        profiles = profiles or load_noise_profiles()
        episode_ids: dict[tuple[str, int], tuple[str, GroundTruth, bytes]] = {}
        table: list[MetricsRow] = []
        for template, row_seed, profile_name in runs:
            seed = row_seed + base_seed
            try:
                profile = profiles[profile_name]
            except KeyError:
                logger.warning("unknown noise profile %r; marking run failed", profile_name)
                table.append(_failed_row(template, seed, profile_name))
                continue
            try:
                key = (template, seed)
                if key not in episode_ids:
                    bundle = generate_scenario(template, seed)
                    meta = self.ingest_recording(
                        bundle.stream,
                        title=f"{template.replace('_', ' ')} take {seed:03d}",
                        location=bundle.scenario.location,
                        recorded_at=EVAL_RECORDED_AT,
                    )
                    episode_ids[key] = (meta.id, bundle.truth, bundle.stream)
                episode_id, truth, stream = episode_ids[key]
                recall_stream = perturb_stream(stream, profile, seed)
                created = self.create_session({"episode_id": episode_id})
                session_id = created["session_id"]
                self.ingest_event_stream(session_id, recall_stream)
                session = self._session(session_id)
                table.append(
                    evaluate_run(truth, session.trace, template=template, seed=seed, profile=profile_name)
                )
            except Exception as exc:  # noqa: BLE001 - a broken run must not sink the suite
                logger.warning("run (%s, %d, %s) failed: %s", template, seed, profile_name, exc)
                table.append(_failed_row(template, seed, profile_name))
        return table


def _failed_row(template: str, seed: int, profile: str) -> MetricsRow:
    return MetricsRow(
        template=template,
        seed=seed,
        profile=profile,
        steps_total=0,
        steps_completed=0,
        completion_rate=0.0,
        completion_frames=0,
        boundary_f1=0.0,
        next_step_accuracy=0.0,
        off_task_frames=0,
    )


def _graph_record(graph: SceneGraph | None) -> dict | None:
    if graph is None:
        return None
    return {
        "t": graph.t,
        "nodes": [
            {"id": n.id, "kind": n.kind.value, "label": n.label, "virtual": n.is_virtual()}
            for n in graph.nodes
        ],
        "edges": [
            {"source": e.source, "kind": e.kind.value, "target": e.target, "category": e.category.value}
            for e in graph.edges
        ],
    }


def _meta_record(meta: EpisodeMeta) -> dict:
    return {
        "id": meta.id,
        "title": meta.title,
        "recorded_at": meta.recorded_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "location": meta.location,
        "duration": meta.duration,
    }


def default_suite_text() -> str:
    from importlib import resources

    return resources.files("recallgraph.data").joinpath("default_suite.txt").read_text("utf-8")


def load_suite(source: str) -> list[tuple[str, int, str]]:
    """Parse a suite: the literal name 'default' or a path to a suite file."""
    if source == "default":
        return parse_suite(default_suite_text())
    with open(source, encoding="utf-8") as fh:
        return parse_suite(fh.read())
