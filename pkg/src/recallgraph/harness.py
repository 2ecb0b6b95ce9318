"""Synthetic task scenarios with ground-truth step labels and noise injection.

Three bundled templates (cooking, tidying, bench work) script a user who
grasps items and places them next to fixed destinations, two frames per
second. Generation is a pure function of (template, seed); perturbation
of a generated stream is a pure function of (stream, profile, seed); and
noise never touches the ground truth.

Layout discipline keeps the oracles honest: initial positions sit well
apart so no adjacency exists before it is scripted, destinations are far
from everything so placement slots (0.24 m out, fanned 90 degrees apart)
only ever create the scripted next_to edge, and carried items teleport to
their slot so transit never brushes past a bystander.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, replace
from importlib import resources

from .errors import UnknownTemplateError
from .perception import (
    Detection,
    EgoEvent,
    EventFrame,
    Gaze,
    HandState,
    Speech,
    UserAction,
    parse_event_stream,
    serialize_events,
)
from .scene_graph import fnv1a64

logger = logging.getLogger(__name__)

DEFAULT_FRAME_RATE = 2
SLOT_RADIUS = 0.24
SLOT_ANGLES_DEG = (20.0, 110.0, 200.0, 290.0)
GAZE_ORIGIN = (0.0, 1.5, 0.1)
LEFT_REST = (-0.25, 1.05, 0.3)
RIGHT_REST = (0.25, 1.05, 0.3)
SPURIOUS_LABELS = ("glare", "smudge", "shadow")

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class ScriptStep:
    verb: str
    subject: str
    destination: str
    speech: str


@dataclass(frozen=True)
class Scenario:
    name: str
    location: str
    vocabulary: dict[str, tuple[str, Vec3]]  # label -> (category, initial position)
    script: tuple[ScriptStep, ...]
    spans: tuple[tuple[int, int], ...]
    frame_rate: int = DEFAULT_FRAME_RATE


@dataclass(frozen=True)
class GroundTruthStep:
    index: int
    verb: str
    subject: str
    destination: str
    span: tuple[int, int]
    completion_frame: int


@dataclass(frozen=True)
class GroundTruth:
    steps: tuple[GroundTruthStep, ...]
    total_frames: int

    def active_step(self, frame: int) -> int:
        for step in self.steps:
            if step.span[0] <= frame <= step.span[1]:
                return step.index
        return self.steps[-1].index


@dataclass(frozen=True)
class ScenarioBundle:
    scenario: Scenario
    stream: bytes
    truth: GroundTruth


@dataclass(frozen=True)
class Interruption:
    start: int
    length: int
    distractor: str


@dataclass(frozen=True)
class NoiseProfile:
    name: str = "clean"
    detection_dropout: float = 0.0
    position_jitter: float = 0.0
    spurious_rate: float = 0.0
    interruption: Interruption | None = None

    def __post_init__(self):
        if not 0.0 <= self.detection_dropout <= 1.0:
            raise ValueError("detection_dropout must lie in [0, 1]")
        if self.position_jitter < 0.0 or self.spurious_rate < 0.0:
            raise ValueError("jitter and spurious rate must be non-negative")


@dataclass(frozen=True)
class _Template:
    location: str
    vocabulary: dict[str, tuple[str, Vec3]]
    steps: tuple[ScriptStep, ...]


_TEMPLATES: dict[str, _Template] = {
    "stew_5step": _Template(
        location="kitchen",
        vocabulary={
            "onion": ("object", (-0.90, 0.9, 0.45)),
            "carrot": ("object", (-0.90, 0.9, 0.95)),
            "chicken": ("object", (-0.42, 0.9, 0.45)),
            "spoon": ("object", (-0.42, 0.9, 0.95)),
            "pot": ("object", (0.45, 0.9, 0.70)),
            "stove": ("ui_element", (1.45, 0.9, 0.70)),
        },
        steps=(
            ScriptStep("add", "onion", "pot", "start with the onion"),
            ScriptStep("add", "carrot", "pot", "carrot goes in"),
            ScriptStep("add", "chicken", "pot", "now the chicken"),
            ScriptStep("stir", "spoon", "pot", "give it a stir"),
            ScriptStep("cook", "pot", "stove", "onto the stove"),
        ),
    ),
    "organize_closet": _Template(
        location="closet",
        vocabulary={
            "sweater": ("object", (-1.00, 1.2, 0.50)),
            "jeans": ("object", (-1.00, 1.2, 0.95)),
            "scarf": ("object", (-0.55, 1.2, 0.50)),
            "hat": ("object", (-0.55, 1.2, 0.95)),
            "belt": ("object", (-0.10, 1.2, 0.50)),
            "box": ("object", (0.60, 0.6, 0.90)),
            "shelf_a": ("object", (0.70, 1.60, 0.70)),
            "shelf_b": ("object", (1.75, 1.60, 0.70)),
            "rail": ("object", (1.30, 2.05, 0.20)),
        },
        steps=(
            ScriptStep("fold", "sweater", "shelf_a", "sweaters up top"),
            ScriptStep("fold", "jeans", "shelf_a", "jeans beside them"),
            ScriptStep("hang", "scarf", "rail", "scarf on the rail"),
            ScriptStep("place", "hat", "shelf_b", "hat goes high"),
            ScriptStep("place", "belt", "box", "belt in the box"),
            ScriptStep("store", "box", "shelf_b", "box away"),
        ),
    ),
    "lab_prep": _Template(
        location="lab",
        vocabulary={
            "beaker": ("object", (-0.95, 0.9, 0.45)),
            "flask": ("object", (-0.95, 0.9, 0.95)),
            "pipette": ("object", (-0.50, 0.9, 0.45)),
            "reagent_a": ("object", (-0.50, 0.9, 0.95)),
            "reagent_b": ("object", (-1.40, 0.9, 0.45)),
            "notebook": ("object", (-1.40, 0.9, 0.95)),
            "timer": ("ui_element", (-1.85, 0.9, 0.70)),
            "scale": ("object", (0.50, 0.9, 0.50)),
            "rack": ("object", (0.50, 0.9, 1.50)),
            "bench_mat": ("object", (1.50, 0.9, 1.00)),
        },
        steps=(
            ScriptStep("weigh", "reagent_a", "scale", "reagent a first"),
            ScriptStep("weigh", "reagent_b", "scale", "then reagent b"),
            ScriptStep("rack", "beaker", "rack", "beaker in the rack"),
            ScriptStep("rack", "flask", "rack", "flask next"),
            ScriptStep("attach", "pipette", "rack", "pipette clipped on"),
            ScriptStep("log", "notebook", "bench_mat", "notebook ready"),
            ScriptStep("set", "timer", "bench_mat", "timer set"),
        ),
    ),
}


def available_templates() -> list[str]:
    return sorted(_TEMPLATES)


def _unit(vec: Vec3) -> Vec3:
    norm = math.sqrt(sum(c * c for c in vec))
    return (vec[0] / norm, vec[1] / norm, vec[2] / norm)


def _gaze_toward(point: Vec3) -> Gaze:
    direction = _unit((point[0] - GAZE_ORIGIN[0], point[1] - GAZE_ORIGIN[1], point[2] - GAZE_ORIGIN[2]))
    return Gaze(t=0, origin=GAZE_ORIGIN, direction=direction)


class _FrameBuilder:
    """Accumulates one recording's events with a strict rng call order."""

    def __init__(self, template: _Template, rng: random.Random):
        self.rng = rng
        self.template = template
        self.positions: dict[str, Vec3] = {
            label: tuple(c + rng.uniform(-0.03, 0.03) for c in pos)
            for label, (_, pos) in template.vocabulary.items()
        }
        self.events: list[EgoEvent] = []
        self.t = 0
        self.right_hand: tuple[Vec3, str] = (RIGHT_REST, "open")
        self.slot_counts: dict[str, int] = {}

    def slot_for(self, destination: str) -> Vec3:
        index = self.slot_counts.get(destination, 0)
        self.slot_counts[destination] = index + 1
        angle = math.radians(
            SLOT_ANGLES_DEG[index % len(SLOT_ANGLES_DEG)] + self.rng.uniform(-5.0, 5.0)
        )
        base = self.positions[destination]
        return (base[0] + SLOT_RADIUS * math.cos(angle), base[1], base[2] + SLOT_RADIUS * math.sin(angle))

    def emit_frame(self, gaze_target: str, speech: str | None = None, action: UserAction | None = None,
                   only_labels: list[str] | None = None) -> None:
        t = self.t
        labels = only_labels if only_labels is not None else sorted(self.positions)
        for label in labels:
            category, _ = self.template.vocabulary[label]
            self.events.append(
                Detection(
                    t=t,
                    entity_id=label,
                    label=label,
                    category=category,
                    position=self.positions[label],
                    confidence=round(self.rng.uniform(0.82, 0.97), 4),
                )
            )
        self.events.append(replace(_gaze_toward(self.positions[gaze_target]), t=t))
        self.events.append(HandState(t=t, side="left", position=LEFT_REST, pose="open"))
        pos, pose = self.right_hand
        self.events.append(HandState(t=t, side="right", position=pos, pose=pose))
        if speech:
            self.events.append(Speech(t=t, text=speech))
        if action is not None:
            self.events.append(replace(action, t=t))
        self.t += 1

    def wander_target(self) -> str:
        return self.rng.choice(sorted(self.positions))


def generate_scenario(template: str, seed: int) -> ScenarioBundle:
    """Deterministic recording for one template and seed, with ground truth.

    Each step runs a fixed choreography: two gaze frames, a grasp frame,
    a placement frame (the item teleports to its slot), a hold frame, a
    release frame, then one or two idle frames. Ground-truth spans start
    at each step's first frame (the opening step absorbs the intro) and
    the completion frame is the placement frame.
    """
    if template not in _TEMPLATES:
        raise UnknownTemplateError(template, _TEMPLATES)
    template_def = _TEMPLATES[template]
    rng = random.Random(fnv1a64(f"{template}|{seed}".encode("utf-8")))
    builder = _FrameBuilder(template_def, rng)

    intro = rng.randint(2, 4)
    for _ in range(intro):
        builder.emit_frame(builder.wander_target())

    gt_steps: list[GroundTruthStep] = []
    starts: list[int] = []
    for index, step in enumerate(template_def.steps):
        start = builder.t
        starts.append(start)
        subject_pos = builder.positions[step.subject]
        slot = builder.slot_for(step.destination)
        # the grasp-frame action names the destination but carries no
        # relation yet: adjacency only becomes true at placement
        reach = UserAction(t=0, verb=step.verb, subject_id=step.subject, object_id=step.destination)
        settle = UserAction(t=0, verb=step.verb, subject_id=step.subject,
                            object_id=step.destination, relation="next_to")

        builder.emit_frame(step.subject, speech=step.speech)
        builder.emit_frame(step.subject)
        builder.right_hand = (subject_pos, "grasp")
        builder.emit_frame(step.subject, action=reach)
        completion = builder.t
        builder.positions[step.subject] = slot
        builder.right_hand = (slot, "grasp")
        builder.emit_frame(step.destination, action=settle)
        builder.emit_frame(step.destination, action=settle)
        builder.right_hand = (RIGHT_REST, "open")
        builder.emit_frame(step.destination)
        for _ in range(rng.randint(1, 2)):
            builder.emit_frame(builder.wander_target())
        gt_steps.append(GroundTruthStep(index, step.verb, step.subject, step.destination,
                                        (start, builder.t - 1), completion))

    for _ in range(2):
        builder.emit_frame(builder.wander_target())

    total = builder.t
    spans = []
    for i, gt in enumerate(gt_steps):
        lo = 0 if i == 0 else starts[i]
        hi = (starts[i + 1] - 1) if i + 1 < len(starts) else total - 1
        spans.append((lo, hi))
        gt_steps[i] = replace(gt, span=(lo, hi))

    scenario = Scenario(
        name=template,
        location=template_def.location,
        vocabulary=dict(template_def.vocabulary),
        script=template_def.steps,
        spans=tuple(spans),
    )
    truth = GroundTruth(tuple(gt_steps), total)
    return ScenarioBundle(scenario, serialize_events(builder.events), truth)


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0.0:
        return 0
    limit = math.exp(-lam)
    k, p = 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def perturb_stream(stream: bytes, profile: NoiseProfile, seed: int) -> bytes:
    """Apply seeded dropout, jitter, spurious detections and one optional
    distractor interruption. A zero profile returns the stream unchanged,
    byte for byte. Ground truth is never touched: noise hides or adds
    observations, it does not relabel the task.
    """
    frames = parse_event_stream(stream)
    rng = random.Random(fnv1a64(f"perturb|{seed}".encode("utf-8")))
    out_frames: list[list[EgoEvent]] = []
    for frame in frames:
        kept: list[EgoEvent] = []
        for event in frame.events:
            if isinstance(event, Detection):
                if profile.detection_dropout > 0.0 and rng.random() < profile.detection_dropout:
                    continue
                position = event.position
                if profile.position_jitter > 0.0:
                    position = tuple(c + rng.gauss(0.0, profile.position_jitter) for c in position)
                kept.append(replace(event, position=position))
            else:
                kept.append(event)
        if profile.spurious_rate > 0.0:
            for i in range(_poisson(rng, profile.spurious_rate)):
                kept.append(
                    Detection(
                        t=frame.t,
                        entity_id=f"spur_{frame.t}_{i}",
                        label=rng.choice(SPURIOUS_LABELS),
                        category="object",
                        position=(rng.uniform(-1.2, 1.8), 0.9, rng.uniform(0.3, 1.4)),
                        confidence=0.9,
                    )
                )
        out_frames.append(kept)

    if profile.interruption is not None:
        intr = profile.interruption
        start = min(max(intr.start, 0), len(out_frames))
        base_t = frames[start].t if start < len(frames) else (frames[-1].t + 1 if frames else 0)
        inserted = [
            [
                Detection(
                    t=base_t + i,
                    entity_id=intr.distractor,
                    label=intr.distractor,
                    category="object",
                    position=(2.0, 1.2, 2.0),
                    confidence=0.9,
                )
            ]
            for i in range(intr.length)
        ]
        shifted = [
            [replace(e, t=e.t + intr.length) for e in events] for events in out_frames[start:]
        ]
        out_frames = out_frames[:start] + inserted + shifted

    return serialize_events([e for events in out_frames for e in events])


def load_noise_profiles(extra_path: str | None = None) -> dict[str, NoiseProfile]:
    """Named profiles from the bundled config, optionally overlaid by a user file."""
    raw = json.loads(resources.files("recallgraph.data").joinpath("noise_profiles.json").read_text("utf-8"))
    if extra_path:
        with open(extra_path, encoding="utf-8") as fh:
            raw.update(json.load(fh))
    profiles: dict[str, NoiseProfile] = {}
    for name, body in raw.items():
        interruption = None
        if body.get("interruption"):
            interruption = Interruption(**body["interruption"])
        profiles[name] = NoiseProfile(
            name=name,
            detection_dropout=body.get("detection_dropout", 0.0),
            position_jitter=body.get("position_jitter", 0.0),
            spurious_rate=body.get("spurious_rate", 0.0),
            interruption=interruption,
        )
    return profiles


@dataclass(frozen=True)
class TraceRow:
    """Per-frame tracker snapshot a session records for evaluation."""

    frame: int
    t: int
    current_step: int
    off_task: bool
    satisfied: tuple[bool, ...]


@dataclass(frozen=True)
class MetricsRow:
    template: str
    seed: int
    profile: str
    steps_total: int
    steps_completed: int
    completion_rate: float
    completion_frames: int
    boundary_f1: float
    next_step_accuracy: float
    off_task_frames: int


def evaluate_run(truth: GroundTruth, rows: list[TraceRow], template: str = "",
                 seed: int = 0, profile: str = "") -> MetricsRow:
    """Score one recall run against its scenario's ground truth.

    Boundary F1 pairs each step's first-satisfied frame with the ground
    truth completion frame at a +/-2 frame tolerance. Next-step accuracy
    counts frames where the tracker points at the ground-truth active
    step or the one after it. Both assume the trace is frame-aligned
    with the ground truth, which holds for every profile that does not
    insert frames.
    """
    if len(rows) < truth.total_frames:
        raise ValueError(f"trace has {len(rows)} frames, ground truth needs {truth.total_frames}")
    steps_total = len(truth.steps)
    final = rows[-1]
    steps_completed = sum(final.satisfied)
    completion_rate = steps_completed / steps_total if steps_total else 0.0

    completion_frames = len(rows)
    for row in rows:
        if row.current_step >= steps_total:
            completion_frames = row.frame + 1
            break

    first_satisfied: dict[int, int] = {}
    for row in rows:
        for k, done in enumerate(row.satisfied):
            if done and k not in first_satisfied:
                first_satisfied[k] = row.frame
    tp = sum(
        1
        for step in truth.steps
        if step.index in first_satisfied and abs(first_satisfied[step.index] - step.completion_frame) <= 2
    )
    predicted = len(first_satisfied)
    precision = tp / predicted if predicted else 0.0
    recall = tp / steps_total if steps_total else 0.0
    boundary_f1 = 0.0 if tp == 0 else 2 * precision * recall / (precision + recall)

    hits = 0
    compared = min(len(rows), truth.total_frames)
    for i in range(compared):
        active = truth.active_step(i)
        if rows[i].current_step in (active, active + 1):
            hits += 1
    next_step_accuracy = hits / compared if compared else 0.0

    return MetricsRow(
        template=template,
        seed=seed,
        profile=profile,
        steps_total=steps_total,
        steps_completed=steps_completed,
        completion_rate=completion_rate,
        completion_frames=completion_frames,
        boundary_f1=boundary_f1,
        next_step_accuracy=next_step_accuracy,
        off_task_frames=sum(1 for row in rows if row.off_task),
    )


def parse_suite(text: str) -> list[tuple[str, int, str]]:
    """Suite spec: one `template seed profile` triple per non-comment line."""
    runs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3:
            raise ValueError(f"suite line {line_no}: expected 'template seed profile', got {line!r}")
        runs.append((parts[0], int(parts[1]), parts[2]))
    return runs
