// The action palette turns clicks into egocentric event frames. The
// console owns the little simulated world the user acts in (entity
// positions, the held item, the frame clock); it never interprets
// progress, it only synthesizes input the engine can perceive.

import type { EgoEventRecord, StepSnapshot, Triple } from "./types.js";

type Vec3 = [number, number, number];

const GAZE_ORIGIN: Vec3 = [0.0, 1.5, 0.1];
const RIGHT_REST: Vec3 = [0.25, 1.05, 0.3];
const LEFT_REST: Vec3 = [-0.25, 1.05, 0.3];
const SLOT_OFFSETS: Vec3[] = [
  [0.24, 0, 0],
  [0, 0, 0.24],
  [-0.24, 0, 0],
  [0, 0, -0.24],
];
const DISTRACTOR = "phone";

function unit(v: Vec3): Vec3 {
  const norm = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / norm, v[1] / norm, v[2] / norm];
}

export interface StepAffordance {
  verb: string;
  subject: string;
  destination: string | null;
}

// What acting out a step means, read off the server-provided plan data:
// the grasping triple names what to pick up, acts_on/relates_to carry the
// verb and the destination.
export function stepAffordance(step: StepSnapshot): StepAffordance | null {
  let subject: string | null = null;
  let destination: string | null = null;
  let verb = "move";
  for (const [source, kind, target] of step.required_triples as Triple[]) {
    if (kind === "grasping") {
      subject = target;
    } else if (kind === "acts_on") {
      verb = source;
      subject = subject ?? target;
    } else if (kind === "relates_to") {
      destination = target;
    }
  }
  if (subject === null) {
    const nextTo = (step.required_triples as Triple[]).find(([, kind]) => kind === "next_to");
    if (!nextTo) {
      return null;
    }
    subject = nextTo[0];
    destination = destination ?? nextTo[2];
  }
  return { verb, subject, destination };
}

export class ActionPalette {
  private readonly positions = new Map<string, Vec3>();
  private readonly slotsUsed = new Map<string, number>();
  private held: string | null = null;
  private clock = 0;

  constructor(entities: string[]) {
    // fixed grid, 0.6 m pitch: nothing is adjacent until the user moves it
    entities.forEach((label, i) => {
      this.positions.set(label, [(i % 4) * 0.6 - 0.9, 0.9, Math.floor(i / 4) * 0.6 + 0.4]);
    });
  }

  get frame(): number {
    return this.clock;
  }

  private detections(t: number): EgoEventRecord[] {
    return [...this.positions.entries()]
      .sort(([a], [b]) => (a < b ? -1 : 1))
      .map(([label, position]) => ({
        t,
        kind: "detection",
        entity_id: label,
        label,
        category: "object",
        position: [...position],
        confidence: 0.9,
      }));
  }

  private hands(t: number): EgoEventRecord[] {
    const heldAt = this.held !== null ? this.positions.get(this.held) : undefined;
    const right: Vec3 = heldAt ?? RIGHT_REST;
    return [
      { t, kind: "hand", side: "left", position: [...LEFT_REST], pose: "open" },
      { t, kind: "hand", side: "right", position: [...right], pose: this.held !== null ? "grasp" : "open" },
    ];
  }

  private gazeAt(t: number, target: string | null): EgoEventRecord[] {
    const at = target !== null ? this.positions.get(target) : undefined;
    if (!at) {
      return [];
    }
    const direction = unit([at[0] - GAZE_ORIGIN[0], at[1] - GAZE_ORIGIN[1], at[2] - GAZE_ORIGIN[2]]);
    return [{ t, kind: "gaze", origin: [...GAZE_ORIGIN], direction }];
  }

  private frameOf(gazeTarget: string | null, extra: EgoEventRecord[] = []): EgoEventRecord[] {
    const t = this.clock++;
    const retimed = extra.map((e) => ({ ...e, t }));
    return [...this.detections(t), ...this.gazeAt(t, gazeTarget), ...this.hands(t), ...retimed];
  }

  grasp(entity: string): EgoEventRecord[] {
    if (!this.positions.has(entity)) {
      return this.frameOf(null);
    }
    this.held = entity;
    return this.frameOf(entity);
  }

  moveNear(subject: string, destination: string, verb: string): EgoEventRecord[] {
    const dest = this.positions.get(destination);
    if (!dest || !this.positions.has(subject) || subject === destination) {
      return this.frameOf(null);
    }
    const slot = this.slotsUsed.get(destination) ?? 0;
    this.slotsUsed.set(destination, slot + 1);
    const offset = SLOT_OFFSETS[slot % SLOT_OFFSETS.length]!;
    this.positions.set(subject, [dest[0] + offset[0], dest[1] + offset[1], dest[2] + offset[2]]);
    this.held = subject;
    return this.frameOf(destination, [
      {
        t: 0,
        kind: "user_action",
        verb,
        subject_id: subject,
        object_id: destination,
        relation: "next_to",
      },
    ]);
  }

  release(): EgoEventRecord[] {
    this.held = null;
    return this.frameOf(null);
  }

  lookAt(entity: string): EgoEventRecord[] {
    return this.frameOf(this.positions.has(entity) ? entity : null);
  }

  speak(text: string): EgoEventRecord[] {
    return this.frameOf(null, [{ t: 0, kind: "speech", text }]);
  }

  // one frame in which the user is elsewhere: only a distractor is visible
  stepAway(): EgoEventRecord[] {
    const t = this.clock++;
    return [
      {
        t,
        kind: "detection",
        entity_id: DISTRACTOR,
        label: DISTRACTOR,
        category: "object",
        position: [2.0, 1.2, 2.0],
        confidence: 0.9,
      },
    ];
  }
}
