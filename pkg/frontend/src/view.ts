// Pure view construction: (snapshot, commands) in, serializable view out.
// Every status shown is server-attributed; the only client additions are
// warnings about commands the current graph cannot anchor.

import type { Command, GraphEdge, Snapshot } from "./types.js";

export type StepStatus = "done" | "skipped" | "current" | "todo";

export interface StepRow {
  index: number;
  description: string;
  status: StepStatus;
}

export interface NodeView {
  id: string;
  label: string;
  kind: string;
  virtual: boolean;
  highlighted: boolean;
}

export interface TipView {
  anchor: string;
  text: string;
}

export interface SessionView {
  title: string;
  currentStep: number | "complete";
  completionBanner: boolean;
  offTask: boolean;
  confidence: number;
  progressLabel: string;
  stepRows: StepRow[];
  nodes: NodeView[];
  edges: GraphEdge[];
  voiceBanners: string[];
  tips: TipView[];
  warnings: string[];
}

function stepStatus(step: Snapshot["steps"][number]): StepStatus {
  if (step.skipped) {
    return "skipped";
  }
  if (step.satisfied) {
    return "done";
  }
  if (step.current) {
    return "current";
  }
  return "todo";
}

export function buildView(snapshot: Snapshot, commands: Command[]): SessionView {
  const nodeIds = new Set((snapshot.graph?.nodes ?? []).map((n) => n.id));
  const highlighted = new Set<string>();
  const voiceBanners: string[] = [];
  const tips: TipView[] = [];
  const warnings: string[] = [];

  for (const command of commands) {
    if (command.kind === "Voice") {
      voiceBanners.push(command.text ?? "");
    } else if (command.kind === "Highlight") {
      if (command.target !== undefined && nodeIds.has(command.target)) {
        highlighted.add(command.target);
      } else {
        warnings.push(`highlight target ${command.target ?? "?"} is not in the current scene`);
        voiceBanners.push(`(unanchored) highlight ${command.target ?? "?"}`);
      }
    } else {
      const anchor = command.target !== undefined && nodeIds.has(command.target) ? command.target : "user";
      if (anchor !== command.target) {
        warnings.push(`tip anchor ${command.target ?? "?"} is not in the current scene`);
      }
      tips.push({ anchor, text: command.text ?? "" });
    }
  }

  const done = snapshot.metrics.steps_completed;
  const total = snapshot.metrics.steps_total;
  return {
    title: snapshot.title,
    currentStep: snapshot.current_step,
    completionBanner: snapshot.current_step === "complete",
    offTask: snapshot.off_task,
    confidence: snapshot.confidence,
    progressLabel: `${done}/${total}`,
    stepRows: snapshot.steps.map((step) => ({
      index: step.index,
      description: step.description,
      status: stepStatus(step),
    })),
    nodes: (snapshot.graph?.nodes ?? []).map((n) => ({
      id: n.id,
      label: n.label,
      kind: n.kind,
      virtual: n.virtual,
      highlighted: highlighted.has(n.id),
    })),
    edges: snapshot.graph?.edges ?? [],
    voiceBanners,
    tips,
    warnings,
  };
}
