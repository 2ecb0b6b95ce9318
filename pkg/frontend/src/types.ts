// Wire shapes of the session service; the console renders these verbatim
// and never derives its own progress facts.

export type Triple = [string, string, string];

export interface StepSnapshot {
  index: number;
  description: string;
  span: [number, number];
  required_triples: Triple[];
  satisfied: boolean;
  skipped: boolean;
  current: boolean;
}

export interface GraphNode {
  id: string;
  kind: string;
  label: string;
  virtual: boolean;
}

export interface GraphEdge {
  source: string;
  kind: string;
  target: string;
  category: string;
}

export interface GraphRecord {
  t: number;
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface MetricsRecord {
  steps_total: number;
  steps_completed: number;
  frames_elapsed: number;
  off_task_frames: number;
  commands_issued: number;
  elapsed_seconds: number;
}

export interface Snapshot {
  session_id: string;
  episode_id: string;
  title: string;
  current_step: number | "complete";
  steps: StepSnapshot[];
  entities: string[];
  off_task: boolean;
  idle_frames: number;
  confidence: number;
  metrics: MetricsRecord;
  graph: GraphRecord | null;
}

export interface Command {
  kind: "Highlight" | "Tip" | "Voice";
  issued_at: number;
  target?: string;
  text?: string;
}

export interface SessionUpdate {
  snapshot: Snapshot;
  commands: Command[];
  rejected_frames?: number;
}

export interface EpisodeMeta {
  id: string;
  title: string;
  recorded_at: string;
  location: string;
  duration: number;
}

export interface Candidate extends EpisodeMeta {
  score?: number;
}

export interface CreateSessionResult {
  session_id: string | null;
  candidates: Candidate[];
  chosen?: EpisodeMeta;
  snapshot?: Snapshot;
}

export interface SessionQuery {
  keywords?: string[];
  location?: string;
  episode_id?: string;
  k?: number;
}

export type EgoEventRecord = { t: number; kind: string } & Record<string, unknown>;
