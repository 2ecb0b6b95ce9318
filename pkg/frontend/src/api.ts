// Thin fetch client for the session service.

import type {
  CreateSessionResult,
  EgoEventRecord,
  EpisodeMeta,
  SessionQuery,
  SessionUpdate,
  Snapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { error?: string; detail?: string };
      detail = body.error ?? body.detail ?? detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  async listEpisodes(): Promise<EpisodeMeta[]> {
    const body = await expectJson<{ episodes: EpisodeMeta[] }>(await fetch(`${this.baseUrl}/episodes`));
    return body.episodes;
  }

  async recordEpisode(stream: string, title: string, location: string): Promise<EpisodeMeta> {
    const params = new URLSearchParams({ title, location });
    return expectJson(
      await fetch(`${this.baseUrl}/episodes?${params}`, { method: "POST", body: stream }),
    );
  }

  async createSession(query: SessionQuery): Promise<CreateSessionResult> {
    return expectJson(
      await fetch(`${this.baseUrl}/sessions`, { method: "POST", body: JSON.stringify(query) }),
    );
  }

  async postEvents(sessionId: string, events: EgoEventRecord[]): Promise<SessionUpdate> {
    const body = events.map((e) => JSON.stringify(e)).join("\n") + "\n";
    return expectJson(
      await fetch(`${this.baseUrl}/sessions/${sessionId}/events`, { method: "POST", body }),
    );
  }

  async getState(sessionId: string): Promise<Snapshot> {
    return expectJson(await fetch(`${this.baseUrl}/sessions/${sessionId}/state`));
  }
}
