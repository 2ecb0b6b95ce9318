// Server-sent-events reader over a streaming fetch body. Works in the
// browser and under node, so the live path is testable end to end.

import type { SessionUpdate } from "./types.js";

export interface Subscription {
  close(): void;
  done: Promise<void>;
}

export function subscribeSession(
  baseUrl: string,
  sessionId: string,
  onUpdate: (update: SessionUpdate) => void,
  onError?: (error: unknown) => void,
): Subscription {
  const controller = new AbortController();

  const done = (async () => {
    try {
      const response = await fetch(`${baseUrl}/sessions/${sessionId}/stream`, {
        signal: controller.signal,
        headers: { accept: "text/event-stream" },
      });
      if (!response.ok || response.body === null) {
        throw new Error(`stream request failed with status ${response.status}`);
      }
      const reader = response.body.getReader();
      const decoder = new TextDecoder();
      let buffer = "";
      for (;;) {
        const { value, done: finished } = await reader.read();
        if (finished) {
          return;
        }
        buffer += decoder.decode(value, { stream: true });
        let cut = buffer.indexOf("\n\n");
        while (cut >= 0) {
          const block = buffer.slice(0, cut);
          buffer = buffer.slice(cut + 2);
          for (const line of block.split("\n")) {
            if (line.startsWith("data: ")) {
              onUpdate(JSON.parse(line.slice(6)) as SessionUpdate);
            }
          }
          cut = buffer.indexOf("\n\n");
        }
      }
    } catch (error) {
      if (!controller.signal.aborted) {
        onError?.(error);
      }
    }
  })();

  return {
    close: () => controller.abort(),
    done,
  };
}
