// Browser wiring: episode picker, action palette, live session rendering.
// All state beyond the session id (kept in the URL hash) is server-side.

import { ApiClient, ApiError } from "./api.js";
import { ActionPalette, stepAffordance } from "./palette.js";
import { subscribeSession } from "./sse.js";
import type { Candidate, Snapshot } from "./types.js";
import { buildView } from "./view.js";
import { renderHtml } from "./render.js";

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get("api") ?? "http://127.0.0.1:8765");

const app = document.getElementById("app")!;
const paletteHost = document.getElementById("palette")!;
const errorHost = document.getElementById("errors")!;

let palette: ActionPalette | null = null;
let lastSnapshot: Snapshot | null = null;

function showError(message: string, retry?: () => void) {
  errorHost.innerHTML = `<div class="banner error">${message}</div>`;
  if (retry) {
    const button = document.createElement("button");
    button.textContent = "retry";
    button.onclick = () => {
      errorHost.innerHTML = "";
      retry();
    };
    errorHost.appendChild(button);
  }
}

function renderUpdate(snapshot: Snapshot, commands: Parameters<typeof buildView>[1]) {
  lastSnapshot = snapshot;
  app.innerHTML = renderHtml(buildView(snapshot, commands));
  renderPalette(snapshot);
}

function paletteButton(label: string, onClick: () => void): HTMLButtonElement {
  const button = document.createElement("button");
  button.textContent = label;
  button.onclick = onClick;
  return button;
}

async function post(events: ReturnType<ActionPalette["grasp"]>) {
  if (lastSnapshot === null) {
    return;
  }
  try {
    const result = await api.postEvents(lastSnapshot.session_id, events);
    if (result.rejected_frames) {
      showError(`${result.rejected_frames} frame(s) rejected; palette still live`);
    }
  } catch (error) {
    showError(error instanceof ApiError ? error.message : "service unreachable");
  }
}

function renderPalette(snapshot: Snapshot) {
  if (palette === null) {
    palette = new ActionPalette(snapshot.entities);
  }
  paletteHost.innerHTML = "";
  const current = snapshot.steps.find((s) => s.current);
  if (current) {
    const affordance = stepAffordance(current);
    if (affordance) {
      paletteHost.appendChild(
        paletteButton(`grasp ${affordance.subject}`, () => void post(palette!.grasp(affordance.subject))),
      );
      if (affordance.destination) {
        paletteHost.appendChild(
          paletteButton(
            `move ${affordance.subject} near ${affordance.destination}`,
            () =>
              void post(
                palette!.moveNear(affordance.subject, affordance.destination!, affordance.verb),
              ),
          ),
        );
      }
    }
  }
  for (const entity of snapshot.entities) {
    paletteHost.appendChild(paletteButton(`look at ${entity}`, () => void post(palette!.lookAt(entity))));
  }
  paletteHost.appendChild(paletteButton("release", () => void post(palette!.release())));
  paletteHost.appendChild(paletteButton("step away", () => void post(palette!.stepAway())));
  const speech = paletteButton("speak…", () => {
    const text = window.prompt("say what?");
    if (text) {
      void post(palette!.speak(text));
    }
  });
  paletteHost.appendChild(speech);
}

function attach(sessionId: string) {
  window.location.hash = sessionId;
  subscribeSession(
    api.baseUrl,
    sessionId,
    (update) => renderUpdate(update.snapshot, update.commands),
    () => showError("live stream lost", () => attach(sessionId)),
  );
}

async function startSession(candidateId: string) {
  const created = await api.createSession({ episode_id: candidateId });
  if (created.session_id && created.snapshot) {
    renderUpdate(created.snapshot, []);
    attach(created.session_id);
  }
}

function renderPicker(candidates: Candidate[]) {
  app.innerHTML = `<h1>Pick an episode</h1>`;
  const list = document.createElement("ul");
  list.className = "candidates";
  for (const candidate of candidates) {
    const item = document.createElement("li");
    const button = paletteButton(
      `${candidate.title} (${candidate.location}, ${candidate.duration} frames)`,
      () => void startSession(candidate.id).catch((e) => showError(String(e))),
    );
    item.appendChild(button);
    list.appendChild(item);
  }
  app.appendChild(list);
}

async function boot() {
  const existing = window.location.hash.replace(/^#/, "");
  if (existing) {
    try {
      const snapshot = await api.getState(existing);
      renderUpdate(snapshot, []);
      attach(existing);
      return;
    } catch {
      window.location.hash = "";
    }
  }
  try {
    const episodes = await api.listEpisodes();
    if (episodes.length === 0) {
      app.innerHTML = `<div class="empty">No episodes recorded yet. Use the CLI to record one.</div>`;
      return;
    }
    renderPicker(episodes);
  } catch (error) {
    showError(
      error instanceof ApiError ? error.message : "service unreachable",
      () => void boot(),
    );
  }
}

void boot();
