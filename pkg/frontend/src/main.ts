/**
 * Browser entry point: wires the store and renderers to a minimal page
 * with a transcript pane, an input box, and an expandable trace view for
 * the last turn.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderTrace, renderTranscript } from "./render.js";
import { ChatStore } from "./store.js";

async function boot(): Promise<void> {
  const app = document.getElementById("app");
  if (!app) {
    return;
  }
  app.innerHTML = `
    <div id="transcript"></div>
    <div id="trace"></div>
    <form id="composer">
      <input id="message" autocomplete="off"
             placeholder="Describe the defect or ask a question…" />
      <button type="submit">Send</button>
    </form>
    <div id="status"></div>`;

  const transcriptEl = document.getElementById("transcript")!;
  const traceEl = document.getElementById("trace")!;
  const statusEl = document.getElementById("status")!;
  const form = document.getElementById("composer") as HTMLFormElement;
  const input = document.getElementById("message") as HTMLInputElement;

  const client = new ApiClient("");
  const health = await client.health();
  statusEl.textContent = health.diffusion_available
    ? "generator loaded"
    : "generator unavailable (chat and retrieval only)";

  // reuse the session across reloads so the transcript survives
  const saved = window.sessionStorage.getItem("moldassist-session");
  let store: ChatStore;
  if (saved) {
    store = await ChatStore.load(client, saved);
  } else {
    const session = await client.createSession();
    window.sessionStorage.setItem("moldassist-session", session.id);
    store = new ChatStore(session.id);
  }

  const redraw = () => {
    transcriptEl.innerHTML = renderTranscript(store.transcript, store.pending);
    transcriptEl.scrollTop = transcriptEl.scrollHeight;
  };
  redraw();

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const message = input.value.trim();
    if (!message || store.pending !== null) {
      return;
    }
    input.value = "";
    void (async () => {
      try {
        store.beginTurn(message);
        redraw();
        const reply = await client.chat(store.sessionId, message);
        store.completeTurn(reply.turn_id, reply.reply, reply.language);
        redraw();
        traceEl.innerHTML = renderTrace(await client.trace(reply.turn_id));
      } catch (err) {
        store.failTurn();
        redraw();
        statusEl.textContent =
          err instanceof ApiError && err.isConflict
            ? "a turn is already running; wait for it to finish"
            : String(err);
      }
    })();
  });
}

if (typeof document !== "undefined") {
  void boot();
}
