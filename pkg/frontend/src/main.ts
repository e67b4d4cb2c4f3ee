// Boot: initial GETs seed the store, the event stream keeps it current,
// and every mutating control maps 1:1 to a control-API endpoint.

import { ApiError, ControlApi } from "./api.js";
import { EventStream } from "./sse.js";
import { applyEvent, initialState, loadSnapshot, type State } from "./state.js";
import {
  renderDevices,
  renderFeed,
  renderPending,
  renderStats,
  renderStatus,
  toast,
} from "./render.js";

const api = new ControlApi("");
let state: State = initialState();

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function redraw(): void {
  renderStatus(byId("status"), state);
  renderDevices(byId("devices"), state);
  renderPending(byId("pending"), state, async (decisionId, dispositions) => {
    await api.resolve(decisionId, dispositions);
    toast(byId("toasts"), `resolved ${decisionId}`, "ok");
  });
  renderFeed(byId("feed"), state);
  renderStats(byId("stats"), state);
}

async function refresh(): Promise<void> {
  const [devices, pending, stats] = await Promise.all([api.devices(), api.pending(), api.stats()]);
  state = loadSnapshot(state, devices, pending, stats);
  redraw();
}

function wireSignatureForm(): void {
  const form = byId("signature-form") as HTMLFormElement;
  const textarea = byId("signature-json") as HTMLTextAreaElement;
  const errorBox = byId("signature-error");
  form.addEventListener("submit", async (ev) => {
    ev.preventDefault();
    errorBox.textContent = "";
    let parsed: unknown;
    try {
      parsed = JSON.parse(textarea.value);
    } catch (err) {
      errorBox.textContent = `not valid JSON: ${String(err)}`;
      return;
    }
    try {
      const result = await api.uploadSignature(parsed);
      toast(byId("toasts"), `signature ${result.id} installed`, "ok");
      textarea.value = "";
    } catch (err) {
      errorBox.textContent = err instanceof ApiError ? err.detail : String(err);
    }
  });
}

async function boot(): Promise<void> {
  wireSignatureForm();
  await refresh().catch(() => undefined);
  const stream = new EventStream("/v1/events", {
    onEvent: (event) => {
      state = applyEvent(state, event);
      redraw();
    },
    onStatus: (connected) => {
      const wasDown = !state.connected;
      state = { ...state, connected };
      if (connected && wasDown) {
        // reconnect-safe: re-seed from the snapshot endpoints, then resume
        refresh().catch(() => undefined);
      }
      redraw();
    },
  });
  void stream.run();
}

boot().catch((err) => {
  document.body.textContent = `dashboard failed to start: ${String(err)}`;
});
