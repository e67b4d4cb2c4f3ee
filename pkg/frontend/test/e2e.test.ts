// Dashboard end-to-end against the mock control API: the full store loop
// (snapshot GETs + event stream + mutations) with zero gateway code.

import { describe, expect, it } from "vitest";

import { ControlApi } from "../src/api.js";
import { EventStream } from "../src/sse.js";
import { applyEvent, initialState, loadSnapshot, pendingCards, type State } from "../src/state.js";
import { MockControlApi } from "./mockapi.js";
import { device, phoneDecision, stats } from "./fixtures.js";

async function until(cond: () => boolean, ms = 2000): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    if (cond()) return;
    await new Promise((r) => setTimeout(r, 2));
  }
  if (!cond()) throw new Error("condition not met");
}

function bootDashboard(mock: MockControlApi) {
  const api = new ControlApi("", mock.fetch);
  let state: State = initialState();
  const stream = new EventStream(
    "/v1/events",
    {
      onEvent: (event) => {
        state = applyEvent(state, event);
      },
      onStatus: (connected) => {
        state = { ...state, connected };
        if (connected) {
          void refresh();
        }
      },
    },
    mock.fetch,
    () => Promise.resolve(),
  );
  const refresh = async () => {
    const [devices, pending, statsSnap] = await Promise.all([
      api.devices(),
      api.pending(),
      api.stats(),
    ]);
    state = loadSnapshot(state, devices, pending, statsSnap);
  };
  const run = stream.run();
  return { api, stream, run, view: () => state, refresh };
}

describe("dashboard e2e on the mock api", () => {
  it("attach surfaces a pending card within a second", async () => {
    const mock = new MockControlApi();
    mock.stats = stats();
    const dash = bootDashboard(mock);

    const attachedAt = Date.now();
    mock.emit("DeviceConnected", device({ id: "p1.3", device_id: 3, state: "Default" }));
    mock.pending = [phoneDecision()];
    mock.emit("PendingDecisionCreated", phoneDecision());

    await until(() => pendingCards(dash.view()).length === 1);
    expect(Date.now() - attachedAt).toBeLessThan(1000);
    const card = pendingCards(dash.view())[0];
    expect(card.state).toBe("Pending");
    expect(card.functions.map((f) => f.label)).toEqual(["mass storage", "HID"]);

    dash.stream.stop();
    mock.dropConnection();
    await dash.run;
  });

  it("resolving flips the card and records the exact POST", async () => {
    const mock = new MockControlApi();
    mock.pending = [phoneDecision()];
    const dash = bootDashboard(mock);
    await until(() => dash.view().connected);
    await until(() => pendingCards(dash.view()).length === 1);

    await dash.api.resolve("d1", { fn0: "redirect:sandbox", fn1: "allow" });
    await until(() => pendingCards(dash.view())[0]?.state === "Resolved");
    const resolved = pendingCards(dash.view())[0];
    expect(resolved.functions.find((f) => f.function_id === "fn0")?.resolution).toBe(
      "redirect:sandbox",
    );
    expect(mock.posts[0].path).toBe("/v1/pending/d1");

    dash.stream.stop();
    mock.dropConnection();
    await dash.run;
  });

  it("reconnect resumes the feed with no gaps", async () => {
    const mock = new MockControlApi();
    const dash = bootDashboard(mock);
    mock.devices = [device({ id: "p1.1" })];
    mock.emit("DeviceConnected", device({ id: "p1.1" }));
    await until(() => dash.view().feed.length === 1);

    mock.dropConnection();
    // the snapshot endpoints stay consistent with the events, as the real
    // control plane guarantees (no state change without its event)
    const disabled = device({ id: "p1.1", state: "Disabled", disabled_reason: "signature: s1" });
    mock.devices = [disabled];
    mock.emit("SignatureHit", { signature: "s1", device_id: 1 });
    mock.emit("DeviceDisabled", disabled);

    await until(() => dash.view().feed.length === 3);
    const seqs = dash.view().feed.map((e) => e.seq);
    expect(seqs).toEqual([1, 2, 3]);
    expect(dash.view().signatureHits).toBe(1);
    expect(dash.view().devices.get("p1.1")?.disabled_reason).toBe("signature: s1");

    dash.stream.stop();
    mock.dropConnection();
    await dash.run;
  });
});
