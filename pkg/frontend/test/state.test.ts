import { describe, expect, it } from "vitest";

import {
  FEED_LIMIT,
  applyEvent,
  deviceRows,
  initialState,
  loadSnapshot,
  pendingCards,
} from "../src/state.js";
import { device, phoneDecision, stats } from "./fixtures.js";

describe("view-model reducer", () => {
  it("seeds from snapshot GETs", () => {
    const state = loadSnapshot(initialState(), [device()], [phoneDecision()], stats());
    expect(deviceRows(state)).toHaveLength(1);
    expect(pendingCards(state)).toHaveLength(1);
    expect(state.stats?.frames_total).toBe(42);
  });

  it("upserts devices from connect and disable events", () => {
    let state = initialState();
    state = applyEvent(state, { seq: 1, kind: "DeviceConnected", body: device() as any });
    expect(deviceRows(state)[0].state).toBe("Configured");
    state = applyEvent(state, {
      seq: 2,
      kind: "DeviceDisabled",
      body: device({ state: "Disabled", disabled_reason: "signature: s1" }) as any,
    });
    expect(deviceRows(state)).toHaveLength(1);
    expect(deviceRows(state)[0].disabled_reason).toBe("signature: s1");
    expect(state.lastEventSeq).toBe(2);
  });

  it("tracks pending decisions through resolution", () => {
    let state = initialState();
    state = applyEvent(state, { seq: 1, kind: "PendingDecisionCreated", body: phoneDecision() as any });
    expect(pendingCards(state)[0].state).toBe("Pending");
    state = applyEvent(state, {
      seq: 2,
      kind: "DecisionResolved",
      body: phoneDecision({ state: "Resolved" }) as any,
    });
    expect(pendingCards(state)).toHaveLength(1);
    expect(pendingCards(state)[0].state).toBe("Resolved");
  });

  it("counts signature hits and applies stats ticks", () => {
    let state = initialState();
    state = applyEvent(state, { seq: 1, kind: "SignatureHit", body: { signature: "s1" } });
    state = applyEvent(state, { seq: 2, kind: "StatsTick", body: stats({ frames_total: 99 }) as any });
    expect(state.signatureHits).toBe(1);
    expect(state.stats?.frames_total).toBe(99);
  });

  it("caps the feed ring at the limit", () => {
    let state = initialState();
    for (let i = 1; i <= FEED_LIMIT + 50; i++) {
      state = applyEvent(state, { seq: i, kind: "StatsTick", body: {} });
    }
    expect(state.feed).toHaveLength(FEED_LIMIT);
    expect(state.feed[0].seq).toBe(51);
    expect(state.feed.at(-1)?.seq).toBe(FEED_LIMIT + 50);
  });

  it("does not mutate prior states", () => {
    const before = loadSnapshot(initialState(), [device()], [], stats());
    const after = applyEvent(before, {
      seq: 9,
      kind: "DeviceConnected",
      body: device({ id: "p1.2", device_id: 2 }) as any,
    });
    expect(deviceRows(before)).toHaveLength(1);
    expect(deviceRows(after)).toHaveLength(2);
  });
});
