// @vitest-environment happy-dom

import { describe, expect, it } from "vitest";

import { renderDevices, renderFeed, renderPending, renderStats } from "../src/render.js";
import { applyEvent, initialState, loadSnapshot } from "../src/state.js";
import type { Disposition } from "../src/types.js";
import { device, phoneDecision, stats } from "./fixtures.js";

function container(): HTMLElement {
  const node = document.createElement("div");
  document.body.appendChild(node);
  return node;
}

describe("dom rendering", () => {
  it("renders the device table with disabled reasons", () => {
    const state = loadSnapshot(
      initialState(),
      [device(), device({ id: "p1.2", device_id: 2, disabled_reason: "signature: s1" })],
      [],
      stats(),
    );
    const target = container();
    renderDevices(target, state);
    const rows = target.querySelectorAll("tbody tr");
    expect(rows).toHaveLength(2);
    expect(rows[1].classList.contains("disabled")).toBe(true);
    expect(rows[1].textContent).toContain("signature: s1");
  });

  it("renders empty states", () => {
    const target = container();
    renderDevices(target, initialState());
    expect(target.textContent).toContain("No devices connected.");
    renderPending(target, initialState(), async () => undefined);
    expect(target.textContent).toContain("No pending decisions.");
  });

  it("pending card submits per-function dispositions and disables after external resolve", async () => {
    const state = loadSnapshot(initialState(), [], [phoneDecision()], stats());
    const target = container();
    const posted: Array<[string, Record<string, Disposition>]> = [];
    renderPending(target, state, async (id, dispositions) => {
      posted.push([id, dispositions]);
    });
    const selects = target.querySelectorAll("select");
    expect(selects).toHaveLength(2);
    (selects[0] as HTMLSelectElement).value = "deny";
    (selects[1] as HTMLSelectElement).value = "allow";
    (target.querySelector("button") as HTMLButtonElement).click();
    await new Promise((r) => setTimeout(r, 0));
    expect(posted).toEqual([["d1", { fn0: "deny", fn1: "allow" }]]);

    // a stale card re-rendered after an external resolve has no controls
    const resolvedState = applyEvent(state, {
      seq: 5,
      kind: "DecisionResolved",
      body: phoneDecision({ state: "Resolved" }) as any,
    });
    renderPending(target, resolvedState, async () => undefined);
    expect(target.querySelectorAll("select")).toHaveLength(0);
    expect(target.querySelectorAll("button")).toHaveLength(0);
    expect(target.textContent).toContain("resolved");
  });

  it("renders stats totals and the feed ring", () => {
    let state = loadSnapshot(initialState(), [], [], stats());
    state = applyEvent(state, { seq: 1, kind: "SignatureHit", body: { signature: "s1" } });
    const statsBox = container();
    renderStats(statsBox, state);
    expect(statsBox.textContent).toContain("frames 42");
    expect(statsBox.textContent).toContain("signature hits 1");

    const feedBox = container();
    renderFeed(feedBox, state);
    expect(feedBox.querySelectorAll(".event")).toHaveLength(1);
    expect(feedBox.textContent).toContain("SignatureHit");
  });
});
