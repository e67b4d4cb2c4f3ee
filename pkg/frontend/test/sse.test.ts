import { describe, expect, it } from "vitest";

import { EventStream } from "../src/sse.js";
import type { EventMessage } from "../src/types.js";
import { MockControlApi } from "./mockapi.js";
import { device } from "./fixtures.js";

function collectStream(mock: MockControlApi) {
  const received: EventMessage[] = [];
  const statuses: boolean[] = [];
  const stream = new EventStream(
    "/v1/events",
    {
      onEvent: (e) => received.push(e),
      onStatus: (up) => statuses.push(up),
    },
    mock.fetch,
    () => Promise.resolve(), // no real sleeping in tests
  );
  return { stream, received, statuses };
}

async function until(cond: () => boolean, ms = 1000): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    if (cond()) return;
    await new Promise((r) => setTimeout(r, 2));
  }
  if (!cond()) throw new Error("condition not met");
}

describe("event stream client", () => {
  it("delivers events and tracks the last id", async () => {
    const mock = new MockControlApi();
    mock.emit("DeviceConnected", device());
    const { stream, received } = collectStream(mock);
    const run = stream.run();
    await until(() => received.length === 1);
    mock.emit("SignatureHit", { signature: "s1" });
    await until(() => received.length === 2);
    expect(received.map((e) => e.seq)).toEqual([1, 2]);
    expect(stream.lastEventId).toBe(2);
    stream.stop();
    mock.dropConnection();
    await run;
  });

  it("ignores keepalive comments", async () => {
    const mock = new MockControlApi();
    const { stream, received } = collectStream(mock);
    const run = stream.run();
    mock.keepalive();
    mock.emit("StatsTick", {});
    await until(() => received.length === 1);
    expect(received[0].kind).toBe("StatsTick");
    stream.stop();
    mock.dropConnection();
    await run;
  });

  it("resumes after a drop with no gaps and no repeats", async () => {
    const mock = new MockControlApi();
    mock.emit("DeviceConnected", device({ id: "p1.1" }));
    const { stream, received } = collectStream(mock);
    const run = stream.run();
    await until(() => received.length === 1);

    mock.dropConnection();
    // events emitted while the dashboard is offline
    mock.emit("DeviceConnected", device({ id: "p1.2", device_id: 2 }));
    mock.emit("DeviceDisabled", device({ id: "p1.2", device_id: 2, disabled_reason: "x" }));

    await until(() => received.length === 3);
    const seqs = received.map((e) => e.seq);
    expect(seqs).toEqual([1, 2, 3]); // gap-free, in order
    stream.stop();
    mock.dropConnection();
    await run;
  });

  it("backs off exponentially while the server is down", async () => {
    const sleeps: number[] = [];
    const failing = async () => {
      throw new Error("refused");
    };
    let stopped: (() => void) | null = null;
    const stream = new EventStream(
      "/v1/events",
      { onEvent: () => undefined },
      failing as any,
      (ms) => {
        sleeps.push(ms);
        if (sleeps.length === 5 && stopped) stopped();
        return Promise.resolve();
      },
    );
    const done = new Promise<void>((resolve) => {
      stopped = () => {
        stream.stop();
        resolve();
      };
    });
    const run = stream.run();
    await done;
    await run;
    expect(sleeps.slice(0, 5)).toEqual([250, 500, 1000, 2000, 4000]);
  });
});
