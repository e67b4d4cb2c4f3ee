// Fixture payloads mirroring the control API's JSON.

import type { DeviceInfo, PendingDecision, StatsSnapshot } from "../src/types.js";

export function device(overrides: Partial<DeviceInfo> = {}): DeviceInfo {
  return {
    id: "p1.1",
    conn: "p1",
    device_id: 1,
    state: "Configured",
    address: 5,
    id_vendor: "1d6b",
    id_product: "0101",
    classes: ["03:01:01"],
    class_names: ["HID"],
    auth: null,
    chain: "main",
    disabled_reason: null,
    ...overrides,
  };
}

export function phoneDecision(overrides: Partial<PendingDecision> = {}): PendingDecision {
  return {
    decision_id: "d1",
    device_id: 3,
    functions: [
      {
        function_id: "fn0",
        interfaces: [0],
        class: [8, 6, 80],
        label: "mass storage",
        proposed: "deny-pending",
        resolution: null,
      },
      {
        function_id: "fn1",
        interfaces: [1],
        class: [3, 1, 1],
        label: "HID",
        proposed: "deny-pending",
        resolution: null,
      },
    ],
    created_at: 1000,
    state: "Pending",
    ...overrides,
  };
}

export function stats(overrides: Partial<StatsSnapshot> = {}): StatsSnapshot {
  return {
    frames_total: 42,
    verdict_totals: { Allow: 40, Rewrite: 0, Drop: 1, DisableDevice: 1, Redirect: 0 },
    chains: {
      main: [
        { policy: "log", hits: 42, verdicts: { Allow: 42 } },
        { policy: "signature", hits: 42, verdicts: { Allow: 41, DisableDevice: 1 } },
      ],
    },
    devices: 1,
    devices_disabled: 0,
    ...overrides,
  };
}
