// Mirrors of the control API's JSON payloads.

export interface DeviceInfo {
  id: string;
  conn: string;
  device_id: number;
  state: string;
  address: number;
  id_vendor: string | null;
  id_product: string | null;
  classes: string[];
  class_names: string[];
  auth: string | null;
  chain: string | null;
  disabled_reason: string | null;
}

export interface PendingFunction {
  function_id: string;
  interfaces: number[];
  class: number[];
  label: string;
  proposed: string;
  resolution: string | null;
}

export interface PendingDecision {
  decision_id: string;
  device_id: number;
  functions: PendingFunction[];
  created_at: number;
  state: "Pending" | "Resolved";
}

export interface PolicyCounters {
  policy: string;
  hits: number;
  verdicts: Record<string, number>;
}

export interface StatsSnapshot {
  frames_total: number;
  verdict_totals: Record<string, number>;
  chains: Record<string, PolicyCounters[]>;
  devices: number;
  devices_disabled: number;
}

export interface EventMessage {
  seq: number;
  kind: string;
  body: Record<string, unknown>;
}

export type Disposition = "allow" | "deny" | `redirect:${string}`;
