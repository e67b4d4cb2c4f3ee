// The view model: a pure reducer over control-API payloads.  Everything the
// dashboard shows is derivable from the initial GETs plus the event stream,
// so a reconnect (re-GET, then resume events) always converges.

import type {
  DeviceInfo,
  EventMessage,
  PendingDecision,
  StatsSnapshot,
} from "./types.js";

export const FEED_LIMIT = 1000;

export interface State {
  devices: Map<string, DeviceInfo>;
  pending: Map<string, PendingDecision>;
  feed: EventMessage[]; // newest last, capped at FEED_LIMIT
  stats: StatsSnapshot | null;
  signatureHits: number;
  connected: boolean;
  lastEventSeq: number;
}

export function initialState(): State {
  return {
    devices: new Map(),
    pending: new Map(),
    feed: [],
    stats: null,
    signatureHits: 0,
    connected: false,
    lastEventSeq: 0,
  };
}

export function loadSnapshot(
  state: State,
  devices: DeviceInfo[],
  pending: PendingDecision[],
  stats: StatsSnapshot,
): State {
  const next = { ...state, stats };
  next.devices = new Map(devices.map((d) => [d.id, d]));
  next.pending = new Map(pending.map((p) => [p.decision_id, p]));
  return next;
}

export function applyEvent(state: State, event: EventMessage): State {
  const next: State = {
    ...state,
    devices: new Map(state.devices),
    pending: new Map(state.pending),
    feed: [...state.feed, event].slice(-FEED_LIMIT),
    lastEventSeq: Math.max(state.lastEventSeq, event.seq),
  };
  switch (event.kind) {
    case "DeviceConnected":
    case "DeviceDisabled": {
      const device = event.body as unknown as DeviceInfo;
      if (device.id) next.devices.set(device.id, device);
      break;
    }
    case "PendingDecisionCreated":
    case "DecisionResolved": {
      const decision = event.body as unknown as PendingDecision;
      if (decision.decision_id) next.pending.set(decision.decision_id, decision);
      break;
    }
    case "SignatureHit":
      next.signatureHits += 1;
      break;
    case "StatsTick":
      next.stats = event.body as unknown as StatsSnapshot;
      break;
  }
  return next;
}

export function pendingCards(state: State): PendingDecision[] {
  return [...state.pending.values()].sort((a, b) => a.created_at - b.created_at);
}

export function deviceRows(state: State): DeviceInfo[] {
  return [...state.devices.values()].sort((a, b) => a.id.localeCompare(b.id));
}
