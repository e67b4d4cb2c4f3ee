// DOM layer: renders the view model and wires form submissions.  All state
// changes arrive through the store; nothing here talks to the API except
// the handlers passed in from main.

import type { State } from "./state.js";
import { deviceRows, pendingCards } from "./state.js";
import type { Disposition, PendingDecision } from "./types.js";

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderStatus(target: HTMLElement, state: State): void {
  target.textContent = state.connected ? "live" : "reconnecting…";
  target.className = state.connected ? "status live" : "status down";
}

export function renderDevices(target: HTMLElement, state: State): void {
  target.replaceChildren();
  const rows = deviceRows(state);
  if (!rows.length) {
    target.appendChild(el("p", "empty", "No devices connected."));
    return;
  }
  const table = el("table") as HTMLTableElement;
  const head = table.createTHead().insertRow();
  for (const title of ["id", "vid:pid", "function classes", "state", "auth", "chain", "disabled reason"]) {
    head.appendChild(el("th", undefined, title));
  }
  const body = table.createTBody();
  for (const device of rows) {
    const row = body.insertRow();
    row.className = device.disabled_reason ? "disabled" : "";
    row.insertCell().textContent = device.id;
    row.insertCell().textContent = `${device.id_vendor ?? "?"}:${device.id_product ?? "?"}`;
    row.insertCell().textContent = (device.class_names ?? device.classes).join(", ");
    row.insertCell().textContent = device.state;
    row.insertCell().textContent = device.auth ?? "plaintext";
    row.insertCell().textContent = device.chain ?? "";
    row.insertCell().textContent = device.disabled_reason ?? "";
  }
  target.appendChild(table);
}

export type ResolveHandler = (
  decisionId: string,
  dispositions: Record<string, Disposition>,
) => Promise<void>;

export function renderPending(target: HTMLElement, state: State, onResolve: ResolveHandler): void {
  target.replaceChildren();
  const cards = pendingCards(state);
  if (!cards.length) {
    target.appendChild(el("p", "empty", "No pending decisions."));
    return;
  }
  for (const decision of cards) {
    target.appendChild(buildCard(decision, onResolve));
  }
}

function buildCard(decision: PendingDecision, onResolve: ResolveHandler): HTMLElement {
  const resolved = decision.state === "Resolved";
  const card = el("div", resolved ? "card resolved" : "card pending");
  card.appendChild(
    el("h3", undefined, `Device ${decision.device_id} / decision ${decision.decision_id}`),
  );
  const selects: Record<string, () => Disposition> = {};
  for (const fn of decision.functions) {
    const row = el("div", "function");
    row.appendChild(el("span", "label", `${fn.label} (${fn.function_id})`));
    if (resolved) {
      row.appendChild(el("span", "resolution", fn.resolution ?? "deny"));
    } else {
      const select = document.createElement("select");
      for (const option of ["allow", "deny", "redirect"]) {
        const opt = document.createElement("option");
        opt.value = option;
        opt.textContent = option;
        select.appendChild(opt);
      }
      const sinkInput = document.createElement("input");
      sinkInput.placeholder = "sink name";
      sinkInput.className = "sink hidden";
      select.addEventListener("change", () => {
        sinkInput.classList.toggle("hidden", select.value !== "redirect");
      });
      row.appendChild(select);
      row.appendChild(sinkInput);
      selects[fn.function_id] = () =>
        select.value === "redirect"
          ? (`redirect:${sinkInput.value || "sandbox"}` as Disposition)
          : (select.value as Disposition);
    }
    card.appendChild(row);
  }
  if (!resolved) {
    const button = el("button", undefined, "Resolve") as HTMLButtonElement;
    button.addEventListener("click", async () => {
      button.disabled = true;
      const dispositions = Object.fromEntries(
        Object.entries(selects).map(([fid, read]) => [fid, read()]),
      );
      try {
        await onResolve(decision.decision_id, dispositions);
      } catch (err) {
        button.disabled = false;
        card.appendChild(el("p", "error", String(err)));
      }
    });
    card.appendChild(button);
  } else {
    card.appendChild(el("p", "note", "resolved"));
  }
  return card;
}

export function renderFeed(target: HTMLElement, state: State): void {
  target.replaceChildren();
  const recent = state.feed.slice(-50).reverse();
  for (const event of recent) {
    const line = el("div", `event ${event.kind}`);
    line.appendChild(el("span", "seq", `#${event.seq}`));
    line.appendChild(el("span", "kind", event.kind));
    line.appendChild(el("span", "body", JSON.stringify(event.body)));
    target.appendChild(line);
  }
}

export function renderStats(target: HTMLElement, state: State): void {
  target.replaceChildren();
  if (!state.stats) {
    target.appendChild(el("p", "empty", "No stats yet."));
    return;
  }
  const totals = state.stats.verdict_totals;
  target.appendChild(
    el(
      "p",
      "totals",
      `frames ${state.stats.frames_total} · allow ${totals.Allow ?? 0} · ` +
        `rewrite ${totals.Rewrite ?? 0} · drop ${totals.Drop ?? 0} · ` +
        `disable ${totals.DisableDevice ?? 0} · signature hits ${state.signatureHits}`,
    ),
  );
  for (const [chain, policies] of Object.entries(state.stats.chains)) {
    const table = el("table") as HTMLTableElement;
    const head = table.createTHead().insertRow();
    for (const title of [`chain: ${chain}`, "hits", "allow", "rewrite", "drop", "disable"]) {
      head.appendChild(el("th", undefined, title));
    }
    const body = table.createTBody();
    for (const policy of policies) {
      const row = body.insertRow();
      row.insertCell().textContent = policy.policy;
      row.insertCell().textContent = String(policy.hits);
      for (const kind of ["Allow", "Rewrite", "Drop", "DisableDevice"]) {
        row.insertCell().textContent = String(policy.verdicts[kind] ?? 0);
      }
    }
    target.appendChild(table);
  }
}

export function toast(target: HTMLElement, message: string, kind: "ok" | "error"): void {
  const note = el("div", `toast ${kind}`, message);
  target.appendChild(note);
  setTimeout(() => note.remove(), 4000);
}
