// Server-sent-events client over fetch streaming, with Last-Event-ID resume
// and exponential backoff.  Written against an injectable fetch so the
// reconnect and resume logic is unit-testable without a browser.

import type { EventMessage } from "./types.js";
import type { FetchLike } from "./api.js";

export interface StreamHandlers {
  onEvent: (event: EventMessage) => void;
  onStatus?: (connected: boolean) => void;
}

export class EventStream {
  lastEventId = 0;
  backoffMs = 250;
  maxBackoffMs = 10_000;
  private stopped = false;

  constructor(
    private url: string,
    private handlers: StreamHandlers,
    private fetchFn: FetchLike = (u, init) => fetch(u, init),
    private sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
  ) {}

  stop(): void {
    this.stopped = true;
  }

  async run(): Promise<void> {
    let backoff = this.backoffMs;
    while (!this.stopped) {
      try {
        const sep = this.url.includes("?") ? "&" : "?";
        const resp = await this.fetchFn(`${this.url}${sep}last_event_id=${this.lastEventId}`, {
          headers: { "Last-Event-ID": String(this.lastEventId) },
        });
        if (!resp.ok || !resp.body) throw new Error(`stream status ${resp.status}`);
        this.handlers.onStatus?.(true);
        backoff = this.backoffMs; // healthy connection resets the backoff
        await this.consume(resp.body);
      } catch {
        // fall through to reconnect
      }
      this.handlers.onStatus?.(false);
      if (this.stopped) return;
      await this.sleep(backoff);
      backoff = Math.min(backoff * 2, this.maxBackoffMs);
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    while (!this.stopped) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let cut: number;
      while ((cut = buffer.indexOf("\n\n")) >= 0) {
        this.dispatch(buffer.slice(0, cut));
        buffer = buffer.slice(cut + 2);
      }
    }
  }

  private dispatch(block: string): void {
    let id = 0;
    let kind = "";
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith(":")) continue; // keepalive comment
      if (line.startsWith("id: ")) id = Number(line.slice(4));
      else if (line.startsWith("event: ")) kind = line.slice(7);
      else if (line.startsWith("data: ")) data = line.slice(6);
    }
    if (!kind || !data) return;
    let body: Record<string, unknown>;
    try {
      body = JSON.parse(data) as Record<string, unknown>;
    } catch {
      return;
    }
    if (id > 0) this.lastEventId = id;
    this.handlers.onEvent({ seq: id, kind, body });
  }
}
