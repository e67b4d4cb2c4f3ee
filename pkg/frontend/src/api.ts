// Thin fetch wrappers: every mutating dashboard action is one of these.

import type { DeviceInfo, Disposition, PendingDecision, StatsSnapshot } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

export class ControlApi {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.base + path);
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail =
        typeof payload === "object" && payload !== null && "error" in payload
          ? String((payload as { error: unknown }).error)
          : resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  devices(): Promise<DeviceInfo[]> {
    return this.getJson("/v1/devices");
  }

  pending(): Promise<PendingDecision[]> {
    return this.getJson("/v1/pending");
  }

  stats(): Promise<StatsSnapshot> {
    return this.getJson("/v1/stats");
  }

  resolve(decisionId: string, dispositions: Record<string, Disposition>): Promise<PendingDecision> {
    return this.postJson(`/v1/pending/${decisionId}`, { dispositions });
  }

  uploadSignature(signature: unknown): Promise<{ id: string }> {
    return this.postJson("/v1/signatures", signature);
  }
}
