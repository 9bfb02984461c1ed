/** Thin typed client over the service HTTP endpoints.
 *
 * All mutations flow through here; the fetch implementation is injectable so
 * tests can run against a scripted server.
 */

import type {
  EpisodeInfo,
  ModelsInfo,
  RiskLabel,
  SessionInfo,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...a) => globalThis.fetch(...a),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ApiError(resp.status, body.error ?? `HTTP ${resp.status}`);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  createReplaySession(skill: string, episodeId: string): Promise<SessionInfo> {
    return this.post("/sessions", {
      skill,
      source: { type: "replay", episode_id: episodeId },
    });
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return this.request(`/sessions/${sessionId}`);
  }

  submitLabel(
    sessionId: string,
    frameIndex: number,
    label: RiskLabel,
  ): Promise<SessionInfo> {
    return this.post(`/sessions/${sessionId}/labels`, {
      frame_index: frameIndex,
      label,
    });
  }

  retrain(scope: "gp-only" | "gp+encoder"): Promise<{ version: number }> {
    return this.post("/retrain", { scope });
  }

  models(): Promise<ModelsInfo> {
    return this.request("/models");
  }

  episodes(): Promise<{ episodes: EpisodeInfo[] }> {
    return this.request("/episodes");
  }

  streamUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/stream`;
  }

  frameUrl(episodeId: string, index: number): string {
    return `${this.baseUrl}/episodes/${episodeId}/frames/${index}`;
  }
}
