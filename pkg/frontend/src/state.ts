/** Client-side mirror of one session's server state.
 *
 * The store never fabricates state: the phase and pending frame are always
 * whatever the last server event said, and label submissions only update the
 * view once the server acknowledges or streams the resulting transition.
 */

import type { ApiClient } from "./api.js";
import type { Phase, RiskLabel, VerdictEvent } from "./types.js";

export interface TraceSample {
  frameIndex: number;
  r: number;
  flagged: boolean;
  reconUnreliable: boolean;
}

export type Listener = () => void;

export class SessionStore {
  readonly events: VerdictEvent[] = [];
  phase: Phase = "RUNNING";
  pendingFrame: number | null = null;
  /** Frame indices after which the SSE stream reconnected (gap indicator). */
  readonly gaps: number[] = [];
  connected = false;
  private listeners: Listener[] = [];

  constructor(readonly sessionId: string) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  apply(event: VerdictEvent): void {
    this.events.push(event);
    this.phase = event.phase;
    this.pendingFrame =
      event.phase === "PAUSED_AWAITING_LABEL" ? event.frame_index : null;
    this.notify();
  }

  markGap(): void {
    const last = this.events.at(-1);
    this.gaps.push(last ? last.frame_index : -1);
    this.notify();
  }

  setConnected(up: boolean): void {
    if (this.connected !== up) {
      this.connected = up;
      this.notify();
    }
  }

  /** Per-frame risk samples, in arrival order (verdict events only). */
  trace(): TraceSample[] {
    return this.events
      .filter((e) => typeof e.r === "number")
      .map((e) => ({
        frameIndex: e.frame_index,
        r: e.r as number,
        flagged: e.flag === 1,
        reconUnreliable: e.recon_unreliable === true,
      }));
  }

  lastFrameIndex(): number | null {
    const last = this.events.at(-1);
    return last ? last.frame_index : null;
  }
}

/** Serializes label submissions and swallows duplicate clicks.
 *
 * One submission may be in flight per session; once a frame has been
 * acknowledged, further submissions for the same frame are no-ops until a new
 * pause arrives.
 */
export class LabelSubmitter {
  private inflight: Promise<unknown> | null = null;
  private ackedFrame: number | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
  ) {}

  async submit(frameIndex: number, label: RiskLabel): Promise<boolean> {
    if (this.ackedFrame === frameIndex) return false;
    while (this.inflight) await this.inflight.catch(() => undefined);
    if (this.ackedFrame === frameIndex) return false;
    const call = this.api.submitLabel(this.sessionId, frameIndex, label);
    this.inflight = call;
    try {
      await call;
      this.ackedFrame = frameIndex;
      return true;
    } finally {
      this.inflight = null;
    }
  }
}
