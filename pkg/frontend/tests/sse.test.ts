import { describe, expect, it } from "vitest";

import { SseClient } from "../src/sse.js";
import type { EventSourceLike } from "../src/sse.js";

class FakeEventSource implements EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  closed = false;

  constructor(public url: string) {}

  close(): void {
    this.closed = true;
  }

  emitOpen(): void {
    this.onopen?.({});
  }

  emitMessage(data: unknown): void {
    this.onmessage?.({ data: JSON.stringify(data) });
  }

  emitError(): void {
    this.onerror?.({});
  }
}

function harness() {
  const sources: FakeEventSource[] = [];
  const timers: { fn: () => void; ms: number }[] = [];
  const events: unknown[] = [];
  const gaps: number[] = [];
  const statuses: boolean[] = [];
  const client = new SseClient<unknown>(
    "/sessions/s1/stream",
    (ev) => events.push(ev),
    {
      factory: (url) => {
        const src = new FakeEventSource(url);
        sources.push(src);
        return src;
      },
      onGap: () => gaps.push(1),
      onStatus: (up) => statuses.push(up),
      setTimeoutImpl: (fn, ms) => {
        timers.push({ fn, ms });
        return timers.length;
      },
    },
  );
  return { client, sources, timers, events, gaps, statuses };
}

describe("SseClient", () => {
  it("delivers parsed events and connection status", () => {
    const h = harness();
    h.client.connect();
    expect(h.sources).toHaveLength(1);
    h.sources[0].emitOpen();
    h.sources[0].emitMessage({ frame_index: 0, r: 0.2 });
    expect(h.statuses).toEqual([true]);
    expect(h.events).toEqual([{ frame_index: 0, r: 0.2 }]);
  });

  it("reconnects with exponential backoff after errors", () => {
    const h = harness();
    h.client.connect();
    h.sources[0].emitError();
    expect(h.statuses).toEqual([false]);
    expect(h.timers.map((t) => t.ms)).toEqual([500]);
    h.timers[0].fn();
    expect(h.sources).toHaveLength(2);
    h.sources[1].emitError();
    h.timers[1].fn();
    h.sources[2].emitError();
    expect(h.timers.map((t) => t.ms)).toEqual([500, 1000, 2000]);
  });

  it("caps the backoff delay", () => {
    const h = harness();
    h.client.connect();
    for (let i = 0; i < 8; i += 1) {
      h.sources[h.sources.length - 1].emitError();
      h.timers[h.timers.length - 1].fn();
    }
    const delays = h.timers.map((t) => t.ms);
    expect(delays[delays.length - 1]).toBe(8000);
  });

  it("signals a gap only when reconnecting after a successful connection", () => {
    const h = harness();
    h.client.connect();
    h.sources[0].emitError(); // never connected: no gap
    expect(h.gaps).toHaveLength(0);
    h.timers[0].fn();
    h.sources[1].emitOpen();
    expect(h.gaps).toHaveLength(0);
    h.sources[1].emitError();
    h.timers[1].fn();
    h.sources[2].emitOpen();
    expect(h.gaps).toHaveLength(1);
  });

  it("resets the backoff after a successful connection", () => {
    const h = harness();
    h.client.connect();
    h.sources[0].emitError();
    h.timers[0].fn();
    h.sources[1].emitError();
    h.timers[1].fn();
    h.sources[2].emitOpen();
    h.sources[2].emitError();
    expect(h.timers[2].ms).toBe(500);
  });

  it("stops reconnecting once closed", () => {
    const h = harness();
    h.client.connect();
    h.sources[0].emitOpen();
    h.client.close();
    expect(h.sources[0].closed).toBe(true);
    h.sources[0].emitError();
    expect(h.timers).toHaveLength(0);
  });

  it("ignores unparseable payloads", () => {
    const h = harness();
    h.client.connect();
    h.sources[0].onmessage?.({ data: "not json" });
    h.sources[0].emitMessage({ frame_index: 1 });
    expect(h.events).toEqual([{ frame_index: 1 }]);
  });
});
