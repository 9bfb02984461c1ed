/** Server-sent-events subscription with reconnect backoff.
 *
 * The EventSource constructor is injectable so tests can drive the stream
 * with a scripted source. On connection loss the client retries with
 * exponential backoff and reports the gap so the trace can mark it.
 */

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface SseOptions {
  factory?: EventSourceFactory;
  /** Initial retry delay; doubles up to maxBackoffMs. */
  backoffMs?: number;
  maxBackoffMs?: number;
  onGap?: () => void;
  onStatus?: (connected: boolean) => void;
  setTimeoutImpl?: (fn: () => void, ms: number) => unknown;
}

const defaultFactory: EventSourceFactory = (url) =>
  new EventSource(url) as unknown as EventSourceLike;

export class SseClient<T> {
  private source: EventSourceLike | null = null;
  private delay: number;
  private closed = false;
  private everConnected = false;

  constructor(
    private readonly url: string,
    private readonly onEvent: (event: T) => void,
    private readonly opts: SseOptions = {},
  ) {
    this.delay = opts.backoffMs ?? 500;
  }

  connect(): void {
    if (this.closed) return;
    const factory = this.opts.factory ?? defaultFactory;
    const source = factory(this.url);
    this.source = source;
    source.onopen = () => {
      this.delay = this.opts.backoffMs ?? 500;
      if (this.everConnected) this.opts.onGap?.();
      this.everConnected = true;
      this.opts.onStatus?.(true);
    };
    source.onmessage = (ev) => {
      let parsed: T;
      try {
        parsed = JSON.parse(ev.data) as T;
      } catch {
        return; // keepalive or malformed payload
      }
      this.onEvent(parsed);
    };
    source.onerror = () => {
      source.close();
      if (this.source !== source || this.closed) return;
      this.source = null;
      this.opts.onStatus?.(false);
      const wait = this.delay;
      this.delay = Math.min(this.delay * 2, this.opts.maxBackoffMs ?? 8000);
      (this.opts.setTimeoutImpl ?? setTimeout)(() => this.connect(), wait);
    };
  }

  close(): void {
    this.closed = true;
    this.source?.close();
    this.source = null;
  }
}
