// Server-sent-events consumption with lossless resume.
//
// Built over fetch + ReadableStream rather than EventSource so the same code
// runs in the browser and under node tests, and so reconnects can carry the
// last-seen sequence number in the query string. The server replays every
// marker after ?since=SEQ, which makes the event list immune to refreshes
// and dropped connections.

import type { EndEvent, MarkerEvent, SessionDescriptor } from "./types.js";

export interface SseFrame {
  event: string;
  id?: string;
  data: string;
}

/** Incremental parser for the text/event-stream wire format. */
export class SseParser {
  private buffer = "";
  private current: Partial<SseFrame> & { dataLines: string[] } = { dataLines: [] };

  feed(chunk: string): SseFrame[] {
    this.buffer += chunk;
    const frames: SseFrame[] = [];
    let index: number;
    while ((index = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, index).replace(/\r$/, "");
      this.buffer = this.buffer.slice(index + 1);
      if (line.startsWith(":")) continue; // keep-alive comment
      if (line === "") {
        if (this.current.event || this.current.dataLines.length) {
          frames.push({
            event: this.current.event ?? "message",
            id: this.current.id,
            data: this.current.dataLines.join("\n"),
          });
        }
        this.current = { dataLines: [] };
        continue;
      }
      const colon = line.indexOf(":");
      const field = colon < 0 ? line : line.slice(0, colon);
      const value = colon < 0 ? "" : line.slice(colon + 1).replace(/^ /, "");
      if (field === "event") this.current.event = value;
      else if (field === "id") this.current.id = value;
      else if (field === "data") this.current.dataLines.push(value);
    }
    return frames;
  }
}

export type StreamStatus = "connecting" | "live" | "reconnecting" | "ended" | "failed";

export interface StreamCallbacks {
  onHello?(descriptor: SessionDescriptor): void;
  onMarker(event: MarkerEvent): void;
  onEnd(event: EndEvent): void;
  onStatus?(status: StreamStatus): void;
}

export interface EventStreamOptions {
  fetchImpl?: (url: string, init?: RequestInit) => Promise<Response>;
  retryDelayMs?: number;
  maxRetries?: number;
}

export class EventStream {
  lastSeq = -1;
  private stopped = false;
  private controller: AbortController | null = null;
  private readonly fetchImpl: (url: string, init?: RequestInit) => Promise<Response>;
  private readonly retryDelayMs: number;
  private readonly maxRetries: number;

  constructor(
    private readonly baseUrl: string,
    private readonly sessionId: string,
    private readonly callbacks: StreamCallbacks,
    options: EventStreamOptions = {},
  ) {
    this.fetchImpl = options.fetchImpl ?? ((...args) => fetch(...args));
    this.retryDelayMs = options.retryDelayMs ?? 500;
    this.maxRetries = options.maxRetries ?? 20;
  }

  /** Runs until the server sends the terminal event or retries run out. */
  async run(): Promise<void> {
    let attempts = 0;
    this.callbacks.onStatus?.("connecting");
    while (!this.stopped) {
      try {
        const done = await this.connectOnce();
        if (done) {
          this.callbacks.onStatus?.("ended");
          return;
        }
      } catch {
        // fall through to retry
      }
      if (this.stopped) return;
      attempts += 1;
      if (attempts > this.maxRetries) {
        this.callbacks.onStatus?.("failed");
        return;
      }
      this.callbacks.onStatus?.("reconnecting");
      await new Promise((resolve) => setTimeout(resolve, this.retryDelayMs));
    }
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  /** Test hook: sever the current connection and let resume logic take over. */
  forceReconnect(): void {
    this.controller?.abort();
  }

  private async connectOnce(): Promise<boolean> {
    this.controller = new AbortController();
    const url = `${this.baseUrl}/v1/sessions/${this.sessionId}/events?since=${this.lastSeq}`;
    const response = await this.fetchImpl(url, { signal: this.controller.signal });
    if (!response.ok || !response.body) throw new Error(`stream ${response.status}`);
    this.callbacks.onStatus?.("live");
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    while (true) {
      const { done, value } = await reader.read();
      if (done) return false; // closed without the end event: reconnect
      for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
        if (this.dispatch(frame)) return true;
      }
    }
  }

  private dispatch(frame: SseFrame): boolean {
    if (frame.event === "hello") {
      this.callbacks.onHello?.(JSON.parse(frame.data) as SessionDescriptor);
      return false;
    }
    if (frame.event === "marker") {
      const event = JSON.parse(frame.data) as MarkerEvent;
      if (event.seq > this.lastSeq) {
        this.lastSeq = event.seq;
        this.callbacks.onMarker(event);
      }
      return false;
    }
    if (frame.event === "end") {
      this.callbacks.onEnd(JSON.parse(frame.data) as EndEvent);
      return true;
    }
    return false;
  }
}
