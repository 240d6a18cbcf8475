// Thin JSON client for the /v1 control plane.

import type {
  Action,
  ControlAck,
  ProtocolEntry,
  SessionDescriptor,
  Strategy,
  TimingReportPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<never> {
  let message = `${response.status}`;
  try {
    const body = (await response.json()) as { error?: string; reason?: string };
    message = body.error ?? body.reason ?? message;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, message);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  listProtocols(): Promise<ProtocolEntry[]> {
    return this.get("/v1/protocols");
  }

  createSession(body: {
    protocol: string;
    strategy?: Strategy;
    sinks?: string[];
    fake_clock?: boolean;
    tol_ms?: number;
  }): Promise<SessionDescriptor> {
    return this.post("/v1/sessions", body);
  }

  getSession(id: string): Promise<SessionDescriptor> {
    return this.get(`/v1/sessions/${id}`);
  }

  async control(id: string, action: Action, code?: number): Promise<ControlAck> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/sessions/${id}/control`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(code === undefined ? { action } : { action, code }),
    });
    // a rejected transition is a 409 that still carries the acknowledgment
    if (response.status === 409 || response.ok) {
      return (await response.json()) as ControlAck;
    }
    return parseError(response);
  }

  getReport(id: string): Promise<TimingReportPayload> {
    return this.get(`/v1/sessions/${id}/report`);
  }
}
