// Payload shapes of the control service's /v1 endpoints.

export type Phase = "pending" | "running" | "paused" | "aborted" | "completed";
export type Strategy = "naive" | "deadline";
export type Action = "pause" | "resume" | "abort" | "manual_marker";
export type Origin = "protocol" | "manual";

export interface MarkerEvent {
  type: "marker";
  seq: number;
  scheduled_ms: number;
  actual_ms: number;
  marker: number;
  origin: Origin;
  late: boolean;
  label: string;
  block_index: number;
  block_duration_ms: number;
}

export interface EndEvent {
  type: "end";
  outcome: "completed" | "aborted";
  error?: string;
}

export interface SessionDescriptor {
  id: string;
  protocol: string;
  strategy: Strategy;
  tol_ms: number;
  sinks: string[];
  phase: Phase;
  current_block_index: number;
  pause_accumulated_ms: number;
  events_recorded: number;
  outcome: string | null;
  event_count: number;
  total_duration_ms: number;
  block_labels: string[];
  terminal: boolean;
  last_events: MarkerEvent[];
}

export interface ProtocolEntry {
  file: string;
  valid: boolean;
  name?: string;
  blocks?: number;
  event_count?: number;
  total_duration_ms?: number;
  block_labels?: string[];
  problems?: string[];
}

export interface ControlAck {
  accepted: boolean;
  reason: string | null;
  state: {
    phase: Phase;
    current_block_index: number;
    started_at_ms: number | null;
    pause_accumulated_ms: number;
    events_recorded: number;
    outcome: string | null;
  };
}

export interface PerEventRow {
  seq: number;
  expected_ms: number;
  actual_ms: number;
  error_ms: number;
}

export interface TimingReportPayload {
  session: string;
  outcome: "completed" | "aborted";
  failure: string | null;
  verdict: "equivalent" | "divergent";
  detail: string;
  tol_ms: number;
  max_abs_jitter_ms: number;
  mean_abs_jitter_ms: number;
  end_drift_ms: number;
  late_count: number;
  per_event: PerEventRow[];
  curve_expected: [number, number][];
  curve_actual: [number, number][];
}
