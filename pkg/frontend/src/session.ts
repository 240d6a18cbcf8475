// Client-side session view: the single source of truth the DOM renders from.
//
// All state flows one way, from the server stream into this view; user
// actions are fire-and-acknowledge and only ever change the view through the
// acknowledgment or the next descriptor fetch. The countdown is computed
// from the last block onset plus its duration, re-synced on every event, so
// no per-tick polling is needed.

import type {
  Action,
  EndEvent,
  MarkerEvent,
  Phase,
  SessionDescriptor,
} from "./types.js";

export const LEGAL_ACTIONS: Record<Phase, Action[]> = {
  pending: ["abort"],
  running: ["pause", "abort", "manual_marker"],
  paused: ["resume", "abort", "manual_marker"],
  completed: [],
  aborted: [],
};

export function allowedActions(phase: Phase): Action[] {
  return LEGAL_ACTIONS[phase] ?? [];
}

export interface BlockAnchor {
  label: string;
  index: number;
  durationMs: number;
  onsetAtClient: number; // client clock (ms epoch) when the onset arrived
}

export class SessionView {
  descriptor: SessionDescriptor | null = null;
  events: MarkerEvent[] = [];
  phase: Phase = "pending";
  outcome: string | null = null;
  connection: "connecting" | "live" | "reconnecting" | "ended" | "failed" = "connecting";
  anchor: BlockAnchor | null = null;
  private frozenRemainingMs: number | null = null;

  applyHello(descriptor: SessionDescriptor): void {
    this.descriptor = descriptor;
    this.phase = descriptor.phase;
    this.outcome = descriptor.outcome;
  }

  /** Append a marker; duplicates from replay overlap are dropped by seq. */
  applyMarker(event: MarkerEvent, nowClient: number): void {
    if (this.events.some((existing) => existing.seq === event.seq)) return;
    this.events.push(event);
    this.events.sort((a, b) => a.seq - b.seq);
    if (event.origin === "protocol" && event.block_index !== (this.anchor?.index ?? -1)) {
      // first event of a new block is its onset: re-anchor the countdown
      this.anchor = {
        label: event.label,
        index: event.block_index,
        durationMs: event.block_duration_ms,
        onsetAtClient: nowClient,
      };
      if (this.phase === "pending") this.phase = "running";
    }
  }

  applyEnd(event: EndEvent): void {
    this.phase = event.outcome;
    this.outcome = event.outcome;
    this.frozenRemainingMs = null;
  }

  setPhase(phase: Phase, nowClient: number): void {
    if (phase === this.phase) return;
    if (phase === "paused") {
      this.frozenRemainingMs = this.remainingMs(nowClient);
    } else if (this.phase === "paused" && phase === "running" && this.anchor) {
      // re-anchor so the frozen remainder resumes from now
      const remaining = this.frozenRemainingMs ?? 0;
      this.anchor = {
        ...this.anchor,
        onsetAtClient: nowClient - (this.anchor.durationMs - remaining),
      };
      this.frozenRemainingMs = null;
    }
    this.phase = phase;
  }

  remainingMs(nowClient: number): number {
    if (this.frozenRemainingMs !== null) return this.frozenRemainingMs;
    if (!this.anchor) return 0;
    return Math.max(0, this.anchor.durationMs - (nowClient - this.anchor.onsetAtClient));
  }

  currentBlockLabel(): string {
    return this.anchor?.label ?? "—";
  }

  canIssue(action: Action): boolean {
    return allowedActions(this.phase).includes(action);
  }

  isTerminal(): boolean {
    return this.phase === "completed" || this.phase === "aborted";
  }
}
