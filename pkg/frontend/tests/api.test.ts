import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("lists protocols", async () => {
    const api = new ApiClient("http://svc", async (url) => {
      expect(url).toBe("http://svc/v1/protocols");
      return jsonResponse(200, [{ file: "demo.proto", valid: true, name: "demo" }]);
    });
    const entries = await api.listProtocols();
    expect(entries[0].name).toBe("demo");
  });

  it("surfaces a session conflict inline rather than as a crash", async () => {
    const api = new ApiClient("", async () =>
      jsonResponse(409, { error: "session 123 is running" }),
    );
    try {
      await api.createSession({ protocol: "demo" });
      throw new Error("should have thrown");
    } catch (error) {
      expect(error).toBeInstanceOf(ApiError);
      expect((error as ApiError).isConflict).toBe(true);
      expect((error as ApiError).message).toContain("is running");
    }
  });

  it("returns rejected control acknowledgments instead of throwing", async () => {
    const api = new ApiClient("", async () =>
      jsonResponse(409, {
        accepted: false,
        reason: "cannot resume while running",
        state: {
          phase: "running",
          current_block_index: 1,
          started_at_ms: 0,
          pause_accumulated_ms: 0,
          events_recorded: 2,
          outcome: null,
        },
      }),
    );
    const ack = await api.control("abc", "resume");
    expect(ack.accepted).toBe(false);
    expect(ack.state.phase).toBe("running");
  });

  it("posts manual marker codes through", async () => {
    const api = new ApiClient("", async (_url, init) => {
      expect(JSON.parse(String(init?.body))).toEqual({ action: "manual_marker", code: 9 });
      return jsonResponse(200, { accepted: true, reason: null, state: { phase: "running" } });
    });
    const ack = await api.control("abc", "manual_marker", 9);
    expect(ack.accepted).toBe(true);
  });
});
