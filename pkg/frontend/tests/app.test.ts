import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ChatApi } from "../src/api";
import { ChatApp } from "../src/app";
import type { TurnResponse } from "../src/types";
import turnFixture from "./fixtures/turn.json";

const turn = turnFixture as TurnResponse;

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

type Deferred = {
  promise: Promise<Response>;
  resolve: (r: Response) => void;
  reject: (e: Error) => void;
};

function deferred(): Deferred {
  let resolve!: (r: Response) => void;
  let reject!: (e: Error) => void;
  const promise = new Promise<Response>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

let root: HTMLElement;
let fetchMock: ReturnType<typeof vi.fn>;

beforeEach(() => {
  root = document.createElement("div");
  document.body.replaceChildren(root);
  fetchMock = vi.fn();
  vi.stubGlobal("fetch", fetchMock);
});

afterEach(() => {
  vi.unstubAllGlobals();
});

function messageCalls(): number {
  return fetchMock.mock.calls.filter((c: unknown[]) =>
    String(c[0]).includes("/message"),
  ).length;
}

async function startedApp(): Promise<ChatApp> {
  fetchMock.mockResolvedValueOnce(jsonResponse({ session_id: "fixed123" }));
  const app = new ChatApp(root, new ChatApi(""));
  await app.start();
  return app;
}

describe("session start", () => {
  it("renders the session id in the debug footer", async () => {
    await startedApp();
    expect(root.querySelector(".debug-footer")!.textContent).toBe(
      "session fixed123",
    );
    expect(root.querySelector<HTMLButtonElement>(".session-retry")!.hidden).toBe(
      true,
    );
  });

  it("offers a reconnect affordance on failure, which retries", async () => {
    fetchMock.mockRejectedValueOnce(new Error("refused"));
    const app = new ChatApp(root, new ChatApi(""));
    await app.start();
    const retry = root.querySelector<HTMLButtonElement>(".session-retry")!;
    expect(retry.hidden).toBe(false);
    expect(root.querySelector(".debug-footer")!.textContent).toBe(
      "session failed",
    );

    fetchMock.mockResolvedValueOnce(jsonResponse({ session_id: "second" }));
    retry.click();
    await vi.waitFor(() => {
      expect(root.querySelector(".debug-footer")!.textContent).toBe(
        "session second",
      );
    });
    expect(retry.hidden).toBe(true);
  });
});

describe("message round trip", () => {
  it("optimistic bubble, then reply and panels from the response", async () => {
    const app = await startedApp();
    fetchMock.mockResolvedValueOnce(jsonResponse(turn));
    const accepted = await app.sendText("i want a movie with genre1");
    expect(accepted).toBe(true);

    const bubbles = root.querySelectorAll(".msg");
    expect(bubbles).toHaveLength(2);
    expect(bubbles[0].classList.contains("msg-user")).toBe(true);
    expect((bubbles[0] as HTMLElement).dataset.status).toBe("sent");
    expect(bubbles[1].textContent).toContain(turn.response_text);
    expect(root.querySelectorAll(".rec-row")).toHaveLength(3);
    expect(root.querySelectorAll(".subgraph-edge")).toHaveLength(
      turn.subgraph.length,
    );

    const [url, init] = fetchMock.mock.calls[1] as [string, RequestInit];
    expect(url).toBe("/session/fixed123/message");
    expect(JSON.parse(String(init.body))).toEqual({
      text: "i want a movie with genre1",
    });
  });

  it("clears the input and disables send while in flight", async () => {
    const app = await startedApp();
    const gate = deferred();
    fetchMock.mockReturnValueOnce(gate.promise);

    const input = root.querySelector<HTMLInputElement>(".chat-input")!;
    input.value = "slow question";
    const form = root.querySelector<HTMLFormElement>(".chat-form")!;
    form.dispatchEvent(new Event("submit", { cancelable: true }));
    await Promise.resolve();

    expect(input.value).toBe("");
    expect(root.querySelector<HTMLButtonElement>(".chat-send")!.disabled).toBe(
      true,
    );
    gate.resolve(jsonResponse(turn));
    await vi.waitFor(() => {
      expect(app.state.pending).toBe(false);
    });
    expect(root.querySelector<HTMLButtonElement>(".chat-send")!.disabled).toBe(
      false,
    );
  });

  it("blocks a double submit while the first request is pending", async () => {
    const app = await startedApp();
    const gate = deferred();
    fetchMock.mockReturnValueOnce(gate.promise);

    const first = app.sendText("first");
    const second = await app.sendText("second");
    expect(second).toBe(false);

    // a form submit while pending is also ignored
    const input = root.querySelector<HTMLInputElement>(".chat-input")!;
    input.value = "third";
    const form = root.querySelector<HTMLFormElement>(".chat-form")!;
    form.dispatchEvent(new Event("submit", { cancelable: true }));
    await Promise.resolve();

    expect(messageCalls()).toBe(1);
    expect(root.querySelectorAll(".msg")).toHaveLength(1);

    gate.resolve(jsonResponse(turn));
    expect(await first).toBe(true);
    expect(root.querySelectorAll(".msg")).toHaveLength(2);
  });
});

describe("failure and retry", () => {
  it("marks the bubble failed on network error and resends via retry", async () => {
    const app = await startedApp();
    fetchMock.mockRejectedValueOnce(new Error("network down"));
    await app.sendText("flaky message");

    const failed = root.querySelector<HTMLElement>('.msg[data-status="failed"]');
    expect(failed).not.toBeNull();
    expect(failed!.textContent).toContain("flaky message");

    fetchMock.mockResolvedValueOnce(jsonResponse(turn));
    failed!.querySelector<HTMLButtonElement>(".retry-btn")!.dispatchEvent(
      new Event("click", { bubbles: true }),
    );
    await vi.waitFor(() => {
      expect(root.querySelectorAll(".msg")).toHaveLength(2);
    });

    expect(messageCalls()).toBe(2);
    const bubbles = root.querySelectorAll<HTMLElement>(".msg");
    expect(bubbles[0].dataset.status).toBe("sent");
    expect(bubbles[0].textContent).toContain("flaky message");
    expect(bubbles[1].classList.contains("msg-recommender")).toBe(true);
  });

  it("a server error status also marks the message failed", async () => {
    const app = await startedApp();
    fetchMock.mockResolvedValueOnce(
      jsonResponse({ detail: "unknown session" }, 404),
    );
    await app.sendText("ghost");
    expect(
      root.querySelector('.msg[data-status="failed"]'),
    ).not.toBeNull();
    expect(app.state.pending).toBe(false);
  });
});
