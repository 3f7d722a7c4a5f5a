import type { Transcript, TurnResponse } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    detail: string,
  ) {
    super(`API ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

/** Thin client for the chat service; configuration is the base URL. */
export class ChatApi {
  constructor(private baseUrl: string = "") {}

  async health(): Promise<boolean> {
    const res = await fetch(`${this.baseUrl}/health`);
    return res.ok;
  }

  async createSession(): Promise<string> {
    const res = await fetch(`${this.baseUrl}/session`, { method: "POST" });
    const body = await expectJson<{ session_id: string }>(res);
    return body.session_id;
  }

  async transcript(sessionId: string): Promise<Transcript> {
    const res = await fetch(`${this.baseUrl}/session/${sessionId}`);
    return expectJson<Transcript>(res);
  }

  async sendMessage(sessionId: string, text: string): Promise<TurnResponse> {
    const res = await fetch(`${this.baseUrl}/session/${sessionId}/message`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    return expectJson<TurnResponse>(res);
  }
}
