/** Pure state transitions. Every function returns a fresh state object and
 * never mutates its inputs, so the view is replayable from an event log. */

import type {
  ChatViewState,
  Recommendation,
  SubgraphEdge,
  TurnResponse,
} from "./types";

export function initialState(): ChatViewState {
  return {
    sessionId: null,
    sessionError: false,
    messages: [],
    recommendations: [],
    subgraph: [],
    pending: false,
  };
}

export function sessionStarted(
  state: ChatViewState,
  sessionId: string,
): ChatViewState {
  return { ...state, sessionId, sessionError: false };
}

export function sessionFailed(state: ChatViewState): ChatViewState {
  return { ...state, sessionId: null, sessionError: true };
}

/** Preconditions of send_message: non-empty text, session up, nothing in flight. */
export function canSubmit(state: ChatViewState, text: string): boolean {
  return (
    state.sessionId !== null && !state.pending && text.trim().length > 0
  );
}

/** Optimistic user bubble; the request it mirrors is now in flight. */
export function submitMessage(
  state: ChatViewState,
  text: string,
): ChatViewState {
  if (!canSubmit(state, text)) {
    throw new Error("submit blocked: pending request, empty text, or no session");
  }
  return {
    ...state,
    messages: [
      ...state.messages,
      { sender: "user", text: text.trim(), status: "pending" },
    ],
    pending: true,
  };
}

function byScoreDesc(a: Recommendation, b: Recommendation): number {
  return b.score - a.score;
}

function byProbDesc(a: SubgraphEdge, b: SubgraphEdge): number {
  return b.p_connect - a.p_connect;
}

/** Server answered: recommender bubble plus panel swap. Payload values are
 * copied verbatim; only the ordering is normalized. */
export function applyResponse(
  state: ChatViewState,
  response: TurnResponse,
): ChatViewState {
  const messages = state.messages.map((m, i) =>
    i === state.messages.length - 1 && m.status === "pending"
      ? { ...m, status: "sent" as const }
      : m,
  );
  messages.push({
    sender: "recommender",
    text: response.response_text,
    status: "sent",
  });
  return {
    ...state,
    messages,
    recommendations: [...response.recommendations].sort(byScoreDesc),
    subgraph: [...response.subgraph].sort(byProbDesc),
    pending: false,
  };
}

/** Network failure: the optimistic bubble stays, marked failed and retryable. */
export function applyFailure(state: ChatViewState): ChatViewState {
  const messages = state.messages.map((m, i) =>
    i === state.messages.length - 1 && m.status === "pending"
      ? { ...m, status: "failed" as const }
      : m,
  );
  return { ...state, messages, pending: false };
}

/** Pull the last failed message out of the transcript for resubmission.
 * Returns null when there is nothing to retry. */
export function takeFailedMessage(
  state: ChatViewState,
): { state: ChatViewState; text: string } | null {
  const index = state.messages.findIndex((m) => m.status === "failed");
  if (index < 0) {
    return null;
  }
  return {
    state: {
      ...state,
      messages: state.messages.filter((_, i) => i !== index),
    },
    text: state.messages[index].text,
  };
}

export type ChatEvent =
  | { kind: "session"; sessionId: string }
  | { kind: "session_error" }
  | { kind: "submit"; text: string }
  | { kind: "response"; payload: TurnResponse }
  | { kind: "failure" };

/** Fold an event log into a view state; the replayability invariant in
 * executable form. */
export function replay(events: ChatEvent[]): ChatViewState {
  let state = initialState();
  for (const event of events) {
    switch (event.kind) {
      case "session":
        state = sessionStarted(state, event.sessionId);
        break;
      case "session_error":
        state = sessionFailed(state);
        break;
      case "submit":
        state = submitMessage(state, event.text);
        break;
      case "response":
        state = applyResponse(state, event.payload);
        break;
      case "failure":
        state = applyFailure(state);
        break;
    }
  }
  return state;
}
