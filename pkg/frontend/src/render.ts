/** DOM renderers: each replaces a container's content from state, so the
 * document is always a projection of the current ChatViewState. */

import type { ChatMessage, ChatViewState, Recommendation } from "./types";
import { renderSubgraph } from "./subgraph";

export function renderMessages(
  container: HTMLElement,
  messages: ChatMessage[],
): void {
  container.textContent = "";
  for (const message of messages) {
    const bubble = document.createElement("div");
    bubble.className = `msg msg-${message.sender}`;
    bubble.dataset.status = message.status;

    const text = document.createElement("span");
    text.className = "msg-text";
    text.textContent = message.text;
    bubble.appendChild(text);

    if (message.status === "failed") {
      const retry = document.createElement("button");
      retry.type = "button";
      retry.className = "retry-btn";
      retry.textContent = "retry";
      bubble.appendChild(retry);
    }
    container.appendChild(bubble);
  }
}

export function renderRecommendations(
  container: HTMLElement,
  recommendations: Recommendation[],
): void {
  container.textContent = "";
  if (recommendations.length === 0) {
    const empty = document.createElement("div");
    empty.className = "recs-empty";
    empty.textContent = "no recommendations yet";
    container.appendChild(empty);
    return;
  }
  const list = document.createElement("ol");
  list.className = "recs-list";
  for (const rec of recommendations) {
    const row = document.createElement("li");
    row.className = "rec-row";
    row.dataset.itemId = rec.item_id;
    row.dataset.score = String(rec.score);

    const name = document.createElement("span");
    name.className = "rec-name";
    name.textContent = rec.name;

    const score = document.createElement("span");
    score.className = "rec-score";
    score.textContent = rec.score.toFixed(3);

    row.append(name, score);
    list.appendChild(row);
  }
  container.appendChild(list);
}

export interface ViewElements {
  messages: HTMLElement;
  recommendations: HTMLElement;
  subgraph: HTMLElement;
  footer: HTMLElement;
  sendButton: HTMLButtonElement;
  retrySession?: HTMLElement;
}

/** Project the full state into the page. */
export function renderView(view: ViewElements, state: ChatViewState): void {
  renderMessages(view.messages, state.messages);
  renderRecommendations(view.recommendations, state.recommendations);
  renderSubgraph(view.subgraph, state.subgraph);
  view.footer.textContent = state.sessionId
    ? `session ${state.sessionId}`
    : state.sessionError
      ? "session failed"
      : "connecting…";
  view.sendButton.disabled = state.pending || state.sessionId === null;
  if (view.retrySession) {
    view.retrySession.hidden = !state.sessionError;
  }
}
