import { ChatApi } from "./api";
import {
  applyFailure,
  applyResponse,
  canSubmit,
  initialState,
  sessionFailed,
  sessionStarted,
  submitMessage,
  takeFailedMessage,
} from "./state";
import { renderView, type ViewElements } from "./render";
import type { ChatViewState } from "./types";

/** Wires the pure state module to the DOM and the HTTP client.
 *
 * All server interaction funnels through sendText(), which rejects while a
 * request is in flight — the single-in-flight rule lives in the state, and
 * the disabled send button merely reflects it.
 */
export class ChatApp {
  state: ChatViewState = initialState();
  private view: ViewElements;
  private input: HTMLInputElement;

  constructor(
    private root: HTMLElement,
    private api: ChatApi,
  ) {
    this.view = this.buildSkeleton();
    this.input = this.root.querySelector<HTMLInputElement>(".chat-input")!;
    this.render();
  }

  private buildSkeleton(): ViewElements {
    this.root.innerHTML = `
      <div class="chat-pane">
        <div class="chat-messages"></div>
        <form class="chat-form">
          <input class="chat-input" type="text" autocomplete="off"
                 placeholder="describe what you feel like watching" />
          <button class="chat-send" type="submit">send</button>
        </form>
        <button class="session-retry" type="button" hidden>reconnect</button>
      </div>
      <aside class="side-pane">
        <h2>recommendations</h2>
        <div class="rec-panel"></div>
        <h2>inferred relations</h2>
        <div class="subgraph-panel"></div>
      </aside>
      <footer class="debug-footer"></footer>
    `;
    const form = this.root.querySelector<HTMLFormElement>(".chat-form")!;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.sendText(this.input.value);
    });
    const retrySession =
      this.root.querySelector<HTMLButtonElement>(".session-retry")!;
    retrySession.addEventListener("click", () => void this.start());
    const messages = this.root.querySelector<HTMLElement>(".chat-messages")!;
    messages.addEventListener("click", (event) => {
      const target = event.target as HTMLElement;
      if (target.classList.contains("retry-btn")) {
        void this.retryFailed();
      }
    });
    return {
      messages,
      recommendations: this.root.querySelector<HTMLElement>(".rec-panel")!,
      subgraph: this.root.querySelector<HTMLElement>(".subgraph-panel")!,
      footer: this.root.querySelector<HTMLElement>(".debug-footer")!,
      sendButton: this.root.querySelector<HTMLButtonElement>(".chat-send")!,
      retrySession,
    };
  }

  private render(): void {
    renderView(this.view, this.state);
  }

  async start(): Promise<void> {
    try {
      const sessionId = await this.api.createSession();
      this.state = sessionStarted(this.state, sessionId);
    } catch {
      this.state = sessionFailed(this.state);
    }
    this.render();
  }

  /** Send one message; blocked while another request is pending. */
  async sendText(text: string): Promise<boolean> {
    if (!canSubmit(this.state, text)) {
      return false;
    }
    this.state = submitMessage(this.state, text);
    this.input.value = "";
    this.render();
    try {
      const response = await this.api.sendMessage(this.state.sessionId!, text.trim());
      this.state = applyResponse(this.state, response);
    } catch {
      this.state = applyFailure(this.state);
    }
    this.render();
    return true;
  }

  /** Resubmit the last failed message through the normal path. */
  async retryFailed(): Promise<boolean> {
    const taken = takeFailedMessage(this.state);
    if (taken === null || this.state.pending) {
      return false;
    }
    this.state = taken.state;
    return this.sendText(taken.text);
  }
}
