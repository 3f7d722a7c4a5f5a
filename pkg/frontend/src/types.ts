/** Wire types, mirroring the HTTP API responses field for field. */

export interface Recommendation {
  item_id: string;
  name: string;
  score: number;
}

export interface SubgraphEdge {
  head: string;
  tail: string;
  p_connect: number;
  /** Thresholded connection bit; true edges render solid, false dashed. */
  connected: boolean;
}

/** Response body of POST /session/{id}/message. */
export interface TurnResponse {
  response_text: string;
  recommendations: Recommendation[];
  subgraph: SubgraphEdge[];
}

/** Response body of GET /session/{id}. */
export interface Transcript {
  session_id: string;
  messages: { speaker: string; text: string; entities: string[] }[];
  recommendations: Recommendation[];
  subgraph: SubgraphEdge[];
}

export type Sender = "user" | "recommender";

export type MessageStatus = "pending" | "sent" | "failed";

export interface ChatMessage {
  sender: Sender;
  text: string;
  status: MessageStatus;
}

/**
 * The whole view is a pure function of this state, which in turn is a pure
 * function of the server-response history plus pending flags.
 */
export interface ChatViewState {
  sessionId: string | null;
  /** True when session creation failed and a retry is offered. */
  sessionError: boolean;
  /** Strictly ordered; index is display order. */
  messages: ChatMessage[];
  /** Latest server response, verbatim. */
  recommendations: Recommendation[];
  /** Latest server response, sorted by p_connect descending. */
  subgraph: SubgraphEdge[];
  /** Single in-flight request per session. */
  pending: boolean;
}
