/** List-mode rendering of the inferred subgraph. Edge lists stay legible and
 * assertable at any size; a force layout would only be cosmetic. */

import type { SubgraphEdge } from "./types";

/** Replace `container`'s content with one row per edge.
 *
 * Style contract: connected=true edges draw a solid connector line,
 * connected=false a dashed one; probabilities are shown to 2 decimals with
 * the raw payload value preserved in a data attribute.
 */
export function renderSubgraph(
  container: HTMLElement,
  edges: SubgraphEdge[],
): void {
  container.textContent = "";
  if (edges.length === 0) {
    const empty = document.createElement("div");
    empty.className = "subgraph-empty";
    empty.textContent = "no inferred relations";
    container.appendChild(empty);
    return;
  }

  const list = document.createElement("ul");
  list.className = "subgraph-list";
  for (const edge of edges) {
    const row = document.createElement("li");
    row.className = "subgraph-edge";

    const head = document.createElement("span");
    head.className = "edge-entity";
    head.textContent = edge.head;

    const line = document.createElement("span");
    line.className = edge.connected ? "edge-line edge-solid" : "edge-line edge-dashed";
    line.style.borderTopStyle = edge.connected ? "solid" : "dashed";

    const tail = document.createElement("span");
    tail.className = "edge-entity";
    tail.textContent = edge.tail;

    const prob = document.createElement("span");
    prob.className = "edge-prob";
    prob.textContent = edge.p_connect.toFixed(2);
    prob.dataset.pConnect = String(edge.p_connect);

    row.append(head, line, tail, prob);
    list.appendChild(row);
  }
  container.appendChild(list);
}
