// DOM builders for the chat view. Pure functions from API payloads to
// elements; no network access and no content invented beyond labels —
// every scheme line shown comes straight out of the response body.

import type { Citation, QueryResponse, RoutingInfo, TraceEvent } from "./api.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function routingBadge(routing: RoutingInfo): HTMLElement {
  const badge = el("span", `badge badge-${routing.kind}`);
  if (routing.kind === "known") {
    badge.textContent = `Known: ${routing.object ?? ""}`;
  } else if (routing.kind === "analogous") {
    const similarity =
      routing.similarity !== undefined
        ? ` (${routing.similarity.toFixed(2)})`
        : "";
    badge.textContent = `Analogous: ${routing.object ?? ""}${similarity}`;
  } else {
    badge.textContent = "Unknown";
  }
  return badge;
}

export function adaptationBanner(routing: RoutingInfo): HTMLElement | null {
  if (routing.kind !== "analogous" || !routing.object) {
    return null;
  }
  const target = routing.unknown_name ? ` for ${routing.unknown_name}` : "";
  return el(
    "div",
    "adaptation-banner",
    `adapted from ${routing.object}${target}`,
  );
}

export function citationChips(
  citations: Citation[],
  onSelect: (citation: Citation) => void,
): HTMLElement {
  const row = el("div", "citations");
  for (const citation of citations) {
    const chip = el("button", "citation-chip", `${citation.doc_id}#${citation.seq}`);
    chip.type = "button";
    chip.title = `prior ${citation.prior.toFixed(3)}`;
    chip.addEventListener("click", () => onSelect(citation));
    row.appendChild(chip);
  }
  return row;
}

export function chunkPreview(citation: Citation): HTMLElement {
  const panel = el("div", "chunk-preview");
  panel.appendChild(el("h3", "chunk-preview-title", `${citation.doc_id}#${citation.seq}`));
  const list = el("dl");
  const entries: Array<[string, string]> = [
    ["document", citation.doc_id],
    ["chunk", String(citation.seq)],
    ["retrieval prior", citation.prior.toFixed(4)],
    ["log p(answer | chunk)", citation.cond_log_prob.toFixed(3)],
  ];
  for (const [label, value] of entries) {
    list.appendChild(el("dt", undefined, label));
    list.appendChild(el("dd", undefined, value));
  }
  panel.appendChild(list);
  return panel;
}

export function tracePanel(trace: TraceEvent[]): HTMLElement {
  const details = el("details", "trace-panel");
  details.appendChild(el("summary", undefined, `trace (${trace.length})`));
  const list = el("ol", "trace-events");
  for (const event of trace) {
    const item = el("li", "trace-event");
    item.appendChild(el("span", "trace-agent", `agent ${event.agent}`));
    item.appendChild(el("span", "trace-action", event.action));
    item.appendChild(el("span", "trace-env", event.environment));
    list.appendChild(item);
  }
  details.appendChild(list);
  return details;
}

export function userMessage(text: string, timestamp: Date): HTMLElement {
  const bubble = el("article", "message message-user");
  bubble.appendChild(el("time", "message-time", timestamp.toLocaleTimeString()));
  bubble.appendChild(el("p", "message-text", text));
  return bubble;
}

export function systemMessage(
  response: QueryResponse,
  timestamp: Date,
  onSelectCitation: (citation: Citation) => void,
): HTMLElement {
  const bubble = el("article", "message message-system");
  bubble.appendChild(el("time", "message-time", timestamp.toLocaleTimeString()));
  bubble.appendChild(routingBadge(response.routing));
  const banner = adaptationBanner(response.routing);
  if (banner) {
    bubble.appendChild(banner);
  }
  const body = el("div", "message-text");
  for (const line of response.text.split("\n")) {
    body.appendChild(el("p", "scheme-line", line));
  }
  bubble.appendChild(body);
  if (response.citations.length > 0) {
    bubble.appendChild(citationChips(response.citations, onSelectCitation));
  }
  bubble.appendChild(tracePanel(response.trace));
  return bubble;
}

export function errorBubble(
  code: string,
  detail: string,
  onRetry: () => void,
): HTMLElement {
  const bubble = el("article", "message message-error");
  bubble.appendChild(el("strong", "error-code", code));
  if (detail) {
    bubble.appendChild(el("p", "error-detail", detail));
  }
  const retry = el("button", "retry-button", "retry");
  retry.type = "button";
  retry.addEventListener("click", onRetry);
  bubble.appendChild(retry);
  return bubble;
}

export function objectsPanel(
  objects: string[],
  onPick: (objectType: string) => void,
): HTMLElement {
  const panel = el("div", "objects-panel");
  panel.appendChild(el("h2", "objects-title", "maintenance objects"));
  if (objects.length === 0) {
    panel.appendChild(el("p", "objects-empty", "no objects registered yet"));
    return panel;
  }
  const list = el("ul", "objects-list");
  for (const objectType of objects) {
    const item = el("li");
    const button = el("button", "object-entry", objectType);
    button.type = "button";
    button.addEventListener("click", () => onPick(objectType));
    item.appendChild(button);
    list.appendChild(item);
  }
  panel.appendChild(list);
  return panel;
}

export function objectsError(onRetry: () => void): HTMLElement {
  const panel = el("div", "objects-panel objects-error");
  panel.appendChild(el("p", undefined, "could not load objects"));
  const retry = el("button", "retry-button", "retry");
  retry.type = "button";
  retry.addEventListener("click", onRetry);
  panel.appendChild(retry);
  return panel;
}

export function queryTemplate(objectType: string): string {
  return `the ${objectType} has `;
}
