// Chat application wiring: one in-flight query at a time, messages in
// submission order, evidence (citations + trace) in a side panel.

import { ApiError, getObjects, postQuery, type Citation } from "./api.js";
import {
  chunkPreview,
  errorBubble,
  objectsError,
  objectsPanel,
  queryTemplate,
  systemMessage,
  userMessage,
} from "./view.js";

export interface AppHandles {
  root: HTMLElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  messages: HTMLElement;
  evidence: HTMLElement;
  objects: HTMLElement;
}

function newSessionId(): string {
  return `web-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 8)}`;
}

export function createApp(
  root: HTMLElement,
  baseUrl = "",
  now: () => Date = () => new Date(),
): AppHandles {
  root.innerHTML = `
    <div class="layout">
      <main class="chat">
        <section class="messages" aria-live="polite"></section>
        <form class="composer">
          <input class="composer-input" type="text"
                 placeholder="describe the fault, e.g. 'the generator cooling fan has an oil leak'" />
          <button class="composer-send" type="submit" disabled>send</button>
        </form>
      </main>
      <aside class="sidebar">
        <section class="objects-slot"></section>
        <section class="evidence-slot"></section>
      </aside>
    </div>`;

  const input = root.querySelector<HTMLInputElement>(".composer-input")!;
  const send = root.querySelector<HTMLButtonElement>(".composer-send")!;
  const form = root.querySelector<HTMLFormElement>(".composer")!;
  const messages = root.querySelector<HTMLElement>(".messages")!;
  const evidence = root.querySelector<HTMLElement>(".evidence-slot")!;
  const objects = root.querySelector<HTMLElement>(".objects-slot")!;

  const sessionId = newSessionId();
  let inFlight = false;

  function refreshSendState(): void {
    send.disabled = inFlight || input.value.trim().length === 0;
  }

  function showCitation(citation: Citation): void {
    evidence.replaceChildren(chunkPreview(citation));
  }

  async function submit(text: string): Promise<void> {
    if (inFlight || !text.trim()) {
      return;
    }
    inFlight = true;
    refreshSendState();
    messages.appendChild(userMessage(text, now()));
    try {
      const response = await postQuery(baseUrl, text, sessionId);
      messages.appendChild(systemMessage(response, now(), showCitation));
    } catch (err) {
      const code = err instanceof ApiError ? err.code : "NetworkError";
      const detail =
        err instanceof ApiError ? err.detail : err instanceof Error ? err.message : "";
      messages.appendChild(errorBubble(code, detail, () => void submit(text)));
    } finally {
      inFlight = false;
      refreshSendState();
      messages.scrollTop = messages.scrollHeight;
    }
  }

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = "";
    refreshSendState();
    void submit(text);
  });
  input.addEventListener("input", refreshSendState);

  async function loadObjects(): Promise<void> {
    try {
      const body = await getObjects(baseUrl);
      objects.replaceChildren(
        objectsPanel(body.objects, (objectType) => {
          input.value = queryTemplate(objectType);
          input.focus();
          refreshSendState();
        }),
      );
    } catch {
      objects.replaceChildren(objectsError(() => void loadObjects()));
    }
  }
  void loadObjects();

  refreshSendState();
  return { root, input, send, messages, evidence, objects };
}
