// Chat view behavior against recorded service responses: the rendered
// answer, citation chips, routing badge, trace count, and the adaptation
// banner must all come from the response body, never be invented.

import { afterEach, describe, expect, it, vi } from "vitest";

import { createApp } from "../src/app.js";
import type { QueryResponse, ObjectsResponse } from "../src/api.js";
import { StubServer, flushAsync } from "./stub.js";

import knownFixture from "./fixtures/query_known.json";
import analogousFixture from "./fixtures/query_analogous.json";
import refusedFixture from "./fixtures/query_refused.json";
import errorFixture from "./fixtures/query_error.json";
import objectsFixture from "./fixtures/objects.json";

const known = knownFixture as QueryResponse;
const analogous = analogousFixture as QueryResponse;
const refused = refusedFixture as QueryResponse;
const objects = objectsFixture as ObjectsResponse;

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

function mount(stub: StubServer) {
  stub.install();
  const root = document.createElement("div");
  document.body.appendChild(root);
  return createApp(root);
}

async function sendQuery(app: ReturnType<typeof createApp>, text: string) {
  app.input.value = text;
  app.input.dispatchEvent(new Event("input", { bubbles: true }));
  app.root.querySelector("form")!.dispatchEvent(
    new Event("submit", { bubbles: true, cancelable: true }),
  );
  await flushAsync();
}

function defaultStub(): StubServer {
  return new StubServer().on("GET", "/api/objects", { status: 200, body: objects });
}

describe("known-object round trip", () => {
  it("renders answer text, citation chips, badge, and trace from the fixture", async () => {
    const stub = defaultStub().on("POST", "/api/query", { status: 200, body: known });
    const app = mount(stub);
    await sendQuery(app, "the agitator forward mixing paddle has difficulty starting");

    const system = app.messages.querySelector(".message-system")!;
    expect(system).not.toBeNull();
    const renderedText = Array.from(system.querySelectorAll(".scheme-line"))
      .map((p) => p.textContent)
      .join("\n");
    expect(renderedText).toBe(known.text);

    const chips = system.querySelectorAll(".citation-chip");
    expect(chips.length).toBe(known.citations.length);

    const badge = system.querySelector(".badge")!;
    expect(badge.textContent).toContain("Known");
    expect(badge.textContent).toContain(known.routing.object ?? "");

    const traceItems = system.querySelectorAll(".trace-event");
    expect(traceItems.length).toBe(known.trace.length);
    expect(system.querySelector(".trace-panel summary")!.textContent).toBe(
      `trace (${known.trace.length})`,
    );
    // no adaptation banner on known-object answers
    expect(system.querySelector(".adaptation-banner")).toBeNull();
  });

  it("never fabricates scheme lines beyond the response body", async () => {
    const stub = defaultStub().on("POST", "/api/query", { status: 200, body: known });
    const app = mount(stub);
    await sendQuery(app, "anything");
    const lines = Array.from(
      app.messages.querySelectorAll(".message-system .scheme-line"),
    ).map((p) => p.textContent ?? "");
    const bodyLines = known.text.split("\n");
    expect(lines).toEqual(bodyLines);
  });

  it("shows the chunk preview panel when a citation chip is clicked", async () => {
    const stub = defaultStub().on("POST", "/api/query", { status: 200, body: known });
    const app = mount(stub);
    await sendQuery(app, "anything");
    const chip = app.messages.querySelector<HTMLButtonElement>(".citation-chip")!;
    chip.click();
    const preview = app.evidence.querySelector(".chunk-preview")!;
    expect(preview).not.toBeNull();
    const first = known.citations[0]!;
    expect(preview.textContent).toContain(first.doc_id);
  });
});

describe("analogous routing", () => {
  it("renders the adaptation banner naming the known object", async () => {
    const stub = defaultStub().on("POST", "/api/query", {
      status: 200,
      body: analogous,
    });
    const app = mount(stub);
    await sendQuery(app, "the new hydraulic pump has a failure");
    const system = app.messages.querySelector(".message-system")!;
    const banner = system.querySelector(".adaptation-banner")!;
    expect(banner).not.toBeNull();
    expect(banner.textContent).toContain("adapted from fuel pump");
    expect(system.querySelector(".badge")!.textContent).toContain("Analogous");
    expect(system.querySelectorAll(".citation-chip").length).toBe(
      analogous.citations.length,
    );
    expect(system.querySelectorAll(".trace-event").length).toBe(
      analogous.trace.length,
    );
  });
});

describe("refusals and errors", () => {
  it("renders a refusal with its trace and no citation chips", async () => {
    const stub = defaultStub().on("POST", "/api/query", { status: 200, body: refused });
    const app = mount(stub);
    await sendQuery(app, "purple elephant dances");
    const system = app.messages.querySelector(".message-system")!;
    expect(system.textContent).toContain("unable to help");
    expect(system.querySelectorAll(".citation-chip").length).toBe(0);
    expect(system.querySelectorAll(".trace-event").length).toBe(refused.trace.length);
  });

  it("renders an inline error bubble with the API error code", async () => {
    // the composer blocks empty input client-side, so replay the recorded
    // 400 against a query the client allows
    const stub = defaultStub().on("POST", "/api/query", {
      status: 400,
      body: errorFixture,
    });
    const app = mount(stub);
    await sendQuery(app, "some query the server rejects");
    const bubble = app.messages.querySelector(".message-error")!;
    expect(bubble).not.toBeNull();
    expect(bubble.querySelector(".error-code")!.textContent).toBe("EmptyQuery");
    expect(bubble.querySelector(".retry-button")).not.toBeNull();
  });

  it("retry re-submits the failed query", async () => {
    const stub = defaultStub().on(
      "POST",
      "/api/query",
      { status: 400, body: errorFixture },
      { status: 200, body: known },
    );
    const app = mount(stub);
    await sendQuery(app, "the agitator forward mixing paddle has difficulty starting");
    const retry = app.messages.querySelector<HTMLButtonElement>(".retry-button")!;
    retry.click();
    await flushAsync();
    expect(app.messages.querySelector(".message-system")).not.toBeNull();
  });

  it("network failures surface as retryable error bubbles", async () => {
    const stub = defaultStub();
    stub.install();
    vi.stubGlobal("fetch", async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      if (url.includes("/api/query")) {
        throw new TypeError("network down");
      }
      return stub.fetch(input, init);
    });
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = createApp(root);
    await sendQuery(app, "anything");
    const bubble = app.messages.querySelector(".message-error")!;
    expect(bubble.querySelector(".error-code")!.textContent).toBe("NetworkError");
  });
});

describe("composer state", () => {
  it("send is disabled for empty input and enabled for text", async () => {
    const app = mount(defaultStub());
    await flushAsync();
    expect(app.send.disabled).toBe(true);
    app.input.value = "hello";
    app.input.dispatchEvent(new Event("input", { bubbles: true }));
    expect(app.send.disabled).toBe(false);
    app.input.value = "   ";
    app.input.dispatchEvent(new Event("input", { bubbles: true }));
    expect(app.send.disabled).toBe(true);
  });

  it("allows one in-flight query at a time", async () => {
    let release!: (value: Response) => void;
    const gate = new Promise<Response>((resolve) => {
      release = resolve;
    });
    const stub = defaultStub();
    stub.install();
    vi.stubGlobal("fetch", async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      if (url.includes("/api/query")) {
        return gate;
      }
      return stub.fetch(input, init);
    });
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = createApp(root);
    app.input.value = "first";
    app.input.dispatchEvent(new Event("input", { bubbles: true }));
    app.root.querySelector("form")!.dispatchEvent(
      new Event("submit", { bubbles: true, cancelable: true }),
    );
    await flushAsync();
    app.input.value = "second";
    app.input.dispatchEvent(new Event("input", { bubbles: true }));
    expect(app.send.disabled).toBe(true); // still awaiting the first response
    release(
      new Response(JSON.stringify(known), {
        status: 200,
        headers: { "Content-Type": "application/json" },
      }),
    );
    await flushAsync();
    expect(app.send.disabled).toBe(false);
  });

  it("messages appear in submission order", async () => {
    const stub = defaultStub().on("POST", "/api/query", { status: 200, body: known });
    const app = mount(stub);
    await sendQuery(app, "first question");
    await sendQuery(app, "second question");
    const roles = Array.from(app.messages.children).map((node) =>
      node.classList.contains("message-user") ? "user" : "system",
    );
    expect(roles).toEqual(["user", "system", "user", "system"]);
  });
});

describe("objects panel", () => {
  it("lists every registered object", async () => {
    const app = mount(defaultStub());
    await flushAsync();
    const entries = app.objects.querySelectorAll(".object-entry");
    expect(entries.length).toBe(objects.objects.length);
    expect(Array.from(entries).map((e) => e.textContent)).toEqual(objects.objects);
  });

  it("click pre-fills a query template mentioning the object", async () => {
    const app = mount(defaultStub());
    await flushAsync();
    const entries = app.objects.querySelectorAll<HTMLButtonElement>(".object-entry");
    const train = Array.from(entries).find((e) => e.textContent === "train")!;
    train.click();
    expect(app.input.value).toContain("train");
    expect(app.send.disabled).toBe(false);
  });

  it("empty registry shows the empty-state message", async () => {
    const stub = new StubServer().on("GET", "/api/objects", {
      status: 200,
      body: { objects: [], generation: 1 },
    });
    const app = mount(stub);
    await flushAsync();
    expect(app.objects.querySelector(".objects-empty")).not.toBeNull();
  });

  it("load failure shows a retry control that reloads", async () => {
    const stub = new StubServer().on(
      "GET",
      "/api/objects",
      { status: 500, body: { error: "IndexIoError", detail: "boom" } },
      { status: 200, body: objects },
    );
    const app = mount(stub);
    await flushAsync();
    const retry = app.objects.querySelector<HTMLButtonElement>(".retry-button")!;
    expect(retry).not.toBeNull();
    retry.click();
    await flushAsync();
    expect(app.objects.querySelectorAll(".object-entry").length).toBe(
      objects.objects.length,
    );
  });
});
