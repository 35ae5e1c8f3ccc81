// Typed client for the maintgen JSON API. This is the only place the
// frontend talks to the network; everything else renders what it returns.

export interface Citation {
  doc_id: string;
  seq: number;
  prior: number;
  cond_log_prob: number;
}

export interface TraceEvent {
  step: number;
  agent: number;
  observation: string;
  action: string;
  environment: string;
}

export interface RoutingInfo {
  kind: "known" | "analogous" | "unknown";
  object?: string;
  similarity?: number;
  unknown_name?: string;
}

export interface QueryResponse {
  text: string;
  citations: Citation[];
  trace: TraceEvent[];
  generation: number;
  routing: RoutingInfo;
  status: string;
  session_id: string | null;
}

export interface ObjectsResponse {
  objects: string[];
  generation: number;
}

export interface ApiErrorBody {
  error: string;
  detail?: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<never> {
  let code = `HTTP ${response.status}`;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as ApiErrorBody;
    if (body && typeof body.error === "string") {
      code = body.error;
      detail = body.detail ?? "";
    }
  } catch {
    // non-JSON error body; keep the HTTP status as the code
  }
  throw new ApiError(response.status, code, detail);
}

export async function postQuery(
  baseUrl: string,
  query: string,
  sessionId: string,
): Promise<QueryResponse> {
  const response = await fetch(`${baseUrl}/api/query`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ query, session_id: sessionId }),
  });
  if (!response.ok) {
    await parseError(response);
  }
  return (await response.json()) as QueryResponse;
}

export async function getObjects(baseUrl: string): Promise<ObjectsResponse> {
  const response = await fetch(`${baseUrl}/api/objects`);
  if (!response.ok) {
    await parseError(response);
  }
  return (await response.json()) as ObjectsResponse;
}
