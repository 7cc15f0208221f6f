/** Typed client for the annotation service JSON API. */

export type SessionStatus = "awaiting_labels" | "training" | "finished";
export type Ordering = "j" | "k";

export interface ObjectView {
  id: string;
  features: number[];
  asset: string | null;
}

export interface PendingQuery {
  query_id: string;
  anchor: ObjectView;
  option_j: ObjectView;
  option_k: ObjectView;
}

export interface PendingResponse {
  status: SessionStatus;
  round: number;
  queries: PendingQuery[];
}

export interface StatusResponse {
  session_id: string;
  status: SessionStatus;
  round: number;
  labeled_count: number;
  pending_count: number;
  tga: number | null;
  tga_curve: number[];
}

export interface AnswerResponse {
  remaining: number;
  status: SessionStatus;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // keep the status text
  }
  return new ApiError(response.status, detail);
}

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  async getPending(sessionId: string): Promise<PendingResponse> {
    return this.get(`/sessions/${encodeURIComponent(sessionId)}/pending`);
  }

  async getStatus(sessionId: string): Promise<StatusResponse> {
    return this.get(`/sessions/${encodeURIComponent(sessionId)}/status`);
  }

  async postAnswer(
    sessionId: string,
    queryId: string,
    ordering: Ordering,
  ): Promise<AnswerResponse> {
    const response = await this.fetchFn(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/answers`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ query_id: queryId, ordering }),
      },
    );
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as AnswerResponse;
  }

  async createSession(body: Record<string, unknown>): Promise<StatusResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as StatusResponse;
  }
}
