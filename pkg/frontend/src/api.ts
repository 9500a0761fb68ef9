import type { ApiErrorBody, QuestionInfo, SessionHandle, StateSnapshot, StepMetric } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public detail: string | null = null,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

/** Minimal client for the session service; one method per endpoint. */
export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        headers: { "content-type": "application/json" },
        ...init,
      });
    } catch (err) {
      throw new ApiError(0, "unreachable", `service unreachable: ${err}`);
    }
    if (!response.ok) {
      let body: Partial<ApiErrorBody> = {};
      try {
        body = (await response.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; fall through with defaults
      }
      throw new ApiError(
        response.status,
        body.code ?? "http_error",
        body.message ?? response.statusText,
        body.detail ?? null,
      );
    }
    return (await response.json()) as T;
  }

  healthz(): Promise<{ status: string }> {
    return this.request("/healthz");
  }

  createSession(scenario: string, config?: Record<string, unknown>): Promise<SessionHandle> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify(config ? { scenario, config } : { scenario }),
    });
  }

  getState(sessionId: string): Promise<StateSnapshot> {
    return this.request(`/sessions/${sessionId}/state`);
  }

  ask(sessionId: string): Promise<QuestionInfo> {
    return this.request(`/sessions/${sessionId}/ask`, { method: "POST" });
  }

  answer(sessionId: string, text: string, respondingUser: string): Promise<StepMetric> {
    return this.request(`/sessions/${sessionId}/answer`, {
      method: "POST",
      body: JSON.stringify({ text, responding_user: respondingUser }),
    });
  }
}
