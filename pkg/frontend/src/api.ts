/**
 * Typed client for the moldassist chat service HTTP API.
 *
 * All methods reject with ApiError on non-2xx responses; a 409 means a
 * turn is already running in the session and the caller should retry
 * after the current turn completes.
 */

export interface HealthInfo {
  status: string;
  backend: string;
  diffusion_available: boolean;
}

export interface SessionInfo {
  id: string;
  created_at: number;
}

export interface SessionListEntry extends SessionInfo {
  turns: number;
}

export interface ChatReply {
  reply: string;
  language: string;
  turn_id: string;
}

export interface TurnSummary {
  turn_id: string;
  user_input: string;
  reply: string;
  language: string;
  status: string;
}

export interface StageRecord {
  stage: string;
  prompt_digest?: string;
  raw_output?: string;
  duration?: number;
  tool?: string;
  flags?: string[];
}

export interface TurnTrace {
  turn_id: string;
  stages: StageRecord[];
  latency: number;
  input_tokens: number;
  output_tokens: number;
  cost: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly authToken?: string,
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
    };
    if (this.authToken) {
      headers["Authorization"] = `Bearer ${this.authToken}`;
    }
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const payload = await response.json();
        if (payload && typeof payload.detail === "string") {
          detail = payload.detail;
        }
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  health(): Promise<HealthInfo> {
    return this.request("GET", "/api/health");
  }

  createSession(): Promise<SessionInfo> {
    return this.request("POST", "/api/sessions");
  }

  listSessions(): Promise<SessionListEntry[]> {
    return this.request("GET", "/api/sessions");
  }

  chat(sessionId: string, message: string): Promise<ChatReply> {
    return this.request("POST", `/api/sessions/${sessionId}/chat`, { message });
  }

  listTurns(sessionId: string): Promise<TurnSummary[]> {
    return this.request("GET", `/api/sessions/${sessionId}/turns`);
  }

  trace(turnId: string): Promise<TurnTrace> {
    return this.request("GET", `/api/turns/${turnId}/trace`);
  }
}
