// Thin typed client for the /v1 API.
//
// Mutations carry a caller-supplied idempotency key and retry on
// network failure with backoff; because the key is reused on retry, a
// request whose response was lost is acknowledged rather than applied
// twice. Conflict responses are surfaced as ApiConflict so the caller
// can re-sync instead of crashing.

import type {
  ApiErrorBody,
  KeywordCandidates,
  KeywordDecision,
  MetricRow,
  QueryItem,
  SessionRecord,
} from "./types.js";

export class ApiConflict extends Error {
  constructor(public body: ApiErrorBody) {
    super(body.message);
  }
}

export class ApiFailure extends Error {
  constructor(public status: number, public body: ApiErrorBody) {
    super(body.message);
  }
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export interface ClientOptions {
  retries?: number;
  backoffMs?: number;
  fetchImpl?: typeof fetch;
}

export class ApiClient {
  private retries: number;
  private backoffMs: number;
  private fetchImpl: typeof fetch;

  constructor(public baseUrl: string, options: ClientOptions = {}) {
    this.retries = options.retries ?? 3;
    this.backoffMs = options.backoffMs ?? 250;
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    parse: "json" | "text" = "json",
  ): Promise<T> {
    let lastError: unknown;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      let response: Response;
      try {
        response = await this.fetchImpl(`${this.baseUrl}${path}`, {
          method,
          headers: body === undefined ? {} : { "Content-Type": "application/json" },
          body: body === undefined ? undefined : JSON.stringify(body),
        });
      } catch (err) {
        // network failure: the idempotency key inside the body makes a
        // retried mutation safe
        lastError = err;
        await sleep(this.backoffMs * 2 ** attempt);
        continue;
      }
      if (response.ok) {
        return (parse === "json" ? response.json() : response.text()) as Promise<T>;
      }
      let parsed: ApiErrorBody;
      try {
        parsed = (await response.json()) as ApiErrorBody;
      } catch {
        parsed = { code: "http_error", message: `HTTP ${response.status}` };
      }
      if (response.status === 409) throw new ApiConflict(parsed);
      throw new ApiFailure(response.status, parsed);
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  registerCorpus(payload: { dfm_path: string; texts_path?: string; truth_path?: string }) {
    return this.request<{ corpus_id: string; n_docs: number; n_features: number }>(
      "POST",
      "/v1/corpora",
      payload,
    );
  }

  createSession(corpusId: string, config: Record<string, unknown>) {
    return this.request<SessionRecord>("POST", "/v1/sessions", {
      corpus_id: corpusId,
      config,
    });
  }

  getSession(sessionId: string) {
    return this.request<SessionRecord>("GET", `/v1/sessions/${sessionId}`);
  }

  getQueries(sessionId: string) {
    return this.request<{ queries: QueryItem[] }>("GET", `/v1/sessions/${sessionId}/queries`);
  }

  submitLabel(sessionId: string, docId: string, classIndex: number, submissionId: string) {
    return this.request<SessionRecord>("POST", `/v1/sessions/${sessionId}/labels`, {
      labels: [{ doc_id: docId, class_index: classIndex }],
      submission_id: submissionId,
    });
  }

  getKeywords(sessionId: string) {
    return this.request<{ candidates: KeywordCandidates[]; gamma: number }>(
      "GET",
      `/v1/sessions/${sessionId}/keywords`,
    );
  }

  submitKeywords(sessionId: string, decisions: KeywordDecision[]) {
    return this.request<SessionRecord>("POST", `/v1/sessions/${sessionId}/keywords`, {
      decisions,
    });
  }

  getMetrics(sessionId: string) {
    return this.request<{ history: MetricRow[] }>("GET", `/v1/sessions/${sessionId}/metrics`);
  }

  getPredictionsCsv(sessionId: string) {
    return this.request<string>("GET", `/v1/sessions/${sessionId}/predictions`, undefined, "text");
  }

  stopSession(sessionId: string) {
    return this.request<SessionRecord>("POST", `/v1/sessions/${sessionId}/stop`);
  }
}

let counter = 0;

export function decisionKey(sessionId: string, docId: string): string {
  // unique per decision, stable across retries of the same decision
  counter += 1;
  return `${sessionId}:${docId}:${counter.toString(36)}:${Math.random().toString(36).slice(2, 10)}`;
}
