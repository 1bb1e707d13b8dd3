/**
 * Thin HTTP client for the matching service.
 *
 * Everything goes through /api/v1; error bodies of the shape
 * {"error": msg, "field": name?} become ApiError instances so callers can
 * branch on status without touching fetch internals.
 */

import type {
  EvalReport,
  GuidancePairBody,
  GuidanceTuple,
  ProjectSummary,
  RunEnvelope,
  RunRef,
  RunRequest,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly field: string | null;

  constructor(status: number, message: string, field: string | null = null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.field = field;
  }
}

/**
 * Operations the review console needs. The production implementation talks
 * HTTP; tests substitute an in-memory mock with the same contract.
 */
export interface ApiClient {
  getProject(projectId: string): Promise<ProjectSummary>;
  createRun(projectId: string, request: RunRequest): Promise<RunRef>;
  getRun(runId: string): Promise<RunEnvelope>;
  getEval(runId: string, kValues: number[]): Promise<EvalReport>;
  addGuidance(projectId: string, pair: GuidancePairBody): Promise<GuidanceTuple[]>;
  removeGuidance(projectId: string, pair: GuidancePairBody): Promise<GuidanceTuple[]>;
  getDocument(projectId: string, origin: string): Promise<string>;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class HttpApiClient implements ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  /**
   * @param base Origin prefix, e.g. "" when served by the same host or
   *             "http://127.0.0.1:8000" during development.
   * @param fetchFn Injectable for tests; defaults to the global fetch.
   */
  constructor(base = "", fetchFn: FetchLike = (url, init) => fetch(url, init)) {
    this.base = base.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  async getProject(projectId: string): Promise<ProjectSummary> {
    return this.requestJson("GET", `/projects/${encodeURIComponent(projectId)}`);
  }

  async createRun(projectId: string, request: RunRequest): Promise<RunRef> {
    return this.requestJson(
      "POST", `/projects/${encodeURIComponent(projectId)}/runs`, request);
  }

  async getRun(runId: string): Promise<RunEnvelope> {
    return this.requestJson("GET", `/runs/${encodeURIComponent(runId)}`);
  }

  async getEval(runId: string, kValues: number[]): Promise<EvalReport> {
    const k = kValues.join(",");
    return this.requestJson(
      "GET", `/runs/${encodeURIComponent(runId)}/eval?k=${encodeURIComponent(k)}`);
  }

  async addGuidance(
    projectId: string, pair: GuidancePairBody): Promise<GuidanceTuple[]> {
    const body = await this.requestJson<{ guidance: GuidanceTuple[] }>(
      "POST", `/projects/${encodeURIComponent(projectId)}/guidance`, pair);
    return body.guidance;
  }

  async removeGuidance(
    projectId: string, pair: GuidancePairBody): Promise<GuidanceTuple[]> {
    const body = await this.requestJson<{ guidance: GuidanceTuple[] }>(
      "DELETE", `/projects/${encodeURIComponent(projectId)}/guidance`, pair);
    return body.guidance;
  }

  async getDocument(projectId: string, origin: string): Promise<string> {
    const response = await this.send(
      "GET",
      `/projects/${encodeURIComponent(projectId)}/docs/${encodeURIComponent(origin)}`);
    return response.text();
  }

  private async requestJson<T>(
    method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.send(method, path, body);
    return (await response.json()) as T;
  }

  private async send(
    method: string, path: string, body?: unknown): Promise<Response> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.base}/api/v1${path}`, init);
    if (!response.ok) {
      throw await toApiError(response);
    }
    return response;
  }
}

/** Map a non-2xx response to an ApiError, tolerating non-JSON bodies. */
async function toApiError(response: Response): Promise<ApiError> {
  let message = `HTTP ${response.status}`;
  let field: string | null = null;
  try {
    const body = (await response.json()) as { error?: string; field?: string };
    if (typeof body.error === "string" && body.error) {
      message = body.error;
    }
    if (typeof body.field === "string") {
      field = body.field;
    }
  } catch {
    // keep the status-line fallback
  }
  return new ApiError(response.status, message, field);
}
