import { z } from "zod";
import {
  BalancePayloadSchema,
  EffectResponseSchema,
  JobStatusSchema,
  MethodResponseSchema,
  OverlapPayloadSchema,
  ReportSchema,
  SensitivityResultSchema,
  SessionSummarySchema,
  StepOrderBodySchema,
  TrimResponseSchema,
  ValidationBodySchema,
  type BalancePayload,
  type EffectResponse,
  type JobStatus,
  type MethodResponse,
  type OverlapPayload,
  type Report,
  type SensitivityResult,
  type SessionSummary,
  type TrimResponse,
} from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface FieldError {
  loc: (string | number)[];
  msg: string;
}

/**
 * Error for any non-2xx response, keeping enough structure for the UI to
 * react: `missing` names the unfinished step on a 409, `fieldErrors` carries
 * per-field messages on a 422, and `message` is always displayable as-is.
 */
export class ApiError extends Error {
  readonly status: number;
  readonly missing: string | null;
  readonly fieldErrors: FieldError[];
  readonly body: unknown;

  constructor(status: number, body: unknown) {
    const order = StepOrderBodySchema.safeParse(body);
    const validation = ValidationBodySchema.safeParse(body);
    let message = `request failed with status ${status}`;
    if (order.success) {
      message = order.data.detail;
    } else if (validation.success && validation.data.detail.length > 0) {
      const first = validation.data.detail[0];
      message = `${first.loc.join(".")}: ${first.msg}`;
    } else if (typeof body === "object" && body !== null && "detail" in body) {
      const detail = (body as { detail: unknown }).detail;
      if (typeof detail === "string") message = detail;
    }
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.missing = order.success ? order.data.missing : null;
    this.fieldErrors = validation.success ? validation.data.detail : [];
    this.body = body;
  }
}

async function parseBody(response: Response): Promise<unknown> {
  const text = await response.text();
  if (text === "") return null;
  try {
    return JSON.parse(text);
  } catch {
    return text;
  }
}

export interface TrimRequestRule {
  covariate: string;
  tail: "lower" | "upper" | "both";
  lower?: number | null;
  upper?: number | null;
  quantile?: boolean;
}

export interface SensitivityRequestConfig {
  es_t_range?: [number, number];
  es_t_step?: number;
  rho_y_range?: [number, number];
  rho_y_step?: number;
  replications?: number;
  seed?: number;
}

/** Typed client for the balancing service; every response is schema-checked. */
export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string = "", fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(
    schema: z.ZodType<T>,
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.base + path, init);
    const parsed = await parseBody(response);
    if (!response.ok) throw new ApiError(response.status, parsed);
    return schema.parse(parsed);
  }

  async createSession(csv: Blob | string, filename: string): Promise<SessionSummary> {
    const form = new FormData();
    const blob = typeof csv === "string" ? new Blob([csv], { type: "text/csv" }) : csv;
    form.append("file", blob, filename);
    const response = await this.fetchImpl(`${this.base}/sessions`, {
      method: "POST",
      body: form,
    });
    const parsed = await parseBody(response);
    if (!response.ok) throw new ApiError(response.status, parsed);
    return SessionSummarySchema.parse(parsed);
  }

  summary(sessionId: string): Promise<SessionSummary> {
    return this.request(SessionSummarySchema, "GET", `/sessions/${sessionId}/summary`);
  }

  setRoles(
    sessionId: string,
    roles: Record<string, string>,
    treatedLevel?: string | number | null,
  ): Promise<SessionSummary> {
    return this.request(SessionSummarySchema, "PUT", `/sessions/${sessionId}/roles`, {
      roles,
      treated_level: treatedLevel ?? null,
    });
  }

  setEstimand(sessionId: string, estimand: string): Promise<SessionSummary> {
    return this.request(SessionSummarySchema, "PUT", `/sessions/${sessionId}/estimand`, {
      estimand,
    });
  }

  overlap(sessionId: string, bins?: number): Promise<OverlapPayload> {
    const query = bins === undefined ? "" : `?bins=${bins}`;
    return this.request(OverlapPayloadSchema, "GET", `/sessions/${sessionId}/overlap${query}`);
  }

  trim(
    sessionId: string,
    rules: TrimRequestRule[],
    options: { dryRun?: boolean; overlayBins?: number } = {},
  ): Promise<TrimResponse> {
    return this.request(TrimResponseSchema, "POST", `/sessions/${sessionId}/trim`, {
      rules,
      dry_run: options.dryRun ?? false,
      overlay_bins: options.overlayBins ?? null,
    });
  }

  startWeights(sessionId: string, config: Record<string, unknown> = {}): Promise<JobStatus> {
    return this.request(JobStatusSchema, "POST", `/sessions/${sessionId}/weights`, { config });
  }

  weightsStatus(sessionId: string): Promise<JobStatus> {
    return this.request(JobStatusSchema, "GET", `/sessions/${sessionId}/weights/status`);
  }

  balance(sessionId: string): Promise<BalancePayload> {
    return this.request(BalancePayloadSchema, "GET", `/sessions/${sessionId}/balance`);
  }

  chooseMethod(sessionId: string, methodId: string): Promise<MethodResponse> {
    return this.request(MethodResponseSchema, "PUT", `/sessions/${sessionId}/method`, {
      method_id: methodId,
    });
  }

  runEffect(
    sessionId: string,
    model: string = "DoublyRobust",
    covariateSubset?: string[],
  ): Promise<EffectResponse> {
    return this.request(EffectResponseSchema, "POST", `/sessions/${sessionId}/effect`, {
      model,
      covariate_subset: covariateSubset ?? null,
    });
  }

  startSensitivity(sessionId: string, config: SensitivityRequestConfig = {}): Promise<JobStatus> {
    return this.request(JobStatusSchema, "POST", `/sessions/${sessionId}/sensitivity`, { config });
  }

  sensitivityStatus(sessionId: string): Promise<JobStatus> {
    return this.request(JobStatusSchema, "GET", `/sessions/${sessionId}/sensitivity/status`);
  }

  sensitivityResult(sessionId: string): Promise<SensitivityResult> {
    return this.request(SensitivityResultSchema, "GET", `/sessions/${sessionId}/sensitivity/result`);
  }

  report(sessionId: string): Promise<Report> {
    return this.request(ReportSchema, "GET", `/sessions/${sessionId}/report`);
  }

  async reportMarkdown(sessionId: string): Promise<string> {
    const response = await this.fetchImpl(`${this.base}/sessions/${sessionId}/report`, {
      method: "GET",
      headers: { Accept: "text/markdown" },
    });
    if (!response.ok) throw new ApiError(response.status, await parseBody(response));
    return response.text();
  }

  exportUrl(sessionId: string, artifact: "weights.csv" | "balance.csv"): string {
    return `${this.base}/sessions/${sessionId}/export/${artifact}`;
  }
}
