/** Typed client for the translation service HTTP API. */

export type Formality = "formal" | "informal" | "neutral";

export interface TranslateRequest {
  text: string;
  formality: Formality;
  beams?: number;
  max_length?: number;
}

export interface SpanMark {
  phrase: string;
  label: "formal" | "informal";
}

export interface TranslateResponse {
  translation: string;
  applied_formality: Formality;
  spans: SpanMark[];
  model_id: string;
}

export interface HealthResponse {
  status: string;
  model_id: string;
}

/** Non-2xx response from the service. */
export class ApiError extends Error {
  constructor(public readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

/** The service could not be reached at all. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

type FetchLike = typeof fetch;

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
  } catch {
    return response.statusText || `HTTP ${response.status}`;
  }
}

export class TranslationClient {
  private readonly fetchFn: FetchLike;

  constructor(private readonly baseUrl: string, fetchFn?: FetchLike) {
    this.fetchFn = fetchFn ?? fetch.bind(globalThis);
  }

  async translate(request: TranslateRequest): Promise<TranslateResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/translate`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      });
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as TranslateResponse;
  }

  async health(): Promise<HealthResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/health`);
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return (await response.json()) as HealthResponse;
  }
}
