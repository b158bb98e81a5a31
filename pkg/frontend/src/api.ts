// Thin fetch client for the service JSON API.  The console is served from
// the service's static route, so all paths are same-origin.

import type {
  CatalogListing,
  Confirmation,
  InferenceRequest,
  InferenceResponse,
} from "./types.js";

export interface Api {
  likelyDiagnoses(
    request: InferenceRequest,
    options?: { explain?: boolean; signal?: AbortSignal },
  ): Promise<InferenceResponse>;
  confirm(request: InferenceRequest, options?: { signal?: AbortSignal }): Promise<Confirmation[]>;
  catalog(): Promise<CatalogListing>;
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = await response.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      // keep the status code
    }
    throw new Error(`service error: ${detail}`);
  }
  return (await response.json()) as T;
}

export class HttpApi implements Api {
  constructor(private readonly base: string = "") {}

  async likelyDiagnoses(
    request: InferenceRequest,
    options: { explain?: boolean; signal?: AbortSignal } = {},
  ): Promise<InferenceResponse> {
    const query = options.explain ? "?explain=true" : "";
    const response = await fetch(`${this.base}/v1/likely-diagnoses${query}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
      signal: options.signal,
    });
    return parseOrThrow<InferenceResponse>(response);
  }

  async confirm(
    request: InferenceRequest,
    options: { signal?: AbortSignal } = {},
  ): Promise<Confirmation[]> {
    const response = await fetch(`${this.base}/v1/confirm`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
      signal: options.signal,
    });
    return parseOrThrow<Confirmation[]>(response);
  }

  async catalog(): Promise<CatalogListing> {
    const response = await fetch(`${this.base}/v1/catalog`);
    return parseOrThrow<CatalogListing>(response);
  }
}
