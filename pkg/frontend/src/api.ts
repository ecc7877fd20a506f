/** Thin typed client over the service HTTP API. */

import type { AnnotationResult, Label, PendingResponse } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly code: number) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let message = response.statusText || "request failed";
  try {
    const body = (await response.json()) as { error?: string };
    if (body.error) message = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(message, response.status);
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async pending(limit?: number): Promise<PendingResponse> {
    const query = limit === undefined ? "" : `?limit=${limit}`;
    const response = await this.fetchFn(this.url(`/annotations/pending${query}`));
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as PendingResponse;
  }

  async submitLabel(
    pairId: string,
    label: Label,
    annotatorId: string,
  ): Promise<AnnotationResult> {
    const response = await this.fetchFn(this.url("/annotations"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, label, annotator_id: annotatorId }),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as AnnotationResult;
  }

  async health(): Promise<{ status: string; generation: number }> {
    const response = await this.fetchFn(this.url("/health"));
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as { status: string; generation: number };
  }

  async suggest(
    imageId: string,
    k: number,
  ): Promise<{ generation: number; suggestions: { id: string; tokens: number[]; score: number }[] }> {
    const response = await this.fetchFn(this.url("/suggest"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image_id: imageId, k }),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as {
      generation: number;
      suggestions: { id: string; tokens: number[]; score: number }[];
    };
  }
}
