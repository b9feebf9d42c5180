// Thin client for the review service. The fetch function is injectable so
// tests can run against an in-memory server.

import type { NextTaskResponse, StoredVerdict, SubmitResult, VerdictPayload } from "./types.js";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ReviewApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail = (body as { detail?: string }).detail ?? response.statusText;
      throw new ApiError(response.status, detail);
    }
    return body;
  }

  async nextTask(annotator: string): Promise<NextTaskResponse> {
    const q = encodeURIComponent(annotator);
    return (await this.request(`/api/tasks/next?annotator=${q}`)) as NextTaskResponse;
  }

  async submitVerdicts(batch: VerdictPayload[]): Promise<SubmitResult> {
    return (await this.request("/api/verdicts", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(batch),
    })) as SubmitResult;
  }

  async exportVerdicts(filter?: { source?: string; annotator?: string }): Promise<StoredVerdict[]> {
    const params = new URLSearchParams();
    if (filter?.source) params.set("source", filter.source);
    if (filter?.annotator) params.set("annotator", filter.annotator);
    const suffix = params.size ? `?${params.toString()}` : "";
    return (await this.request(`/api/verdicts${suffix}`)) as StoredVerdict[];
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${encodeURIComponent(imageId)}`;
  }
}
