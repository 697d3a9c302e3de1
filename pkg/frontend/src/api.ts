/** Thin typed client over the annotation endpoints. */

import type { AnnotationRequest, NextPayload, SubmitResult } from "./types.js";
import { parseNextPayload, parseSubmitResult } from "./validate.js";

/** Server answered with a non-2xx status; not retryable as-is. */
export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

/** Request never reached the server (or the response never arrived). */
export class NetworkError extends Error {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function detail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    /* non-JSON error body; fall through */
  }
  return `server returned ${response.status}`;
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly baseUrl: string = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new NetworkError(`request to ${path} failed: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(await detail(response), response.status);
    }
    try {
      return await response.json();
    } catch (err) {
      throw new NetworkError(`bad response body from ${path}: ${String(err)}`);
    }
  }

  async nextItem(annotatorId: string): Promise<NextPayload> {
    const raw = await this.request(
      `/api/session/${encodeURIComponent(annotatorId)}/next`,
    );
    return parseNextPayload(raw);
  }

  async submit(req: AnnotationRequest): Promise<SubmitResult> {
    const raw = await this.request("/api/annotations", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    return parseSubmitResult(raw);
  }
}

/** Re-post the identical payload until the network cooperates.
 *
 * Only NetworkError is retried: the service deduplicates identical
 * submissions, so a lost acknowledgement is safe to replay. Genuine
 * server rejections (409 and friends) surface immediately.
 */
export async function submitWithRetry(
  client: ApiClient,
  req: AnnotationRequest,
  attempts = 4,
  delayMs = 500,
  sleep: (ms: number) => Promise<void> = (ms) =>
    new Promise((resolve) => setTimeout(resolve, ms)),
): Promise<SubmitResult> {
  let lastError: NetworkError | undefined;
  for (let attempt = 0; attempt < attempts; attempt++) {
    if (attempt > 0) await sleep(delayMs * attempt);
    try {
      return await client.submit(req);
    } catch (err) {
      if (!(err instanceof NetworkError)) throw err;
      lastError = err;
    }
  }
  throw lastError ?? new NetworkError("submit failed");
}
