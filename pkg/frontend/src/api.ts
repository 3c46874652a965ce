/** Minimal fetch client for the review service HTTP API. */

import type { Stats, TaskView, VerdictPayload } from './types.js';

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function raise(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (body && typeof body.detail === 'string') detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  /** Lease the next reviewable task; null when the queue is drained. */
  async leaseNext(observerId: string): Promise<TaskView | null> {
    const res = await fetch(
      this.url(`/api/tasks/next?observer=${encodeURIComponent(observerId)}`),
    );
    if (res.status === 204) return null;
    if (!res.ok) await raise(res);
    return (await res.json()) as TaskView;
  }

  async getTask(imageId: string): Promise<TaskView> {
    const res = await fetch(this.url(`/api/tasks/${encodeURIComponent(imageId)}`));
    if (!res.ok) await raise(res);
    return (await res.json()) as TaskView;
  }

  async submitVerdict(imageId: string, verdict: VerdictPayload): Promise<TaskView> {
    const res = await fetch(
      this.url(`/api/tasks/${encodeURIComponent(imageId)}/verdict`),
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(verdict),
      },
    );
    if (!res.ok) await raise(res);
    return (await res.json()) as TaskView;
  }

  async stats(): Promise<Stats> {
    const res = await fetch(this.url('/api/stats'));
    if (!res.ok) await raise(res);
    return (await res.json()) as Stats;
  }

  imageUrl(imageId: string): string {
    return this.url(`/api/images/${encodeURIComponent(imageId)}/file`);
  }
}
