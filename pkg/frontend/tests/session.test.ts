import { describe, expect, it } from 'vitest';

import type { ApiClient } from '../src/api.js';
import { ReviewSession, SessionError } from '../src/session.js';
import type { TaskView, VerdictPayload } from '../src/types.js';

function taskWith(candidates: number): TaskView {
  return {
    image_id: 'img000007',
    state: 'leased',
    candidates: Array.from({ length: candidates }, (_, i) => ({
      candidate_id: `img000007/c${i}`,
      class: 'deer' as const,
      bbox: [100 + 50 * i, 80, 40, 30] as [number, number, number, number],
      confidence: 0.9 - i * 0.1,
    })),
    completed_reviews: [],
    lease: { observer_id: 'ana', expires_at: 1e12 },
    adjudicated: false,
    file: 'images/img000007.png',
  };
}

interface MockApi {
  submitted: { imageId: string; verdict: VerdictPayload }[];
  failuresLeft: number;
}

function mockApi(task: TaskView | null, failures = 0): ApiClient & MockApi {
  const api = {
    submitted: [] as { imageId: string; verdict: VerdictPayload }[],
    failuresLeft: failures,
    async leaseNext() {
      return task;
    },
    async getTask() {
      return task!;
    },
    async submitVerdict(imageId: string, verdict: VerdictPayload) {
      if (api.failuresLeft > 0) {
        api.failuresLeft -= 1;
        throw new TypeError('fetch failed'); // network-style failure
      }
      api.submitted.push({ imageId, verdict });
      return { ...task!, state: 'single_reviewed' };
    },
    async stats() {
      return {} as never;
    },
    imageUrl: (id: string) => `/api/images/${id}/file`,
    baseUrl: 'mock://',
  };
  return api as unknown as ApiClient & MockApi;
}

const SIZE = { w: 1296, h: 864 };

describe('review session invariants', () => {
  it('cannot submit with undecided candidates', async () => {
    const session = new ReviewSession(mockApi(taskWith(2)), 'ana', SIZE);
    await session.next();
    expect(session.canSubmit).toBe(false);
    expect(() => session.buildVerdict(false)).toThrow(SessionError);
    session.confirmCandidate('img000007/c0');
    expect(session.canSubmit).toBe(false); // c1 still undecided
    session.rejectCandidate('img000007/c1');
    expect(session.canSubmit).toBe(true);
  });

  it('declare-empty is blocked while a candidate is unresolved', async () => {
    const session = new ReviewSession(mockApi(taskWith(1)), 'ana', SIZE);
    await session.next();
    expect(session.canDeclareEmpty).toBe(false);
    session.rejectCandidate('img000007/c0');
    // a rejection is a box decision: the verdict carries it, so the image
    // is not "declared empty" in the wire sense
    expect(session.canDeclareEmpty).toBe(false);
    const verdict = session.buildVerdict(false);
    expect(verdict.declared_empty).toBe(false);
    expect(verdict.boxes).toHaveLength(1);
    expect(verdict.boxes[0]!.action).toBe('reject_model');
  });

  it('builds empty verdicts only without any box decisions', async () => {
    const session = new ReviewSession(mockApi(taskWith(0)), 'ana', SIZE);
    await session.next();
    expect(session.canDeclareEmpty).toBe(true);
    const verdict = session.buildVerdict(true);
    expect(verdict.declared_empty).toBe(true);
    expect(verdict.boxes).toHaveLength(0);
  });

  it('scan gate holds empty declarations when enforced', async () => {
    const session = new ReviewSession(mockApi(taskWith(0)), 'ana', SIZE, {
      enforceScan: true,
    });
    await session.next();
    expect(session.canDeclareEmpty).toBe(false);
    session.scanComplete = true;
    expect(session.canDeclareEmpty).toBe(true);
    expect(session.emptyIsDefault).toBe(true);
  });

  it('confirm and manual boxes land in the verdict with right actions', async () => {
    const session = new ReviewSession(mockApi(taskWith(1)), 'ana', SIZE);
    await session.next();
    session.confirmCandidate('img000007/c0');
    session.addManualBox({ x: 600, y: 400, w: 42, h: 31 });
    const verdict = session.buildVerdict(false);
    expect(verdict.boxes).toHaveLength(2);
    expect(verdict.boxes[0]).toMatchObject({
      action: 'confirm_model',
      candidate_id: 'img000007/c0',
    });
    expect(verdict.boxes[1]).toMatchObject({
      action: 'add_manual',
      bbox: [600, 400, 42, 31],
    });
  });

  it('rejects manual boxes outside the image', async () => {
    const session = new ReviewSession(mockApi(taskWith(0)), 'ana', SIZE);
    await session.next();
    expect(() => session.addManualBox({ x: 1290, y: 10, w: 20, h: 20 })).toThrow(
      SessionError,
    );
    expect(() => session.addManualBox({ x: 10, y: 10, w: 0, h: 5 })).toThrow(
      SessionError,
    );
  });

  it('retains and retries the verdict across network failures', async () => {
    const api = mockApi(taskWith(0), 1);
    const session = new ReviewSession(api, 'ana', SIZE, {
      maxRetries: 2,
      retryDelayMs: 1,
    });
    await session.next();
    const view = await session.submit(true);
    expect(view.state).toBe('single_reviewed');
    expect(api.submitted).toHaveLength(1);
    expect(session.pendingVerdict).toBeNull();
  });

  it('gives up after exhausting retries but keeps the verdict', async () => {
    const api = mockApi(taskWith(0), 99);
    const session = new ReviewSession(api, 'ana', SIZE, {
      maxRetries: 1,
      retryDelayMs: 1,
    });
    await session.next();
    await expect(session.submit(true)).rejects.toThrow(/verdict retained/);
    expect(session.pendingVerdict).not.toBeNull();
    api.failuresLeft = 0;
    await session.submit(true); // retry consumes the pending verdict
    expect(api.submitted).toHaveLength(1);
  });
});
