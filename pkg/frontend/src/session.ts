/**
 * Observer session state machine.
 *
 * One task at a time: lease, decide every model candidate
 * (confirm/reject), draw boxes for animals the model missed, or declare
 * the image empty; submit; repeat. The session can only construct
 * verdicts the service will accept: declared-empty excludes box
 * decisions, every candidate reference is real, and empty declarations
 * are blocked while candidates are undecided.
 */

import { ApiClient, ApiError } from './api.js';
import type {
  AnimalClass,
  Box,
  BoxDecisionPayload,
  TaskView,
  VerdictPayload,
} from './types.js';

export type CandidateDecision = 'confirm' | 'reject';

export interface ManualBox {
  box: Box;
  cls: AnimalClass;
}

export interface SessionOptions {
  /** require a completed scan sweep before declare-empty is allowed */
  enforceScan?: boolean;
  /** submit retry attempts on network failure */
  maxRetries?: number;
  retryDelayMs?: number;
  now?: () => number;
}

export class SessionError extends Error {}

export class ReviewSession {
  task: TaskView | null = null;
  decisions = new Map<string, CandidateDecision>();
  manualBoxes: ManualBox[] = [];
  scanComplete = false;
  /** verdict kept after a failed submit so it can be retried */
  pendingVerdict: VerdictPayload | null = null;
  private taskOpenedAt = 0;
  private verdictCounter = 0;

  constructor(
    readonly api: ApiClient,
    readonly observerId: string,
    readonly imageSize: { w: number; h: number },
    readonly options: SessionOptions = {},
  ) {}

  private now(): number {
    return this.options.now ? this.options.now() : Date.now() / 1000;
  }

  /** Lease the next task and reset per-image state. Null = queue drained. */
  async next(): Promise<TaskView | null> {
    this.task = await this.api.leaseNext(this.observerId);
    this.decisions.clear();
    this.manualBoxes = [];
    this.scanComplete = false;
    this.pendingVerdict = null;
    this.taskOpenedAt = this.now();
    return this.task;
  }

  private requireTask(): TaskView {
    if (!this.task) throw new SessionError('no task leased');
    return this.task;
  }

  decideCandidate(candidateId: string, decision: CandidateDecision): void {
    const task = this.requireTask();
    if (!task.candidates.some((c) => c.candidate_id === candidateId)) {
      throw new SessionError(`unknown candidate ${candidateId}`);
    }
    this.decisions.set(candidateId, decision);
  }

  confirmCandidate(candidateId: string): void {
    this.decideCandidate(candidateId, 'confirm');
  }

  rejectCandidate(candidateId: string): void {
    this.decideCandidate(candidateId, 'reject');
  }

  addManualBox(box: Box, cls: AnimalClass = 'deer'): void {
    this.requireTask();
    if (box.w <= 0 || box.h <= 0) throw new SessionError('box has no area');
    if (
      box.x < 0 ||
      box.y < 0 ||
      box.x + box.w > this.imageSize.w ||
      box.y + box.h > this.imageSize.h
    ) {
      throw new SessionError('box extends past the image');
    }
    this.manualBoxes.push({ box, cls });
  }

  removeLastManualBox(): void {
    this.manualBoxes.pop();
  }

  get unresolvedCandidates(): string[] {
    const task = this.requireTask();
    return task.candidates
      .map((c) => c.candidate_id)
      .filter((id) => !this.decisions.has(id));
  }

  get decisionCount(): number {
    return this.decisions.size + this.manualBoxes.length;
  }

  /**
   * Declared-empty is a verdict with no box decisions at all, so it only
   * exists for images without model candidates: rejecting a candidate is
   * itself a recorded decision and goes out through the normal submit
   * path. The scan gate additionally holds it back when enforced.
   */
  get canDeclareEmpty(): boolean {
    if (!this.task) return false;
    if (this.task.candidates.length > 0) return false;
    if (this.manualBoxes.length > 0) return false;
    if (this.options.enforceScan && !this.scanComplete) return false;
    return true;
  }

  /** Empty is only the suggested default once the sweep visited every cell. */
  get emptyIsDefault(): boolean {
    return this.canDeclareEmpty && this.scanComplete;
  }

  get canSubmit(): boolean {
    if (!this.task) return false;
    if (this.unresolvedCandidates.length > 0) return false;
    return this.decisionCount > 0 || this.canDeclareEmpty;
  }

  buildVerdict(declareEmpty = false): VerdictPayload {
    const task = this.requireTask();
    if (this.unresolvedCandidates.length > 0) {
      throw new SessionError(
        `undecided candidates: ${this.unresolvedCandidates.join(', ')}`,
      );
    }
    const boxes: BoxDecisionPayload[] = [];
    for (const cand of task.candidates) {
      const decision = this.decisions.get(cand.candidate_id);
      boxes.push({
        bbox: cand.bbox,
        class: cand.class,
        action: decision === 'confirm' ? 'confirm_model' : 'reject_model',
        candidate_id: cand.candidate_id,
      });
    }
    for (const manual of this.manualBoxes) {
      boxes.push({
        bbox: [manual.box.x, manual.box.y, manual.box.w, manual.box.h],
        class: manual.cls,
        action: 'add_manual',
      });
    }
    if (declareEmpty) {
      if (!this.canDeclareEmpty || boxes.length > 0) {
        throw new SessionError('cannot declare empty: boxes or candidates pending');
      }
    } else if (boxes.length === 0) {
      throw new SessionError('nothing decided: mark boxes or declare empty');
    }
    this.verdictCounter += 1;
    return {
      observer_id: this.observerId,
      verdict_id: `${task.image_id}/${this.observerId}/${this.verdictCounter}`,
      boxes,
      declared_empty: declareEmpty,
      duration_s: Math.max(0, this.now() - this.taskOpenedAt),
      submitted_at: this.now(),
    };
  }

  /**
   * Submit, retrying transient network failures; the verdict survives in
   * pendingVerdict until the service acknowledges it.
   */
  async submit(declareEmpty = false): Promise<TaskView> {
    const task = this.requireTask();
    const verdict = this.pendingVerdict ?? this.buildVerdict(declareEmpty);
    this.pendingVerdict = verdict;
    const attempts = (this.options.maxRetries ?? 2) + 1;
    let lastError: unknown;
    for (let attempt = 0; attempt < attempts; attempt++) {
      if (attempt > 0) {
        await new Promise((r) => setTimeout(r, this.options.retryDelayMs ?? 500));
      }
      try {
        const view = await this.api.submitVerdict(task.image_id, verdict);
        this.pendingVerdict = null;
        this.task = null;
        return view;
      } catch (err) {
        if (err instanceof ApiError) throw err; // service rejected: no retry
        lastError = err; // network failure: keep the verdict, retry
      }
    }
    throw new SessionError(
      `submit failed after ${attempts} attempts; verdict retained: ${lastError}`,
    );
  }
}
