/** Wire types mirroring the review service JSON API. */

export type AnimalClass = 'deer' | 'cow' | 'other_animal';

export type BoxAction = 'confirm_model' | 'reject_model' | 'add_manual';

/** Pixel-space bounding box: x, y of the top-left corner plus size. */
export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface Candidate {
  candidate_id: string;
  class: AnimalClass;
  bbox: [number, number, number, number];
  confidence: number;
}

export interface TaskView {
  image_id: string;
  state: string;
  candidates: Candidate[];
  completed_reviews: { observer_id: string; verdict_id: string }[];
  lease: { observer_id: string; expires_at: number } | null;
  adjudicated: boolean;
  file: string | null;
  image_url?: string;
}

export interface BoxDecisionPayload {
  bbox: [number, number, number, number];
  class: AnimalClass;
  action: BoxAction;
  candidate_id?: string | null;
}

export interface VerdictPayload {
  observer_id: string;
  verdict_id: string;
  boxes: BoxDecisionPayload[];
  declared_empty: boolean;
  duration_s: number;
  submitted_at: number;
}

export interface Stats {
  queue_depths: Record<string, number>;
  tasks: number;
  events: number;
  agreement_rate: number | null;
  per_observer: Record<string, { verdicts: number; total_duration_s: number }>;
}
