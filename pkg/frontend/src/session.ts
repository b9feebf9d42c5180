// The review session state machine: one active task, per-joint error
// selections, difficulty, submission with retries. Pure of DOM concerns so
// a scripted session can drive it end to end.

import { ReviewApi, ApiError } from "./api.js";
import { flipPartner, type ViewTransform } from "./overlay.js";
import type {
  Difficulty,
  ErrorClass,
  ReviewTask,
  VerdictPayload,
} from "./types.js";

export interface OverlayState {
  task: ReviewTask;
  /** joint index -> selected error classes */
  selections: Map<number, Set<ErrorClass>>;
  difficulty: Difficulty | null;
  freeText: string;
  selectedJoint: number;
  view: ViewTransform | null;
}

export type SessionStatus = "idle" | "reviewing" | "done";

const MAX_RETRIES = 5;

export class ReviewSession {
  status: SessionStatus = "idle";
  state: OverlayState | null = null;
  /** verdicts acknowledged by the server, in submission order */
  submitted: VerdictPayload[] = [];
  lastError: string | null = null;

  constructor(
    private api: ReviewApi,
    public annotator: string,
    private sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
  ) {}

  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    const next = await this.api.nextTask(this.annotator);
    if (next.done || !next.task) {
      this.status = "done";
      this.state = null;
      return;
    }
    this.status = "reviewing";
    this.state = {
      task: next.task,
      selections: new Map(),
      difficulty: null,
      freeText: "",
      selectedJoint: next.task.overlay.flagged_joints[0] ?? 0,
      view: null,
    };
  }

  get task(): ReviewTask | null {
    return this.state?.task ?? null;
  }

  selectJoint(joint: number): void {
    const s = this.mustState();
    const n = s.task.overlay.keypoints.length;
    s.selectedJoint = ((joint % n) + n) % n;
  }

  cycleJoint(step: number): void {
    const s = this.mustState();
    this.selectJoint(s.selectedJoint + step);
  }

  /**
   * Toggle an error class on a joint. A left/right swap always applies to
   * both joints of the flip pair: the error is about the pair assignment.
   */
  toggleClass(joint: number, cls: ErrorClass): void {
    const s = this.mustState();
    const targets = [joint];
    if (cls === "left_right_swap") {
      const partner = flipPartner(s.task.overlay, joint);
      if (partner !== null) targets.push(partner);
    }
    const enable = !s.selections.get(joint)?.has(cls);
    for (const j of targets) {
      const set = s.selections.get(j) ?? new Set<ErrorClass>();
      if (enable) set.add(cls);
      else set.delete(cls);
      if (set.size) s.selections.set(j, set);
      else s.selections.delete(j);
    }
  }

  toggleOnSelected(cls: ErrorClass): void {
    this.toggleClass(this.mustState().selectedJoint, cls);
  }

  setDifficulty(d: Difficulty): void {
    this.mustState().difficulty = d;
  }

  setFreeText(text: string): void {
    this.mustState().freeText = text;
  }

  get canSubmit(): boolean {
    return this.state?.difficulty != null;
  }

  /**
   * One pose-level verdict (difficulty, free text) plus one verdict per
   * joint with selections. Ids derive from (task, annotator, joint) so a
   * retry after a lost response is idempotent at the server.
   */
  buildVerdicts(): VerdictPayload[] {
    const s = this.mustState();
    if (!s.difficulty) throw new Error("difficulty must be chosen before submitting");
    const base = `${s.task.task_id}.${this.annotator}`;
    const batch: VerdictPayload[] = [
      {
        verdict_id: `${base}.pose`,
        annotator_id: this.annotator,
        pose_id: s.task.pose_id,
        joint_index: null,
        error_classes: [],
        difficulty: s.difficulty,
        free_text: s.freeText,
        source: s.task.source,
      },
    ];
    const joints = [...s.selections.keys()].sort((a, b) => a - b);
    for (const joint of joints) {
      batch.push({
        verdict_id: `${base}.j${joint}`,
        annotator_id: this.annotator,
        pose_id: s.task.pose_id,
        joint_index: joint,
        error_classes: [...s.selections.get(joint)!].sort(),
        difficulty: s.difficulty,
        free_text: s.freeText,
        source: s.task.source,
      });
    }
    return batch;
  }

  /**
   * Submit and advance. Transient network failures retry with the same
   * verdict ids (exactly-once at the server); service rejections surface
   * in lastError and keep the task open.
   */
  async submit(): Promise<boolean> {
    const batch = this.buildVerdicts();
    this.lastError = null;
    for (let attempt = 0; ; attempt++) {
      try {
        await this.api.submitVerdicts(batch);
        break;
      } catch (err) {
        if (err instanceof ApiError) {
          this.lastError = err.message;
          return false;
        }
        if (attempt >= MAX_RETRIES) {
          this.lastError = `submit failed after ${attempt + 1} attempts`;
          return false;
        }
        await this.sleep(Math.min(2000, 50 * 2 ** attempt));
      }
    }
    this.submitted.push(...batch);
    await this.advance();
    return true;
  }

  private mustState(): OverlayState {
    if (!this.state) throw new Error("no active task");
    return this.state;
  }
}
