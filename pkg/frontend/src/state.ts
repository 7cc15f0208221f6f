/**
 * DOM-free controller for one annotation session.
 *
 * Holds the current batch queue, enforces that a submission always reflects
 * an explicit selection, de-duplicates in-flight answers, and polls the
 * session status while the model retrains. Rendering is delegated to an
 * onChange callback so the logic is testable without a browser.
 */
import {
  AnnotationApi,
  ApiError,
  Ordering,
  PendingQuery,
} from "./api.js";

export type FlowView =
  | { kind: "connecting" }
  | { kind: "unreachable"; message: string; retryInMs: number }
  | {
      kind: "question";
      query: PendingQuery;
      position: number;
      total: number;
      round: number;
      selected: Ordering | null;
      notice: string | null;
      submitting: boolean;
    }
  | { kind: "training"; round: number; curve: number[]; labeled: number }
  | { kind: "finished"; curve: number[]; labeled: number };

export interface FlowOptions {
  onChange: (view: FlowView) => void;
  pollIntervalMs?: number;
  retryBackoffMs?: number;
}

export class AnnotationFlow {
  private queue: PendingQuery[] = [];
  private round = 0;
  private total = 0;
  private position = 0;
  private selected: Ordering | null = null;
  private notice: string | null = null;
  private submitting = false;
  private stopped = false;
  private lastCurve: number[] = [];
  private lastLabeled = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private readonly pollIntervalMs: number;
  private readonly retryBackoffMs: number;
  private readonly onChange: (view: FlowView) => void;

  constructor(
    private readonly api: AnnotationApi,
    private readonly sessionId: string,
    options: FlowOptions,
  ) {
    this.onChange = options.onChange;
    this.pollIntervalMs = options.pollIntervalMs ?? 1000;
    this.retryBackoffMs = options.retryBackoffMs ?? 2000;
  }

  async start(): Promise<void> {
    this.stopped = false;
    this.onChange({ kind: "connecting" });
    await this.refresh();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }

  /** Record the user's choice for the current query; enables submission. */
  select(ordering: Ordering): void {
    if (this.queue.length === 0 || this.submitting) return;
    this.selected = ordering;
    this.notice = null;
    this.emitQuestion();
  }

  /** Send the selected ordering. No selection or an in-flight request is a no-op. */
  async submit(): Promise<void> {
    const query = this.queue[0];
    if (!query || this.selected === null || this.submitting) return;
    const ordering = this.selected;
    this.submitting = true;
    this.emitQuestion();
    try {
      await this.api.postAnswer(this.sessionId, query.query_id, ordering);
      this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // Label already recorded (e.g. a retried request): move on silently.
        this.advance();
      } else if (err instanceof ApiError && err.status === 422) {
        this.submitting = false;
        this.notice = err.message;
        this.emitQuestion();
      } else if (err instanceof ApiError && err.status === 404) {
        // The round moved on underneath us; resynchronize.
        this.submitting = false;
        await this.refresh();
      } else {
        this.submitting = false;
        this.scheduleRetry(err);
      }
    }
  }

  handleKey(key: string): void {
    if (key === "ArrowLeft") this.select("j");
    else if (key === "ArrowRight") this.select("k");
    else if (key === "Enter") void this.submit();
  }

  private emitQuestion(): void {
    const query = this.queue[0];
    if (!query) return;
    this.onChange({
      kind: "question",
      query,
      position: this.position,
      total: this.total,
      round: this.round,
      selected: this.selected,
      notice: this.notice,
      submitting: this.submitting,
    });
  }

  private advance(): void {
    this.queue.shift();
    this.selected = null;
    this.notice = null;
    this.submitting = false;
    if (this.queue.length === 0) {
      // Emit the transition immediately; the poll below refines it once the
      // service reports real numbers.
      this.onChange({
        kind: "training",
        round: this.round,
        curve: this.lastCurve,
        labeled: this.lastLabeled,
      });
      void this.pollUntilReady();
    } else {
      this.position += 1;
      this.emitQuestion();
    }
  }

  private async refresh(): Promise<void> {
    if (this.stopped) return;
    try {
      const pending = await this.api.getPending(this.sessionId);
      if (pending.status === "finished") {
        await this.showFinal();
        return;
      }
      if (pending.status === "training" || pending.queries.length === 0) {
        await this.pollUntilReady();
        return;
      }
      this.queue = [...pending.queries];
      this.round = pending.round;
      this.total = pending.queries.length;
      this.position = 1;
      this.selected = null;
      this.notice = null;
      this.submitting = false;
      this.emitQuestion();
    } catch (err) {
      this.scheduleRetry(err);
    }
  }

  private async pollUntilReady(): Promise<void> {
    if (this.stopped) return;
    try {
      const status = await this.api.getStatus(this.sessionId);
      this.lastCurve = status.tga_curve;
      this.lastLabeled = status.labeled_count;
      if (status.status === "finished") {
        this.onChange({
          kind: "finished",
          curve: status.tga_curve,
          labeled: status.labeled_count,
        });
        return;
      }
      if (status.status === "awaiting_labels" && status.pending_count > 0) {
        await this.refresh();
        return;
      }
      this.onChange({
        kind: "training",
        round: status.round,
        curve: status.tga_curve,
        labeled: status.labeled_count,
      });
      this.timer = setTimeout(() => void this.pollUntilReady(), this.pollIntervalMs);
    } catch (err) {
      this.scheduleRetry(err);
    }
  }

  private async showFinal(): Promise<void> {
    const status = await this.api.getStatus(this.sessionId);
    this.onChange({
      kind: "finished",
      curve: status.tga_curve,
      labeled: status.labeled_count,
    });
  }

  private scheduleRetry(err: unknown): void {
    if (this.stopped) return;
    const message = err instanceof Error ? err.message : String(err);
    this.onChange({
      kind: "unreachable",
      message,
      retryInMs: this.retryBackoffMs,
    });
    this.timer = setTimeout(() => void this.refresh(), this.retryBackoffMs);
  }
}
