// Grader session state machine. One response is on screen at a time;
// the next serve is only requested after the current grade lands, so
// the server's serve timestamps always describe real viewing time.
//
// The session renders from plain objects (renderModel) and records
// every URL it asks for, which is what the contract tests audit: no
// timing field is ever requested or displayed.

import { Client, ServedResponse } from "./api.js";

export interface ResponseView {
  kind: "response";
  bundle_id: string;
  question_id: string;
  crop_url: string;
  whole_page_url: string;
  whole_page_open: boolean;
  rubric: string;
  max_score: number;
  score_input: string;
  error: string | null;
  graded_count: number;
}

export interface IdleView {
  kind: "idle" | "loading" | "done";
  graded_count: number;
}

export type ViewModel = ResponseView | IdleView;

export class GradingSession {
  private current: ServedResponse | null = null;
  private wholePageOpen = false;
  private scoreInput = "";
  private error: string | null = null;
  private submitting = false;
  private gradedCount = 0;
  private finished = false;
  private loading = false;
  /** Every URL this session requested, in order, for auditing. */
  readonly requestedUrls: string[] = [];

  constructor(
    private client: Client,
    private examId: string,
    private questionId: string,
  ) {}

  /**
   * Fetch the next submission. Never call while a response is still on
   * screen: prefetching would start the server's clock early.
   */
  async advance(): Promise<ViewModel> {
    if (this.current !== null) {
      throw new Error("a response is still being graded; submit it first");
    }
    if (this.finished) return this.renderModel();
    this.loading = true;
    const next = await this.client.nextSubmission(this.examId, this.questionId);
    this.requestedUrls.push(
      `/exams/${this.examId}/next?question=${this.questionId}`,
    );
    this.loading = false;
    if (next === null) {
      this.finished = true;
    } else {
      this.current = next;
      this.requestedUrls.push(next.crop_url);
      this.wholePageOpen = false;
      this.scoreInput = "";
      this.error = null;
    }
    return this.renderModel();
  }

  toggleWholePage(): ViewModel {
    if (this.current === null) return this.renderModel();
    this.wholePageOpen = !this.wholePageOpen;
    if (this.wholePageOpen) {
      this.requestedUrls.push(this.current.whole_page_url);
    }
    return this.renderModel();
  }

  setScore(text: string): ViewModel {
    this.scoreInput = text;
    this.error = null;
    return this.renderModel();
  }

  /** Client-side bound, same rule the server enforces. */
  scoreValid(): boolean {
    if (this.current === null) return false;
    const value = Number(this.scoreInput);
    return (
      this.scoreInput.trim() !== "" &&
      Number.isFinite(value) &&
      value >= 0 &&
      value <= this.current.max_score
    );
  }

  /**
   * Submit the current score and advance. At most one grade is issued
   * per served response: re-entry while a submit is in flight throws,
   * and the client's retry path recovers a lost response without
   * posting twice.
   */
  async submit(): Promise<ViewModel> {
    if (this.current === null) {
      throw new Error("nothing to grade");
    }
    if (this.submitting) {
      throw new Error("a submit is already in flight");
    }
    if (!this.scoreValid()) {
      this.error = `score must be between 0 and ${this.current.max_score}`;
      return this.renderModel();
    }
    this.submitting = true;
    try {
      await this.client.submitGrade(this.examId, {
        bundle_id: this.current.bundle_id,
        question_id: this.current.question_id,
        score: Number(this.scoreInput),
      });
      this.gradedCount += 1;
      this.current = null;
    } finally {
      this.submitting = false;
    }
    return this.advance();
  }

  /** Everything the view is allowed to show. */
  renderModel(): ViewModel {
    if (this.current !== null) {
      return {
        kind: "response",
        bundle_id: this.current.bundle_id,
        question_id: this.current.question_id,
        crop_url: this.current.crop_url,
        whole_page_url: this.current.whole_page_url,
        whole_page_open: this.wholePageOpen,
        rubric: this.current.rubric,
        max_score: this.current.max_score,
        score_input: this.scoreInput,
        error: this.error,
        graded_count: this.gradedCount,
      };
    }
    return {
      kind: this.finished ? "done" : this.loading ? "loading" : "idle",
      graded_count: this.gradedCount,
    };
  }
}
