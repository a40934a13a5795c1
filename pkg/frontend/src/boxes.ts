// Box-editor model: pure state, no DOM. The canvas layer calls into
// this and re-renders from `boxes()`; saving goes through `payload()`
// only when `canSave()` holds, mirroring the server's validation.

import type { QuestionRegion } from "./api.js";

export interface PageSize {
  width: number;
  height: number;
}

export interface OverlapViolation {
  a: string;
  b: string;
  page_index: number;
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

export class BoxEditor {
  private regions: QuestionRegion[];
  private baseVersion: number;
  dirty = false;
  // Set when a save bounced off a version conflict; stays until the
  // editor is reloaded from the server's current state.
  conflict = false;

  constructor(
    regions: QuestionRegion[],
    private pageDims: Record<number, PageSize>,
    baseVersion: number,
  ) {
    this.regions = regions.map((r) => ({ ...r }));
    this.baseVersion = baseVersion;
  }

  boxes(): QuestionRegion[] {
    return this.regions.map((r) => ({ ...r }));
  }

  version(): number {
    return this.baseVersion;
  }

  private find(questionId: string): QuestionRegion {
    const region = this.regions.find((r) => r.question_id === questionId);
    if (!region) throw new Error(`unknown question ${questionId}`);
    return region;
  }

  private page(pageIndex: number): PageSize {
    const dims = this.pageDims[pageIndex];
    if (!dims) throw new Error(`unknown page ${pageIndex}`);
    return dims;
  }

  /** Move a box, clamped so it never leaves its page. */
  moveBox(questionId: string, dx: number, dy: number): void {
    const region = this.find(questionId);
    const { width, height } = this.page(region.page_index);
    const w = region.x1 - region.x0;
    const h = region.y1 - region.y0;
    region.x0 = clamp(region.x0 + dx, 0, width - w);
    region.y0 = clamp(region.y0 + dy, 0, height - h);
    region.x1 = region.x0 + w;
    region.y1 = region.y0 + h;
    this.dirty = true;
  }

  /** Resize by edge deltas; the box keeps at least 1px each way. */
  resizeBox(
    questionId: string,
    edges: { x0?: number; y0?: number; x1?: number; y1?: number },
  ): void {
    const region = this.find(questionId);
    const { width, height } = this.page(region.page_index);
    const next = {
      x0: clamp(region.x0 + (edges.x0 ?? 0), 0, width),
      y0: clamp(region.y0 + (edges.y0 ?? 0), 0, height),
      x1: clamp(region.x1 + (edges.x1 ?? 0), 0, width),
      y1: clamp(region.y1 + (edges.y1 ?? 0), 0, height),
    };
    if (next.x1 <= next.x0) next.x1 = next.x0 + 1;
    if (next.y1 <= next.y0) next.y1 = next.y0 + 1;
    if (next.x1 > width || next.y1 > height) return;
    Object.assign(region, next);
    this.dirty = true;
  }

  setType(questionId: string, questionType: string): void {
    this.find(questionId).question_type = questionType;
    this.dirty = true;
  }

  /** Delete and renumber: the order preview stays contiguous from 1. */
  removeBox(questionId: string): void {
    this.find(questionId);
    this.regions = this.regions.filter((r) => r.question_id !== questionId);
    this.renumber();
    this.dirty = true;
  }

  addBox(region: QuestionRegion): void {
    if (this.regions.some((r) => r.question_id === region.question_id)) {
      throw new Error(`duplicate question ${region.question_id}`);
    }
    const { width, height } = this.page(region.page_index);
    const added = { ...region };
    added.x0 = clamp(added.x0, 0, width - 1);
    added.y0 = clamp(added.y0, 0, height - 1);
    added.x1 = clamp(added.x1, added.x0 + 1, width);
    added.y1 = clamp(added.y1, added.y0 + 1, height);
    this.regions.push(added);
    this.regions.sort((a, b) => a.order - b.order);
    this.renumber();
    this.dirty = true;
  }

  private renumber(): void {
    this.regions.sort((a, b) => a.order - b.order);
    this.regions.forEach((r, i) => {
      r.order = i + 1;
    });
  }

  /** Every pair of same-page boxes that intersect with positive area. */
  overlaps(): OverlapViolation[] {
    const found: OverlapViolation[] = [];
    for (let i = 0; i < this.regions.length; i++) {
      for (let j = i + 1; j < this.regions.length; j++) {
        const a = this.regions[i];
        const b = this.regions[j];
        if (a.page_index !== b.page_index) continue;
        const xOverlap = Math.min(a.x1, b.x1) > Math.max(a.x0, b.x0);
        const yOverlap = Math.min(a.y1, b.y1) > Math.max(a.y0, b.y0);
        if (xOverlap && yOverlap) {
          found.push({
            a: a.question_id,
            b: b.question_id,
            page_index: a.page_index,
          });
        }
      }
    }
    return found;
  }

  canSave(): boolean {
    return !this.conflict && this.overlaps().length === 0;
  }

  /** Regions in contiguous order, ready for PUT. Throws when blocked. */
  payload(): { base_version: number; questions: QuestionRegion[] } {
    if (this.conflict) {
      throw new Error("unresolved server conflict; reload before saving");
    }
    const violations = this.overlaps();
    if (violations.length > 0) {
      const v = violations[0];
      throw new Error(
        `regions ${v.a} and ${v.b} overlap on page ${v.page_index}`,
      );
    }
    this.renumber();
    return { base_version: this.baseVersion, questions: this.boxes() };
  }

  /** Call after a successful save so the editor tracks the new version. */
  saved(newVersion: number): void {
    this.baseVersion = newVersion;
    this.dirty = false;
  }

  markConflict(): void {
    this.conflict = true;
  }

  /** Reload from the server's current truth; clears the conflict. */
  reload(regions: QuestionRegion[], version: number): void {
    this.regions = regions.map((r) => ({ ...r }));
    this.baseVersion = version;
    this.conflict = false;
    this.dirty = false;
  }
}
