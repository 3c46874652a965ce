/**
 * Systematic-scan aid: the image is divided into viewport-sized cells and
 * the observer sweeps them left to right, top to bottom. Visitation is
 * tracked so declare-empty can be gated (advisory by default) on having
 * actually looked everywhere.
 */

import type { Box } from './types.js';

export class ScanGrid {
  readonly cols: number;
  readonly rows: number;
  private readonly visited: boolean[];

  constructor(
    readonly imageW: number,
    readonly imageH: number,
    cellW: number,
    cellH: number,
  ) {
    if (cellW <= 0 || cellH <= 0) throw new Error('scan cells must be positive');
    this.cols = Math.max(1, Math.ceil(imageW / cellW));
    this.rows = Math.max(1, Math.ceil(imageH / cellH));
    this.visited = new Array(this.cols * this.rows).fill(false);
  }

  private cellW(): number {
    return this.imageW / this.cols;
  }

  private cellH(): number {
    return this.imageH / this.rows;
  }

  /** Mark every cell fully contained in the visible image rect as visited. */
  visit(view: Box): void {
    const cw = this.cellW();
    const ch = this.cellH();
    const eps = 1e-6;
    const c0 = Math.max(0, Math.floor((view.x - eps) / cw + 1 - eps));
    const c1 = Math.min(this.cols - 1, Math.ceil((view.x + view.w + eps) / cw - 1 - eps));
    const r0 = Math.max(0, Math.floor((view.y - eps) / ch + 1 - eps));
    const r1 = Math.min(this.rows - 1, Math.ceil((view.y + view.h + eps) / ch - 1 - eps));
    for (let r = r0; r <= r1; r++) {
      for (let c = c0; c <= c1; c++) {
        const cellX = c * cw;
        const cellY = r * ch;
        if (
          cellX >= view.x - eps &&
          cellY >= view.y - eps &&
          cellX + cw <= view.x + view.w + eps &&
          cellY + ch <= view.y + view.h + eps
        ) {
          this.visited[r * this.cols + c] = true;
        }
      }
    }
  }

  isVisited(col: number, row: number): boolean {
    return this.visited[row * this.cols + col] ?? false;
  }

  get visitedCount(): number {
    return this.visited.filter(Boolean).length;
  }

  get complete(): boolean {
    return this.visitedCount === this.cols * this.rows;
  }

  /** The next unvisited cell in left-right, top-bottom order, if any. */
  nextCell(): { col: number; row: number } | null {
    const idx = this.visited.indexOf(false);
    if (idx === -1) return null;
    return { col: idx % this.cols, row: Math.floor(idx / this.cols) };
  }
}
