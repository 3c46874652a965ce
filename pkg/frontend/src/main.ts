/**
 * Browser entry: canvas viewer with zoom/pan, candidate overlays,
 * keyboard-first review actions.
 *
 * Keys: c confirm candidate, x reject candidate, tab next candidate,
 * b box-drawing mode, u undo last box, e declare empty, enter submit,
 * n next scan cell, +/- zoom, arrows pan.
 */

import { ApiClient } from './api.js';
import { ScanGrid } from './scan.js';
import { ReviewSession } from './session.js';
import type { Candidate, TaskView } from './types.js';
import {
  Viewport,
  boxFromDrag,
  clampBoxToImage,
  imageToScreen,
  initialViewport,
  panBy,
  screenToImage,
  visibleRect,
  zoomAt,
} from './viewport.js';

interface UiState {
  viewport: Viewport;
  image: HTMLImageElement | null;
  candidateIndex: number;
  boxMode: boolean;
  dragStart: { x: number; y: number } | null;
  dragEnd: { x: number; y: number } | null;
  scan: ScanGrid | null;
  message: string;
}

function qs<T extends HTMLElement>(selector: string): T {
  const el = document.querySelector(selector);
  if (!el) throw new Error(`missing element ${selector}`);
  return el as T;
}

function setup(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get('api') ?? window.location.origin;
  const observer = params.get('observer') ?? '';
  if (!observer) {
    document.body.innerHTML =
      '<p style="margin:2em;font-family:sans-serif">Add ?observer=YOUR_ID ' +
      '(and optionally &api=http://host:port) to the URL.</p>';
    return;
  }

  const canvas = qs<HTMLCanvasElement>('#viewer');
  const status = qs<HTMLElement>('#status');
  const ctx = canvas.getContext('2d')!;
  const api = new ApiClient(base);
  // image size is read per task once the bitmap loads
  const session = new ReviewSession(api, observer, { w: 1, h: 1 });
  const ui: UiState = {
    viewport: { zoom: 1, panX: 0, panY: 0 },
    image: null,
    candidateIndex: 0,
    boxMode: false,
    dragStart: null,
    dragEnd: null,
    scan: null,
    message: 'loading...',
  };

  function resize(): void {
    canvas.width = canvas.clientWidth * devicePixelRatio;
    canvas.height = canvas.clientHeight * devicePixelRatio;
    draw();
  }

  function currentCandidate(): Candidate | null {
    const task = session.task;
    if (!task || task.candidates.length === 0) return null;
    return task.candidates[ui.candidateIndex % task.candidates.length] ?? null;
  }

  async function nextTask(): Promise<void> {
    ui.message = 'leasing next task...';
    draw();
    let task: TaskView | null = null;
    try {
      task = await session.next();
    } catch (err) {
      ui.message = `lease failed: ${err}`;
      draw();
      return;
    }
    if (!task) {
      ui.image = null;
      ui.message = 'queue drained - nothing left to review';
      draw();
      return;
    }
    ui.candidateIndex = 0;
    ui.boxMode = false;
    const img = new Image();
    img.onload = () => {
      ui.image = img;
      session.imageSize.w = img.naturalWidth;
      session.imageSize.h = img.naturalHeight;
      ui.viewport = initialViewport(
        img.naturalWidth,
        img.naturalHeight,
        canvas.width,
        canvas.height,
      );
      ui.scan = new ScanGrid(
        img.naturalWidth,
        img.naturalHeight,
        canvas.width / 4,
        canvas.height / 4,
      );
      markScan();
      ui.message = `${task.image_id}: ${task.candidates.length} candidate(s)`;
      draw();
    };
    img.onerror = () => {
      ui.image = null;
      ui.message = `${task.image_id}: image unavailable`;
      draw();
    };
    img.src = api.imageUrl(task.image_id);
    draw();
  }

  function markScan(): void {
    // cells only count as inspected at native resolution or closer
    if (!ui.scan || ui.viewport.zoom < 1) return;
    ui.scan.visit(visibleRect(ui.viewport, canvas.width, canvas.height));
    session.scanComplete = ui.scan.complete;
  }

  function draw(): void {
    ctx.fillStyle = '#202228';
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (ui.image) {
      const tl = imageToScreen(ui.viewport, { x: 0, y: 0 });
      ctx.imageSmoothingEnabled = ui.viewport.zoom < 1;
      ctx.drawImage(
        ui.image,
        tl.x,
        tl.y,
        ui.image.naturalWidth * ui.viewport.zoom,
        ui.image.naturalHeight * ui.viewport.zoom,
      );
    }
    const task = session.task;
    if (task) {
      task.candidates.forEach((cand, i) => {
        const decision = session.decisions.get(cand.candidate_id);
        ctx.strokeStyle =
          decision === 'confirm' ? '#44dd66' : decision === 'reject' ? '#dd4444' : '#ffcc00';
        ctx.lineWidth = i === ui.candidateIndex % task.candidates.length ? 3 : 1.5;
        strokeImageBox(cand.bbox[0], cand.bbox[1], cand.bbox[2], cand.bbox[3]);
      });
      ctx.strokeStyle = '#66aaff';
      ctx.lineWidth = 2;
      for (const manual of session.manualBoxes) {
        strokeImageBox(manual.box.x, manual.box.y, manual.box.w, manual.box.h);
      }
      if (ui.dragStart && ui.dragEnd) {
        ctx.strokeStyle = '#88ccff';
        ctx.setLineDash([6, 4]);
        const box = boxFromDrag(ui.viewport, ui.dragStart, ui.dragEnd);
        strokeImageBox(box.x, box.y, box.w, box.h);
        ctx.setLineDash([]);
      }
    }
    const scanNote = ui.scan
      ? ui.scan.complete
        ? 'scan complete'
        : `scan ${ui.scan.visitedCount}/${ui.scan.cols * ui.scan.rows}`
      : '';
    status.textContent =
      `${ui.message}  |  ${scanNote}` +
      (ui.boxMode ? '  |  BOX MODE (drag to draw)' : '') +
      (session.pendingVerdict ? '  |  submit pending, will retry' : '');
  }

  function strokeImageBox(x: number, y: number, w: number, h: number): void {
    const tl = imageToScreen(ui.viewport, { x, y });
    ctx.strokeRect(tl.x, tl.y, w * ui.viewport.zoom, h * ui.viewport.zoom);
  }

  async function submit(declareEmpty: boolean): Promise<void> {
    try {
      await session.submit(declareEmpty);
      await nextTask();
    } catch (err) {
      ui.message = `submit rejected: ${err}`;
      draw();
    }
  }

  canvas.addEventListener('wheel', (ev) => {
    ev.preventDefault();
    const pt = eventPoint(ev);
    ui.viewport = zoomAt(ui.viewport, pt, ev.deltaY < 0 ? 1.25 : 0.8);
    markScan();
    draw();
  });

  canvas.addEventListener('mousedown', (ev) => {
    if (ui.boxMode) {
      ui.dragStart = eventPoint(ev);
      ui.dragEnd = null;
    }
  });

  canvas.addEventListener('mousemove', (ev) => {
    if (ui.boxMode && ui.dragStart) {
      ui.dragEnd = eventPoint(ev);
      draw();
    } else if (ev.buttons === 1 && !ui.boxMode) {
      ui.viewport = panBy(ui.viewport, ev.movementX * devicePixelRatio,
                          ev.movementY * devicePixelRatio);
      markScan();
      draw();
    }
  });

  canvas.addEventListener('mouseup', (ev) => {
    if (!ui.boxMode || !ui.dragStart) return;
    const raw = boxFromDrag(ui.viewport, ui.dragStart, eventPoint(ev));
    ui.dragStart = ui.dragEnd = null;
    if (!ui.image) return;
    const box = clampBoxToImage(raw, ui.image.naturalWidth, ui.image.naturalHeight);
    if (box && box.w >= 3 && box.h >= 3) {
      session.addManualBox(box);
      ui.message = `added box at (${box.x.toFixed(0)}, ${box.y.toFixed(0)})`;
    }
    ui.boxMode = false;
    draw();
  });

  function eventPoint(ev: MouseEvent): { x: number; y: number } {
    const rect = canvas.getBoundingClientRect();
    return {
      x: (ev.clientX - rect.left) * devicePixelRatio,
      y: (ev.clientY - rect.top) * devicePixelRatio,
    };
  }

  window.addEventListener('keydown', (ev) => {
    const cand = currentCandidate();
    switch (ev.key) {
      case 'c':
        if (cand) {
          session.confirmCandidate(cand.candidate_id);
          ui.candidateIndex++;
        }
        break;
      case 'x':
        if (cand) {
          session.rejectCandidate(cand.candidate_id);
          ui.candidateIndex++;
        }
        break;
      case 'Tab':
        ev.preventDefault();
        ui.candidateIndex++;
        break;
      case 'b':
        ui.boxMode = !ui.boxMode;
        break;
      case 'u':
        session.removeLastManualBox();
        break;
      case 'e':
        if (session.canDeclareEmpty) void submit(true);
        else ui.message = 'cannot declare empty: resolve candidates / finish scan';
        break;
      case 'Enter':
        if (session.canSubmit && session.decisionCount > 0) void submit(false);
        break;
      case 'n': {
        // jump the viewport to the next unvisited scan cell
        if (ui.scan && ui.image) {
          const cell = ui.scan.nextCell();
          if (cell) {
            const cw = ui.image.naturalWidth / ui.scan.cols;
            const ch = ui.image.naturalHeight / ui.scan.rows;
            ui.viewport = {
              zoom: Math.min(canvas.width / cw, canvas.height / ch),
              panX: cell.col * cw,
              panY: cell.row * ch,
            };
            markScan();
          }
        }
        break;
      }
      case '+':
      case '=':
        ui.viewport = zoomAt(ui.viewport, { x: canvas.width / 2, y: canvas.height / 2 }, 1.25);
        markScan();
        break;
      case '-':
        ui.viewport = zoomAt(ui.viewport, { x: canvas.width / 2, y: canvas.height / 2 }, 0.8);
        markScan();
        break;
      case 'ArrowLeft':
        ui.viewport = panBy(ui.viewport, 80, 0);
        markScan();
        break;
      case 'ArrowRight':
        ui.viewport = panBy(ui.viewport, -80, 0);
        markScan();
        break;
      case 'ArrowUp':
        ui.viewport = panBy(ui.viewport, 0, 80);
        markScan();
        break;
      case 'ArrowDown':
        ui.viewport = panBy(ui.viewport, 0, -80);
        markScan();
        break;
      default:
        return;
    }
    draw();
  });

  window.addEventListener('resize', resize);
  resize();
  void nextTask();
}

setup();
