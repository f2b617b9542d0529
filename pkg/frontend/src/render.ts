/**
 * Canvas drawing for the console: the workspace scene on the left, the
 * gate bar underneath it, and three rolling charts plus the expert
 * timeline band on the right.
 *
 * Everything drawn comes straight out of the ViewModel. The renderer is
 * deliberately dumb: one function, immediate mode, called on animation
 * ticks.
 */

import {
  type ViewModel,
  interventionSeries,
  isStale,
  lengthSeries,
  successSeries,
} from "./viewmodel.js";

export const BC_COLOR = "#4e79a7";
export const RL_COLOR = "#f28e2b";
const INTERVENE_COLOR = "#e15759";
const OBJECT_COLORS = ["#76b7b2", "#edc948", "#b07aa1", "#9c755f"];

interface Ctx2D {
  canvas: { width: number; height: number };
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

export function renderFrame(ctx: Ctx2D, vm: ViewModel, now: number): void {
  const W = ctx.canvas.width;
  const H = ctx.canvas.height;
  ctx.clearRect(0, 0, W, H);
  ctx.fillStyle = "#181a1f";
  ctx.fillRect(0, 0, W, H);

  const frame = vm.latestFrame;
  const pad = 16;
  const scene = Math.min(H - 80, Math.floor(W * 0.45));

  ctx.fillStyle = "#c9cdd4";
  ctx.font = "13px monospace";
  const status = vm.connection + (isStale(vm, now) ? " (stale)" : "");
  ctx.fillText(`session: ${status}`, pad, 14);
  if (vm.lastError) {
    ctx.fillStyle = INTERVENE_COLOR;
    ctx.fillText(vm.lastError, pad + 180, 14);
  }

  if (!frame) {
    ctx.fillStyle = "#c9cdd4";
    ctx.font = "16px monospace";
    ctx.fillText("waiting for session...", W / 2 - 90, H / 2);
    return;
  }

  // workspace is the unit square, y up; canvas y runs down
  const ox = pad;
  const oy = 24;
  const toX = (u: number) => ox + u * scene;
  const toY = (v: number) => oy + (1 - v) * scene;

  ctx.strokeStyle = "#3a3f4a";
  ctx.lineWidth = 1;
  ctx.strokeRect(ox, oy, scene, scene);

  frame.objects.forEach((obj, i) => {
    ctx.fillStyle = OBJECT_COLORS[i % OBJECT_COLORS.length];
    ctx.beginPath();
    ctx.arc(toX(obj[0]), toY(obj[1]), 7, 0, Math.PI * 2);
    ctx.fill();
    if (frame.held === i) {
      ctx.strokeStyle = "#ffffff";
      ctx.beginPath();
      ctx.arc(toX(obj[0]), toY(obj[1]), 10, 0, Math.PI * 2);
      ctx.stroke();
    }
  });

  frame.latches.forEach((latch, i) => {
    ctx.fillStyle = latch ? "#59a14f" : "#5a5f6a";
    ctx.fillRect(ox + scene - 14 * (i + 1), oy + 4, 10, 10);
  });

  const expertColor = frame.gate.selected === "bc" ? BC_COLOR : RL_COLOR;
  const ex = toX(frame.ee[0]);
  const ey = toY(frame.ee[1]);
  ctx.strokeStyle = expertColor;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(ex - 8, ey);
  ctx.lineTo(ex + 8, ey);
  ctx.moveTo(ex, ey - 8);
  ctx.lineTo(ex, ey + 8);
  ctx.stroke();
  if (frame.intervened) {
    ctx.strokeStyle = INTERVENE_COLOR;
    ctx.beginPath();
    ctx.arc(ex, ey, 11, 0, Math.PI * 2);
    ctx.stroke();
  }
  ctx.fillStyle = expertColor;
  ctx.font = "12px monospace";
  const grip = ["open", "hold", "closed"][frame.gripper] ?? "?";
  ctx.fillText(
    `ep ${frame.episode} t ${frame.t} ${frame.gate.selected} grip:${grip}` +
      (frame.succeeded ? " done" : ""),
    ox,
    oy + scene + 16,
  );

  // gate weight bar: bc share from the left, rl share from the right
  const barY = oy + scene + 24;
  ctx.fillStyle = BC_COLOR;
  ctx.fillRect(ox, barY, scene * frame.gate.w_bc, 10);
  ctx.fillStyle = RL_COLOR;
  ctx.fillRect(ox + scene * frame.gate.w_bc, barY, scene * frame.gate.w_rl, 10);

  drawCharts(ctx, vm, ox + scene + pad, oy, W - scene - 3 * pad, scene + 34);
}

function drawCharts(
  ctx: Ctx2D,
  vm: ViewModel,
  x: number,
  y: number,
  w: number,
  h: number,
): void {
  const panels: Array<[string, number[]]> = [
    ["success rate (20 ep)", successSeries(vm)],
    ["interventions (20 ep)", interventionSeries(vm)],
    ["episode length (20 ep)", lengthSeries(vm)],
  ];
  const bandH = 22;
  const panelH = Math.floor((h - bandH - 8) / panels.length);
  panels.forEach(([label, series], i) => {
    const py = y + i * panelH;
    ctx.strokeStyle = "#3a3f4a";
    ctx.lineWidth = 1;
    ctx.strokeRect(x, py, w, panelH - 6);
    ctx.fillStyle = "#8a8f9a";
    ctx.font = "11px monospace";
    ctx.fillText(label, x + 4, py + 12);
    if (series.length < 2) return;
    const lo = Math.min(...series);
    const hi = Math.max(...series);
    const span = hi - lo || 1;
    ctx.strokeStyle = "#c9cdd4";
    ctx.beginPath();
    series.forEach((v, j) => {
      const px = x + (j / (series.length - 1)) * w;
      const pv = py + panelH - 8 - ((v - lo) / span) * (panelH - 24);
      if (j === 0) ctx.moveTo(px, pv);
      else ctx.lineTo(px, pv);
    });
    ctx.stroke();
  });

  // expert-selection band: one colored slab per recent step
  const bandY = y + panels.length * panelH + 2;
  const recent = vm.timeline.slice(-Math.max(Math.floor(w), 1));
  const slab = w / Math.max(recent.length, 1);
  recent.forEach((entry, i) => {
    ctx.fillStyle = entry.intervened
      ? INTERVENE_COLOR
      : entry.selected === "bc"
        ? BC_COLOR
        : RL_COLOR;
    ctx.fillRect(x + i * slab, bandY, Math.max(slab, 1), bandH);
  });
  ctx.fillStyle = "#8a8f9a";
  ctx.font = "11px monospace";
  ctx.fillText("selected expert per step", x + 4, bandY + bandH + 12);
}
