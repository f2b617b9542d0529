/**
 * All server-sent state the console knows about, in one plain object.
 *
 * The view model only mirrors what the wire said. It never simulates:
 * no client-side physics, no predicted frames, nothing the server did
 * not send. Socket callbacks feed applyMessage; the render loop reads.
 */

import type {
  ConnectionStatus,
} from "./client.js";
import type {
  MetricsPayload,
  SessionMessage,
  StateFramePayload,
} from "./protocol.js";

export const CHART_WINDOW = 20;
export const STALE_AFTER_MS = 2000;
const TIMELINE_CAP = 5000;

export interface TimelineEntry {
  episode: number;
  t: number;
  selected: "bc" | "rl";
  wBc: number;
  intervened: boolean;
}

export interface ViewModel {
  latestFrame: StateFramePayload | null;
  lastFrameAt: number;
  episodes: MetricsPayload[];
  timeline: TimelineEntry[];
  connection: ConnectionStatus;
  serverProtocol: string | null;
  lastError: string | null;
  paused: boolean;
  framesSeen: number;
}

export function createViewModel(): ViewModel {
  return {
    latestFrame: null,
    lastFrameAt: 0,
    episodes: [],
    timeline: [],
    connection: "connecting",
    serverProtocol: null,
    lastError: null,
    paused: false,
    framesSeen: 0,
  };
}

export function applyMessage(vm: ViewModel, msg: SessionMessage, now: number): void {
  switch (msg.kind) {
    case "hello": {
      vm.serverProtocol = String(msg.payload.protocol ?? "");
      break;
    }
    case "state_frame": {
      const frame = msg.payload as unknown as StateFramePayload;
      vm.latestFrame = frame;
      vm.lastFrameAt = now;
      vm.framesSeen += 1;
      vm.timeline.push({
        episode: frame.episode,
        t: frame.t,
        selected: frame.gate.selected,
        wBc: frame.gate.w_bc,
        intervened: frame.intervened,
      });
      if (vm.timeline.length > TIMELINE_CAP) {
        vm.timeline.splice(0, vm.timeline.length - TIMELINE_CAP);
      }
      break;
    }
    case "metrics": {
      vm.episodes.push(msg.payload as unknown as MetricsPayload);
      break;
    }
    case "error": {
      vm.lastError = String(msg.payload.message ?? "unknown error");
      break;
    }
    default:
      // episode_end and pong carry nothing the charts need beyond what
      // metrics already provides
      break;
  }
}

export function isStale(vm: ViewModel, now: number): boolean {
  return vm.latestFrame !== null && now - vm.lastFrameAt > STALE_AFTER_MS;
}

/** Moving average over the chart window, one point per episode. */
export function movingAverage(values: number[], window = CHART_WINDOW): number[] {
  const out: number[] = [];
  let acc = 0;
  for (let i = 0; i < values.length; i++) {
    acc += values[i];
    if (i >= window) {
      acc -= values[i - window];
    }
    out.push(acc / Math.min(i + 1, window));
  }
  return out;
}

export function successSeries(vm: ViewModel): number[] {
  return movingAverage(vm.episodes.map((e) => (e.success ? 1 : 0)));
}

export function interventionSeries(vm: ViewModel): number[] {
  return movingAverage(vm.episodes.map((e) => e.interventions));
}

export function lengthSeries(vm: ViewModel): number[] {
  return movingAverage(vm.episodes.map((e) => e.length));
}

/** Windowed scalar summaries for the header line. */
export function recentSuccessRate(vm: ViewModel): number {
  const s = successSeries(vm);
  return s.length ? s[s.length - 1] : 0;
}
