/**
 * Session wire protocol, version 1.
 *
 * Every frame on the socket is one JSON object:
 *   { v: 1, seq: <int>, kind: <string>, t: <unix seconds>, payload: {...} }
 *
 * `seq` increases strictly per connection per direction. The server sends
 * hello / state_frame / metrics / episode_end / pong / error; the client
 * sends intervene / release / pause / resume / ping. See docs/protocol.md
 * in the repository root for the full reference.
 */

export const PROTOCOL_VERSION = 1;

export const SERVER_KINDS = [
  "hello",
  "state_frame",
  "metrics",
  "episode_end",
  "pong",
  "error",
] as const;

export const CLIENT_KINDS = [
  "intervene",
  "release",
  "pause",
  "resume",
  "ping",
] as const;

export type ServerKind = (typeof SERVER_KINDS)[number];
export type ClientKind = (typeof CLIENT_KINDS)[number];

export interface SessionMessage {
  v: number;
  seq: number;
  kind: string;
  t: number;
  payload: Record<string, unknown>;
}

export interface GateInfo {
  w_bc: number;
  w_rl: number;
  sigma_bc: number;
  sigma_rl: number;
  selected: "bc" | "rl";
}

export interface StateFramePayload {
  episode: number;
  t: number;
  ee: [number, number];
  ee_vel: [number, number];
  gripper: number;
  objects: number[][];
  latches: number[];
  held: number;
  step_index: number;
  succeeded: boolean;
  task: string;
  reward: number;
  done: boolean;
  intervened: boolean;
  gate: GateInfo;
}

export interface MetricsPayload {
  episode: number;
  success: boolean;
  length: number;
  interventions: number;
  intervened_steps: number;
  rl_selection_ratio: number;
  demo_ratio: number;
  auto_success_ratio: number;
  total_env_steps: number;
}

export class ProtocolError extends Error {}

export function encodeMessage(
  kind: ClientKind,
  payload: Record<string, unknown>,
  seq: number,
): string {
  return JSON.stringify({
    v: PROTOCOL_VERSION,
    seq,
    kind,
    t: Math.round(Date.now()) / 1000,
    payload,
  });
}

/** Parse and validate one inbound frame; throws ProtocolError if malformed. */
export function decodeMessage(text: string): SessionMessage {
  let msg: unknown;
  try {
    msg = JSON.parse(text);
  } catch (exc) {
    throw new ProtocolError(`not JSON: ${exc}`);
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new ProtocolError("message must be an object");
  }
  const m = msg as Record<string, unknown>;
  if (m.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${JSON.stringify(m.v)}`);
  }
  if (typeof m.seq !== "number" || !Number.isInteger(m.seq)) {
    throw new ProtocolError("seq must be an integer");
  }
  if (!(SERVER_KINDS as readonly string[]).includes(m.kind as string)) {
    throw new ProtocolError(`unknown kind ${JSON.stringify(m.kind)}`);
  }
  const payload = m.payload ?? {};
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new ProtocolError("payload must be an object");
  }
  return {
    v: m.v,
    seq: m.seq,
    kind: m.kind as string,
    t: typeof m.t === "number" ? m.t : 0,
    payload: payload as Record<string, unknown>,
  };
}
