/**
 * Keyboard control. Discrete keydown ticks match the server's
 * one-step-per-intervene semantics, which is why this is keyboard
 * driven rather than pointer-drag.
 *
 *   arrows      intervene one step in a unit direction
 *   o / h / c   gripper mode for subsequent ticks: open / hold / closed
 *   r           release control
 *   p           pause training
 *   u           resume training
 */

import type { SessionClient } from "./client.js";

const DIRECTIONS: Record<string, [number, number]> = {
  ArrowRight: [1, 0],
  ArrowLeft: [-1, 0],
  ArrowUp: [0, 1],
  ArrowDown: [0, -1],
};

const GRIPPER_KEYS: Record<string, number> = { o: 0, h: 1, c: 2 };

export interface InputState {
  gripper: number;
}

export interface KeyEventLike {
  key: string;
  preventDefault?: () => void;
}

/**
 * Attach the key map to an event source; returns the handler so callers
 * (and tests) can detach or invoke it directly.
 */
export function captureInput(
  target: { addEventListener(type: string, fn: (ev: KeyEventLike) => void): void },
  client: SessionClient,
  state: InputState = { gripper: 1 },
): (ev: KeyEventLike) => void {
  const handler = (ev: KeyEventLike) => {
    const dir = DIRECTIONS[ev.key];
    if (dir) {
      ev.preventDefault?.();
      client.send("intervene", { dx: dir[0], dy: dir[1], gripper: state.gripper });
      return;
    }
    if (ev.key in GRIPPER_KEYS) {
      state.gripper = GRIPPER_KEYS[ev.key];
      return;
    }
    if (ev.key === "r") client.send("release");
    else if (ev.key === "p") client.send("pause");
    else if (ev.key === "u") client.send("resume");
  };
  target.addEventListener("keydown", handler);
  return handler;
}
