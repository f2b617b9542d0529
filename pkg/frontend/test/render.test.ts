import { describe, expect, it } from "vitest";

import { BC_COLOR, RL_COLOR, renderFrame } from "../src/render.js";
import { applyMessage, createViewModel } from "../src/viewmodel.js";
import type { SessionMessage } from "../src/protocol.js";

/** Records every styled draw so assertions can look for colors and text. */
function recordingContext() {
  const texts: string[] = [];
  const fillsByStyle: string[] = [];
  const ctx = {
    canvas: { width: 900, height: 520 },
    fillStyle: "",
    strokeStyle: "",
    lineWidth: 1,
    font: "",
    fillRect() {
      fillsByStyle.push(String(this.fillStyle));
    },
    strokeRect() {},
    clearRect() {},
    beginPath() {},
    moveTo() {},
    lineTo() {},
    arc() {},
    stroke() {
      fillsByStyle.push(String(this.strokeStyle));
    },
    fill() {
      fillsByStyle.push(String(this.fillStyle));
    },
    fillText(text: string) {
      texts.push(text);
    },
  };
  return { ctx, texts, fillsByStyle };
}

function frame(selected: "bc" | "rl"): SessionMessage {
  return {
    v: 1,
    seq: 1,
    kind: "state_frame",
    t: 0,
    payload: {
      episode: 2,
      t: 14,
      ee: [0.3, 0.6],
      ee_vel: [0, 0],
      gripper: 1,
      objects: [
        [0.9, 0.55],
        [0.2, 0.8],
      ],
      latches: [1, 0],
      held: 1,
      step_index: 14,
      succeeded: false,
      task: "drawer_place",
      reward: 0,
      done: false,
      intervened: false,
      gate: {
        w_bc: selected === "bc" ? 0.8 : 0.2,
        w_rl: selected === "bc" ? 0.2 : 0.8,
        sigma_bc: 0.01,
        sigma_rl: 0.02,
        selected,
      },
    },
  };
}

describe("renderFrame", () => {
  it("shows the waiting placeholder before any frame arrives", () => {
    const { ctx, texts } = recordingContext();
    renderFrame(ctx, createViewModel(), 0);
    expect(texts.join(" ")).toContain("waiting for session...");
  });

  it("draws the scene with the bc color band when bc is selected", () => {
    const vm = createViewModel();
    applyMessage(vm, frame("bc"), 1000);
    const { ctx, fillsByStyle } = recordingContext();
    renderFrame(ctx, vm, 1000);
    expect(fillsByStyle).toContain(BC_COLOR);
  });

  it("switches to the rl color when rl is selected", () => {
    const vm = createViewModel();
    applyMessage(vm, frame("rl"), 1000);
    const { ctx, fillsByStyle } = recordingContext();
    renderFrame(ctx, vm, 1000);
    expect(fillsByStyle).toContain(RL_COLOR);
  });

  it("flags a stale connection after two seconds without frames", () => {
    const vm = createViewModel();
    applyMessage(vm, frame("bc"), 1000);
    const { ctx, texts } = recordingContext();
    renderFrame(ctx, vm, 4000);
    expect(texts.some((t) => t.includes("(stale)"))).toBe(true);
  });
});
