/**
 * End-to-end check against the real training server: a scripted session
 * drives five intervention ticks through the live socket and the run's
 * trajectory dump must contain exactly five intervened transitions.
 * Along the way the frame stream has to keep the renderer above ten
 * frames per second.
 */

import { spawn } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import WebSocket from "ws";
import { afterAll, describe, expect, it } from "vitest";

import { SessionClient, type SocketLike } from "../src/client.js";
import { renderFrame } from "../src/render.js";
import { applyMessage, createViewModel } from "../src/viewmodel.js";

const here = fileURLToPath(new URL(".", import.meta.url));
const fixture = join(here, "fixtures", "serve_fixture.py");

function stubContext() {
  const noop = () => {};
  return {
    canvas: { width: 800, height: 500 },
    fillStyle: "",
    strokeStyle: "",
    lineWidth: 1,
    font: "",
    fillRect: noop,
    strokeRect: noop,
    clearRect: noop,
    beginPath: noop,
    moveTo: noop,
    lineTo: noop,
    arc: noop,
    stroke: noop,
    fill: noop,
    fillText: noop,
  };
}

let cleanup: (() => void) | null = null;
afterAll(() => cleanup?.());

describe("live session round trip", () => {
  it(
    "five intervene ticks yield five intervened transitions, rendering >= 10 fps",
    async () => {
      const runDir = mkdtempSync(join(tmpdir(), "console-rt-"));
      const proc = spawn("python3", [fixture, runDir], {
        cwd: resolve(here, ".."),
        stdio: ["ignore", "pipe", "inherit"],
      });
      cleanup = () => proc.kill();

      const port = await new Promise<number>((resolvePort, reject) => {
        let buf = "";
        proc.stdout.on("data", (chunk: Buffer) => {
          buf += chunk.toString();
          const m = buf.match(/PORT (\d+)/);
          if (m) resolvePort(Number(m[1]));
        });
        proc.on("exit", (code) => reject(new Error(`server died early (${code})`)));
        setTimeout(() => reject(new Error("no PORT line")), 60_000);
      });

      const vm = createViewModel();
      let renders = 0;
      let firstFrameAt = 0;
      let lastFrameAt = 0;
      const ctx = stubContext();

      const client = new SessionClient(`127.0.0.1:${port}`, {
        socketFactory: (url) => new WebSocket(url) as unknown as SocketLike,
        onMessage: (msg) => {
          const now = Date.now();
          applyMessage(vm, msg, now);
          if (msg.kind === "state_frame") {
            if (!firstFrameAt) firstFrameAt = now;
            lastFrameAt = now;
            renderFrame(ctx, vm, now);
            renders += 1;
          }
        },
      });
      client.connect();

      // wait for the stream to start, send the five ticks, then let the
      // licensed steps drain with an explicit release
      await waitFor(() => vm.serverProtocol === "session/v1", 30_000);
      await waitFor(() => vm.framesSeen > 0, 30_000);
      for (let i = 0; i < 5; i++) {
        client.send("intervene", { dx: 1.0, dy: 0.0, gripper: 1 });
      }
      client.send("release");

      const exit = await new Promise<number | null>((res) => proc.on("exit", res));
      expect(exit).toBe(0);
      client.close();

      const lines = readFileSync(join(runDir, "trajectories.jsonl"), "utf8")
        .trim()
        .split("\n")
        .map((l) => JSON.parse(l));
      const intervened = lines.filter((l) => l.intervened === true);
      expect(intervened).toHaveLength(5);

      expect(renders).toBeGreaterThan(10);
      const elapsed = (lastFrameAt - firstFrameAt) / 1000;
      expect(elapsed).toBeGreaterThan(0);
      expect(renders / elapsed).toBeGreaterThanOrEqual(10);
    },
    120_000,
  );
});

async function waitFor(cond: () => boolean, ms: number): Promise<void> {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > ms) throw new Error("timed out");
    await new Promise((r) => setTimeout(r, 10));
  }
}
