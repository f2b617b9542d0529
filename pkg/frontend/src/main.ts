/**
 * Entry point: wire socket -> view model -> canvas.
 *
 * The server address comes from the `?server=` query parameter and
 * defaults to the page host. That is the whole configuration surface.
 */

import { SessionClient } from "./client.js";
import { captureInput } from "./input.js";
import { renderFrame } from "./render.js";
import { applyMessage, createViewModel } from "./viewmodel.js";

function serverAddress(): string {
  const q = new URLSearchParams(window.location.search).get("server");
  return q ?? window.location.host ?? "127.0.0.1:8765";
}

export function start(canvas: HTMLCanvasElement, notice: HTMLElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");

  const vm = createViewModel();
  const client = new SessionClient(serverAddress(), {
    onMessage: (msg) => applyMessage(vm, msg, Date.now()),
    onStatus: (status) => {
      vm.connection = status;
    },
    onNotice: (text) => {
      notice.textContent = text;
    },
  });
  client.connect();
  captureInput(window, client);

  const tick = () => {
    client.prunePending();
    renderFrame(ctx, vm, Date.now());
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
}

if (typeof document !== "undefined" && document.getElementById("scene")) {
  start(
    document.getElementById("scene") as HTMLCanvasElement,
    document.getElementById("notice") as HTMLElement,
  );
}
