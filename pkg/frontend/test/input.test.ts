import { describe, expect, it } from "vitest";

import { SessionClient, type SocketLike } from "../src/client.js";
import { captureInput, type KeyEventLike } from "../src/input.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {}
}

function setup() {
  const sock = new FakeSocket();
  const client = new SessionClient("h:1", { socketFactory: () => sock });
  client.connect();
  sock.onopen?.();
  const handlers: Array<(ev: KeyEventLike) => void> = [];
  const target = {
    addEventListener: (_t: string, fn: (ev: KeyEventLike) => void) => handlers.push(fn),
  };
  captureInput(target, client);
  const press = (key: string) => handlers.forEach((h) => h({ key }));
  return { sock, press };
}

describe("keyboard capture", () => {
  it("five right-arrow ticks produce five unit-direction intervenes", () => {
    const { sock, press } = setup();
    for (let i = 0; i < 5; i++) press("ArrowRight");
    const msgs = sock.sent.map((s) => JSON.parse(s));
    expect(msgs).toHaveLength(5);
    for (const m of msgs) {
      expect(m.kind).toBe("intervene");
      expect(m.payload).toEqual({ dx: 1, dy: 0, gripper: 1 });
    }
    expect(msgs.map((m) => m.seq)).toEqual([1, 2, 3, 4, 5]);
  });

  it("maps each arrow to its unit direction", () => {
    const { sock, press } = setup();
    press("ArrowLeft");
    press("ArrowUp");
    press("ArrowDown");
    const dirs = sock.sent.map((s) => {
      const p = JSON.parse(s).payload;
      return [p.dx, p.dy];
    });
    expect(dirs).toEqual([
      [-1, 0],
      [0, 1],
      [0, -1],
    ]);
  });

  it("gripper mode keys change subsequent ticks", () => {
    const { sock, press } = setup();
    press("c");
    press("ArrowRight");
    press("o");
    press("ArrowRight");
    const grips = sock.sent.map((s) => JSON.parse(s).payload.gripper);
    expect(grips).toEqual([2, 0]);
  });

  it("release key sends exactly one release", () => {
    const { sock, press } = setup();
    press("r");
    const msgs = sock.sent.map((s) => JSON.parse(s));
    expect(msgs).toHaveLength(1);
    expect(msgs[0].kind).toBe("release");
  });

  it("pause and resume map to their own keys", () => {
    const { sock, press } = setup();
    press("p");
    press("u");
    expect(sock.sent.map((s) => JSON.parse(s).kind)).toEqual(["pause", "resume"]);
  });

  it("ignores unbound keys", () => {
    const { sock, press } = setup();
    press("x");
    press("Escape");
    expect(sock.sent).toHaveLength(0);
  });
});
