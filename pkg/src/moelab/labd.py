"""Run orchestration: the `moelab` command line and the live session server.

Subcommands cover the full pipeline (collect-demos, pretrain, train-online,
eval, ablate) plus `serve`, which runs online training while streaming
state frames to connected clients and accepting intervention commands.

Session protocol v1 (see docs/protocol.md): each message is one UTF-8
JSON record carried in a WebSocket text frame, so browsers connect
directly and the frame header provides the length delimiting. Every
record has `v` (=1), `seq` (strictly increasing per connection per
direction), `kind`, `t`, and a kind-specific `payload`.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import logging
import os
import queue
import socket
import struct
import sys
import threading
import time
from collections import deque
from pathlib import Path

import numpy as np
import yaml

from . import experts
from .buffers import BufferSet, load_buffers, save_buffers
from .envsim import ArmAction, GripperAction
from .experts import load_bundle, save_bundle
from .nnkit import ConfigError
from .training import RunConfig, RunDir, Trainer, evaluate

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
LISTEN_ENV = "MOELAB_LISTEN"
DEFAULT_LISTEN = "127.0.0.1:8765"

SERVER_KINDS = ("hello", "state_frame", "metrics", "episode_end", "pong", "error")
CLIENT_KINDS = ("intervene", "release", "pause", "resume", "ping")

# how long the actor loop waits for the next command while a human holds
# control; expiry behaves like an explicit release
INTERVENE_TIMEOUT = 2.0
OUTBOUND_QUEUE = 256


# ---- configuration -----------------------------------------------------------


def parse_override(text: str):
    """`key=value` with the value JSON-decoded when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then --set overrides, then flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {args.config} must be a mapping")
        cfg = cfg.with_overrides(loaded)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, value = parse_override(item)
        overrides[key] = value
    if getattr(args, "task", None):
        overrides["task_id"] = args.task
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def find_checkpoint(path) -> Path:
    """Accept a checkpoint directory or a run directory containing one."""
    p = Path(path)
    if (p / "manifest.json").exists():
        return p
    for name in ("final", "pretrain"):
        cand = p / "checkpoints" / name
        if (cand / "manifest.json").exists():
            return cand
    raise ConfigError(f"no checkpoint found under {p}")


def load_run_state(ckpt_path):
    ckpt = find_checkpoint(ckpt_path)
    bundle, step, meta = load_bundle(ckpt)
    buffers = None
    for base in (ckpt.parent.parent, ckpt.parent, ckpt):
        if (base / "buffers" / "manifest.json").exists():
            buffers = load_buffers(base / "buffers")
            break
    return bundle, buffers, meta


# ---- websocket plumbing --------------------------------------------------------

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _read_exact(sock, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("socket closed")
        buf += chunk
    return buf


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_server_handshake(sock) -> bytes:
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("closed during handshake")
        data += chunk
        if len(data) > 65536:
            raise ConnectionError("oversized handshake")
    raw_head, leftover = data.split(b"\r\n\r\n", 1)
    head = raw_head.decode("latin-1")
    lines = head.split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get("sec-websocket-key")
    if not lines[0].startswith("GET") or key is None:
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        raise ConnectionError("not a websocket upgrade")
    resp = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {ws_accept_key(key)}\r\n\r\n"
    )
    sock.sendall(resp.encode("latin-1"))
    return leftover


def ws_client_handshake(sock, host: str, port: int) -> bytes:
    """Returns any bytes read past the end of the 101 response (the start
    of the first frame can arrive in the same segment)."""
    key = base64.b64encode(os.urandom(16)).decode()
    req = (
        f"GET / HTTP/1.1\r\nHost: {host}:{port}\r\n"
        "Upgrade: websocket\r\nConnection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(req.encode("latin-1"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("closed during handshake")
        data += chunk
    head, leftover = data.split(b"\r\n\r\n", 1)
    status = head.split(b"\r\n", 1)[0]
    if b"101" not in status:
        raise ConnectionError(f"handshake rejected: {status!r}")
    expect = ws_accept_key(key).encode("latin-1")
    if expect not in head:
        raise ConnectionError("bad Sec-WebSocket-Accept")
    return leftover


class _BufferedSock:
    """Socket wrapper replaying bytes that arrived with the handshake."""

    def __init__(self, sock, leftover: bytes = b""):
        self._sock = sock
        self._buf = leftover

    def recv(self, n: int) -> bytes:
        if self._buf:
            out, self._buf = self._buf[:n], self._buf[n:]
            return out
        return self._sock.recv(n)

    def sendall(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        self._sock.close()


def ws_send(sock, payload: bytes, opcode: int = 0x1, mask: bool = False) -> None:
    header = bytes([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        header += bytes([mask_bit | n])
    elif n < 65536:
        header += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        header += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        header += key
    sock.sendall(header + payload)


def ws_recv(sock):
    """One complete frame -> (opcode, payload bytes). Fragmentation is not
    supported; our messages are small single frames."""
    b1, b2 = _read_exact(sock, 2)
    opcode = b1 & 0x0F
    masked = bool(b2 & 0x80)
    n = b2 & 0x7F
    if n == 126:
        n = struct.unpack(">H", _read_exact(sock, 2))[0]
    elif n == 127:
        n = struct.unpack(">Q", _read_exact(sock, 8))[0]
    if masked:
        key = _read_exact(sock, 4)
        data = _read_exact(sock, n)
        data = bytes(b ^ key[i % 4] for i, b in enumerate(data))
    else:
        data = _read_exact(sock, n)
    return opcode, data


# ---- session messages ----------------------------------------------------------


def encode_message(kind: str, payload: dict, seq: int) -> str:
    return json.dumps({
        "v": PROTOCOL_VERSION,
        "seq": seq,
        "kind": kind,
        "t": round(time.time(), 3),
        "payload": payload,
    }, sort_keys=True)


def decode_message(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise ValueError("message must be an object")
    if msg.get("v") != PROTOCOL_VERSION:
        raise ValueError(f"unsupported protocol version {msg.get('v')!r}")
    if not isinstance(msg.get("seq"), int):
        raise ValueError("seq must be an integer")
    if msg.get("kind") not in CLIENT_KINDS:
        raise ValueError(f"unknown kind {msg.get('kind')!r}")
    payload = msg.get("payload", {})
    if not isinstance(payload, dict):
        raise ValueError("payload must be an object")
    return msg


class ClientConn:
    """One connected client: reader thread + bounded outbound writer."""

    def __init__(self, sock, addr, hub):
        self.sock = sock
        self.addr = addr
        self.hub = hub
        self.alive = True
        self.seq = 0
        self.last_client_seq = -1
        self.outbound = queue.Queue(maxsize=OUTBOUND_QUEUE)
        self.dropped_frames = 0
        self._lock = threading.Lock()
        self._ready = threading.Event()
        threading.Thread(target=self._writer, daemon=True).start()
        threading.Thread(target=self._reader, daemon=True).start()

    def send(self, kind: str, payload: dict, droppable: bool = False):
        if not self.alive:
            return
        with self._lock:
            self.seq += 1
            seq = self.seq
        text = encode_message(kind, payload, seq)
        try:
            if droppable:
                self.outbound.put_nowait(text)
            else:
                self.outbound.put(text, timeout=5.0)
        except queue.Full:
            if droppable:
                self.dropped_frames += 1
            else:
                self.close()

    def _writer(self):
        # hold all traffic until the upgrade handshake has completed
        while self.alive and not self._ready.wait(timeout=0.25):
            pass
        while self.alive:
            try:
                text = self.outbound.get(timeout=0.25)
            except queue.Empty:
                continue
            try:
                ws_send(self.sock, text.encode(), opcode=0x1)
            except OSError:
                self.close()

    def _reader(self):
        try:
            leftover = ws_server_handshake(self.sock)
            self.sock = _BufferedSock(self.sock, leftover)
            self._ready.set()
            self.send("hello", {"protocol": "session/v1"})
            while self.alive:
                opcode, data = ws_recv(self.sock)
                if opcode == 0x8:        # close
                    break
                if opcode == 0x9:        # ws-level ping
                    ws_send(self.sock, data, opcode=0xA)
                    continue
                if opcode not in (0x1, 0x2):
                    continue
                self._handle(data.decode("utf-8", errors="replace"))
        except (ConnectionError, OSError, ValueError):
            pass
        finally:
            self.close()

    def _handle(self, text: str):
        try:
            msg = decode_message(text)
            if msg["seq"] <= self.last_client_seq:
                raise ValueError(
                    f"seq {msg['seq']} not increasing (last {self.last_client_seq})")
            self.last_client_seq = msg["seq"]
        except ValueError as exc:
            self.send("error", {"message": str(exc)})
            return
        kind, payload = msg["kind"], msg.get("payload", {})
        if kind == "ping":
            self.send("pong", {"echo": payload})
            return
        self.hub.handle_control(self, kind, payload)

    def close(self):
        if not self.alive:
            return
        self.alive = False
        try:
            self.sock.close()
        except OSError:
            pass
        self.hub.on_disconnect(self)


class HumanBridge:
    """Adapts network intervention commands to the rollout controller API.

    Each `intervene` message licenses exactly one environment step with the
    supplied action; while a grant is held (intervene seen, no release yet)
    the actor loop runs in lockstep with incoming commands, timing out into
    an automatic release. `pause` freezes the actor loop between steps while
    the learner keeps consuming buffered data.
    """

    def __init__(self, trainer: Trainer | None = None):
        self.trainer = trainer
        self.cond = threading.Condition()
        self.pending = deque()     # (ArmAction, GripperAction)
        self.holding = False       # a controller currently holds the arm
        self.paused = False
        self.used = 0              # takeover count, mirrors the scripted rule
        self.shutdown = False
        self._current = None

    # -- network side -------------------------------------------------------

    def intervene(self, payload: dict):
        delta = np.array([float(payload.get("dx", 0.0)),
                          float(payload.get("dy", 0.0))])
        grip = int(payload.get("gripper", 1))
        if grip not in (0, 1, 2):
            raise ValueError(f"gripper mode {grip} out of range")
        action = (ArmAction(delta), GripperAction(grip))
        with self.cond:
            if not self.holding:
                self.holding = True
                self.used += 1
            self.pending.append(action)
            self.cond.notify_all()

    def release(self):
        # already-licensed ticks still drain; only the open-ended hold ends,
        # so N intervene messages always yield exactly N intervened steps
        with self.cond:
            self.holding = False
            self.cond.notify_all()

    def pause(self):
        with self.cond:
            self.paused = True
            self.cond.notify_all()

    def resume(self):
        with self.cond:
            self.paused = False
            self.cond.notify_all()

    def stop(self):
        with self.cond:
            self.shutdown = True
            self.holding = False
            self.cond.notify_all()

    # -- actor side -----------------------------------------------------------

    def observe(self, state) -> bool:
        while True:
            with self.cond:
                if self.shutdown:
                    return False
                if self.paused:
                    paused = True
                else:
                    if self.pending:
                        self._current = self.pending.popleft()
                        return True
                    if not self.holding:
                        return False
                    paused = False
                    deadline = time.monotonic() + INTERVENE_TIMEOUT
            if paused:
                self._learn_while_paused()
                continue
            with self.cond:
                while (self.holding and not self.pending and not self.paused
                       and not self.shutdown):
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        self.holding = False    # lapse: automatic release
                        return False
                    self.cond.wait(timeout=min(remaining, 0.1))

    def _learn_while_paused(self):
        if self.trainer is not None and len(self.trainer.buffers.replay) > 0:
            self.trainer.updates_for_steps(1)
        else:
            time.sleep(0.02)

    def act(self, state):
        return self._current


class SessionHub:
    """Listener, client registry, and the single-controller rule."""

    def __init__(self, host: str, port: int, bridge: HumanBridge):
        self.bridge = bridge
        self.clients = []
        self.controller = None
        self._lock = threading.Lock()
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(8)
        self.host, self.port = self.listener.getsockname()[:2]
        self.alive = True
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def _accept_loop(self):
        while self.alive:
            try:
                sock, addr = self.listener.accept()
            except OSError:
                return
            conn = ClientConn(sock, addr, self)
            with self._lock:
                self.clients.append(conn)

    def handle_control(self, conn: ClientConn, kind: str, payload: dict):
        with self._lock:
            if self.controller is None:
                self.controller = conn
            elif self.controller is not conn:
                conn.send("error", {"message": "another controller is active"})
                return
        try:
            if kind == "intervene":
                self.bridge.intervene(payload)
            elif kind == "release":
                self.bridge.release()
            elif kind == "pause":
                self.bridge.pause()
            elif kind == "resume":
                self.bridge.resume()
        except ValueError as exc:
            conn.send("error", {"message": str(exc)})

    def on_disconnect(self, conn: ClientConn):
        with self._lock:
            if conn in self.clients:
                self.clients.remove(conn)
            was_controller = self.controller is conn
            if was_controller:
                self.controller = None
        if was_controller:
            self.bridge.release()

    def broadcast(self, kind: str, payload: dict, droppable: bool):
        with self._lock:
            targets = list(self.clients)
        for conn in targets:
            conn.send(kind, payload, droppable=droppable)

    def close(self):
        self.alive = False
        try:
            self.listener.close()
        except OSError:
            pass
        with self._lock:
            targets = list(self.clients)
        for conn in targets:
            conn.close()


def state_frame_payload(trainer: Trainer, episode: int, t: int, state,
                        transition, decision) -> dict:
    if decision is None:
        decision = experts.gate(trainer.bundle, transition.state)
    return {
        "episode": episode,
        "t": t,
        "ee": [float(x) for x in state.ee_pos],
        "ee_vel": [float(x) for x in state.ee_vel],
        "gripper": int(state.gripper),
        "objects": [[float(x) for x in row] for row in state.objects],
        "latches": [int(x) for x in state.latches],
        "held": int(state.held),
        "step_index": int(state.step_index),
        "succeeded": bool(state.succeeded),
        "task": trainer.config.task_id,
        "reward": float(transition.reward),
        "done": bool(transition.done),
        "intervened": bool(transition.intervened),
        "gate": {
            "w_bc": decision.w_bc,
            "w_rl": decision.w_rl,
            "sigma_bc": decision.sigma_bc,
            "sigma_rl": decision.sigma_rl,
            "selected": decision.selected,
        },
    }


def serve_session(config: RunConfig, bundle=None, buffers=None,
                  host: str = "127.0.0.1", port: int = 8765,
                  run_dir: RunDir | None = None, hub_factory=None):
    """Online training with live streaming; returns (trainer, metrics, hub).

    With no client connected this behaves exactly like scripted-intervention
    training with the trigger off: the bridge never takes over.
    """
    trainer = Trainer(config, bundle=bundle, buffers=buffers)
    if len(trainer.buffers.demo) == 0:
        trainer.collect_demos()
    bridge = HumanBridge(trainer)
    hub = (hub_factory or SessionHub)(host, port, bridge)
    step_counter = {"t": 0, "ep": -1}

    def step_hook(ep, s2, transition, decision):
        if ep != step_counter["ep"]:
            step_counter["ep"] = ep
            step_counter["t"] = 0
        payload = state_frame_payload(trainer, ep, step_counter["t"], s2,
                                      transition, decision)
        step_counter["t"] += 1
        hub.broadcast("state_frame", payload, droppable=True)

    def episode_hook(tr, ep, rec):
        from dataclasses import asdict
        hub.broadcast("metrics", asdict(rec), droppable=False)
        hub.broadcast("episode_end",
                      {"episode": ep, "success": rec.success,
                       "length": rec.length}, droppable=False)

    try:
        metrics = trainer.train_online(
            run_dir=run_dir,
            controller_factory=lambda ep: bridge,
            step_hook=step_hook,
            episode_hook=episode_hook,
        )
    finally:
        bridge.stop()
    return trainer, metrics, hub


# ---- scripted client -------------------------------------------------------------


class SessionClient:
    """Minimal scripted protocol client (also used by the demos and tests)."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        raw = socket.create_connection((host, port), timeout=timeout)
        leftover = ws_client_handshake(raw, host, port)
        self.sock = _BufferedSock(raw, leftover)
        self.seq = 0

    def send(self, kind: str, payload: dict | None = None):
        self.seq += 1
        text = encode_message(kind, payload or {}, self.seq)
        ws_send(self.sock, text.encode(), opcode=0x1, mask=True)

    def recv(self) -> dict:
        while True:
            opcode, data = ws_recv(self.sock)
            if opcode == 0x8:
                raise ConnectionError("server closed the session")
            if opcode == 0x9:
                ws_send(self.sock, data, opcode=0xA, mask=True)
                continue
            if opcode in (0x1, 0x2):
                return json.loads(data.decode())

    def recv_kind(self, kind: str, limit: int = 10_000) -> dict:
        for _ in range(limit):
            msg = self.recv()
            if msg["kind"] == kind:
                return msg
        raise TimeoutError(f"no {kind} message within {limit} frames")

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


# ---- command line -----------------------------------------------------------------


def _parse_listen(text: str):
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _add_common(p):
    p.add_argument("--config", help="YAML config file (RunConfig schema)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (value parsed as JSON)")
    p.add_argument("--task", help="task id override")
    p.add_argument("--seed", type=int, help="seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moelab",
        description="Variance-gated dual-expert training laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect-demos", help="record scripted demonstrations")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("pretrain", help="offline stage on demonstrations")
    _add_common(p)
    p.add_argument("--demos", help="demo buffer directory (else collect fresh)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-online", help="online fine-tuning stage")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="pretrain run or checkpoint dir")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="deterministic evaluation rollouts")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--force", choices=["bc", "rl"], help="pin one expert")

    p = sub.add_parser("ablate", help="run one ablation arm end to end")
    _add_common(p)
    p.add_argument("--variant", required=True,
                   choices=["no_bc_reg", "gripper_dqn", "bc_only", "rl_only"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="online training with a live session")
    _add_common(p)
    p.add_argument("--ckpt", help="start from a stored checkpoint")
    p.add_argument("--out", help="run directory for metrics and trajectories")
    p.add_argument("--listen",
                   default=os.environ.get(LISTEN_ENV, DEFAULT_LISTEN),
                   help=f"host:port (env {LISTEN_ENV})")
    return parser


def cmd_collect_demos(args) -> int:
    cfg = resolve_config(args)
    trainer = Trainer(cfg)
    episodes = trainer.collect_demos()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_buffers(out / "buffers", trainer.buffers)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    steps = sum(len(e) for e in episodes)
    print(f"collected {len(episodes)} demo episodes ({steps} transitions) "
          f"into {out / 'buffers'}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    trainer = Trainer(cfg)
    if args.demos:
        trainer.buffers = load_buffers(Path(args.demos) / "buffers"
                                       if (Path(args.demos) / "buffers").exists()
                                       else args.demos)
    else:
        trainer.collect_demos()
    run = RunDir(args.out)
    run.write_config(cfg)
    trainer.pretrain(run)
    save_bundle(run.path / "checkpoints" / "pretrain", trainer.bundle,
                step=cfg.n_offline, meta={"task": cfg.task_id, "stage": "pretrain"})
    save_buffers(run.path / "buffers", trainer.buffers)
    run.close()
    print(f"pretrained for {cfg.n_offline} updates; checkpoint at "
          f"{run.path / 'checkpoints' / 'pretrain'}")
    return 0


def cmd_train_online(args) -> int:
    cfg = resolve_config(args)
    bundle, buffers, _ = load_run_state(args.ckpt)
    if buffers is None:
        raise ConfigError(f"no demo buffers found near {args.ckpt}")
    trainer = Trainer(cfg, bundle=bundle, buffers=buffers)
    run = RunDir(args.out)
    run.write_config(cfg)
    metrics = trainer.train_online(run)
    save_bundle(run.path / "checkpoints" / "final", trainer.bundle,
                step=cfg.online_episodes, meta={"task": cfg.task_id, "stage": "online"})
    save_buffers(run.path / "buffers", trainer.buffers)
    run.close()
    rate = metrics.success_rate()
    print(f"trained {cfg.online_episodes} online episodes; "
          f"success rate (last 20): {rate:.2f}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    bundle, _, meta = load_run_state(args.ckpt)
    task = args.task or meta.get("task", cfg.task_id)
    force = {"bc": experts.SELECT_BC, "rl": experts.SELECT_RL}.get(args.force)
    res = evaluate(bundle, task, args.episodes, seed=cfg.seed, force=force,
                   gripper_dqn=bundle.gripper_q is not None)
    print(f"success_rate {res.success_rate:.3f}")
    print(f"mean_length {res.mean_length:.1f}")
    print(f"rl_ratio {res.rl_ratio:.3f}")
    print(f"switch_stats n={res.n_switches} "
          f"switch_disp={res.switch_disp_mean:.5f}+-{res.switch_disp_std:.5f} "
          f"nonswitch_disp={res.nonswitch_disp_mean:.5f}+-{res.nonswitch_disp_std:.5f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args).with_overrides({args.variant: True})
    trainer = Trainer(cfg)
    trainer.collect_demos()
    run = RunDir(args.out)
    run.write_config(cfg)
    trainer.pretrain(run)
    save_bundle(run.path / "checkpoints" / "pretrain", trainer.bundle,
                step=cfg.n_offline, meta={"task": cfg.task_id, "stage": "pretrain"})
    metrics = trainer.train_online(run)
    save_bundle(run.path / "checkpoints" / "final", trainer.bundle,
                step=cfg.online_episodes,
                meta={"task": cfg.task_id, "stage": "online", "variant": args.variant})
    save_buffers(run.path / "buffers", trainer.buffers)
    run.close()
    print(f"ablation {args.variant}: success rate (last 20) "
          f"{metrics.success_rate():.2f}")
    return 0


def cmd_serve(args) -> int:
    cfg = resolve_config(args)
    bundle = buffers = None
    if args.ckpt:
        bundle, buffers, _ = load_run_state(args.ckpt)
    host, port = _parse_listen(args.listen)
    run = RunDir(args.out) if args.out else None
    if run is not None:
        run.write_config(cfg)
    print(f"session listening on ws://{host}:{port}")
    trainer, metrics, hub = serve_session(cfg, bundle=bundle, buffers=buffers,
                                          host=host, port=port, run_dir=run)
    hub.close()
    if run is not None:
        save_bundle(run.path / "checkpoints" / "final", trainer.bundle,
                    step=cfg.online_episodes, meta={"task": cfg.task_id})
        save_buffers(run.path / "buffers", trainer.buffers)
        run.close()
    print(f"session finished after {len(metrics.episodes)} episodes; "
          f"success rate (last 20): {metrics.success_rate():.2f}")
    return 0


COMMANDS = {
    "collect-demos": cmd_collect_demos,
    "pretrain": cmd_pretrain,
    "train-online": cmd_train_online,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "serve": cmd_serve,
}


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
