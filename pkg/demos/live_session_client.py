"""
Steering a live session from a script
=====================================

`serve_session` runs online training while streaming every environment
step over a local WebSocket. Here a scripted client connects, watches a
few frames, grabs the arm for five steps, and lets go. The same protocol
drives the browser console; see docs/protocol.md for the full message
reference.
"""

import threading

import numpy as np

from moelab.labd import SessionClient, SessionHub, serve_session
from moelab.training import RunConfig

config = RunConfig(
    task_id="drawer_place",
    seed=0,
    demo_episodes=4,
    n_offline=100,
    online_episodes=4,
    utd=1,
    batch_size=32,
    hidden=(32, 32),
    gate_hidden=(16, 16),
)

# bind port 0 so the OS picks a free one, and capture the hub to read it
captured = {}


def factory(host, port, bridge):
    captured["hub"] = SessionHub(host, 0, bridge)
    return captured["hub"]


result = {}


def serve():
    trainer, metrics, _ = serve_session(config, hub_factory=factory)
    result["trainer"] = trainer


server = threading.Thread(target=serve, daemon=True)
server.start()
while "hub" not in captured:
    pass
hub = captured["hub"]
print(f"session on ws://{hub.host}:{hub.port}")

client = SessionClient(hub.host, hub.port)
print("server says:", client.recv_kind("hello")["payload"])

frame = client.recv_kind("state_frame")["payload"]
print(f"watching episode {frame['episode']}: ee at {frame['ee']}, "
      f"gate selected {frame['gate']['selected']}")

# five intervention ticks pushing the arm to the right, then release
for _ in range(5):
    client.send("intervene", {"dx": 1.0, "dy": 0.0, "gripper": 1})
client.send("release")

done = client.recv_kind("episode_end")["payload"]
print(f"episode {done['episode']} ended: success={done['success']} "
      f"after {done['length']} steps")

server.join()
replay = result["trainer"].buffers.replay
n = int(np.sum(replay.column("intervened")))
print(f"the run recorded exactly {n} intervened transitions")
client.close()
hub.close()
