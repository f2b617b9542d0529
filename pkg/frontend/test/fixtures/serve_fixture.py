"""Tiny live session for the console round-trip test.

Binds an ephemeral port, prints it, trains a couple of short episodes
while streaming, and leaves a run directory for the test to inspect.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[3] / "src"))

from moelab.labd import SessionHub, serve_session  # noqa: E402
from moelab.training import RunConfig, RunDir  # noqa: E402

out = Path(sys.argv[1])

config = RunConfig(
    task_id="drawer_place",
    seed=0,
    demo_episodes=2,
    n_offline=2,
    online_episodes=3,
    utd=1,
    batch_size=16,
    hidden=(8, 8),
    gate_hidden=(4, 4),
)

captured = {}


def factory(host, port, bridge):
    captured["hub"] = SessionHub(host, 0, bridge)
    hub = captured["hub"]
    print(f"PORT {hub.port}", flush=True)
    return hub


run = RunDir(out)
run.write_config(config)
trainer, metrics, hub = serve_session(config, run_dir=run, hub_factory=factory)
run.close()
hub.close()
print(f"DONE episodes={len(metrics.episodes)}", flush=True)
