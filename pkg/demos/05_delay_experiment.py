"""The propagation-delay experiment at desk scale.

Runs the full three-island pipeline (spawned as child processes) for a
shortened version of the experiment: fewer executions and fewer
subscribers, so it finishes in well under a minute. The real configuration
is one `archipelago demo delays` away.
"""

import tempfile

from archipelago.harness.config import ScenarioConfig
from archipelago.harness.delays import run_delay_experiment

cfg = ScenarioConfig(
    seed=7,
    tweet_rate=10.0,
    threatening_fraction=0.5,
    officer_count=20,
    uci_subscription_count=20,
    executions=12,
    periods=["0.5s", "1s"],
    durable=False,
).with_free_ports()

out_dir = tempfile.mkdtemp(prefix="delays_")
results = run_delay_experiment(cfg, out_dir)

for label, data in results.items():
    print(f"period {label}:")
    for island in ("ocsd", "uci"):
        s = data[island]
        print(f"  {island}: mean delay {s['mean']:.0f} ms over {s['count']} "
              f"executions (cv after warm-up {s['cv_after_skip']:.3f})")
print(f"\nCSV files and summary in {out_dir}")
print("longer periods batch more tweets per execution, so delays grow with "
      "the period while throughput per execution rises")
