"""A poisoning worker against honest majorities of different sizes.

With two or three honest workers the honest digest wins every round and the
run matches the clean baseline bit for bit. Alone, the poisoner wins.

    python3 demos/05_byzantine.py
"""

import yaml

from flsim import RunOptions, parse_job_config, run_experiment

BASE = """
dataset:
  name: synthetic-blobs
  params: {n_samples: 600, n_features: 4, n_classes: 3, cluster_std: 1.0}
  partitioner: iid
consensus: {name: majority-hash, timeout_s: 30}
topology: {kind: client-server}
strategy:
  name: fedavg
  model: {kind: logistic-regression}
  train: {learning_rate: 0.1, batch_size: 16, local_epochs: 1}
  total_rounds: 5
node_defaults: {poll_interval_ms: 100, timeout_ms: 30000}
nodes: []
"""


def job(malicious, honest):
    doc = yaml.safe_load(BASE)
    doc["nodes"].append({"id": "client", "role": "client", "count": 10})
    if honest:
        doc["nodes"].append({"id": "worker", "role": "worker", "count": honest})
    for i in range(malicious):
        doc["nodes"].append({"id": f"bad-{i}", "role": "worker", "fault": {"kind": "malicious", "mode": "negate"}})
    return parse_job_config(yaml.safe_dump(doc))


for m, h in ((0, 2), (1, 2), (1, 3), (1, 0)):
    report = run_experiment(job(m, h), RunOptions(seed=0))
    winners = sorted({r.winner for r in report.rounds})
    print(f"{m}M-{h}H  final accuracy {report.rounds[-1].accuracy:.3f}  "
          f"final digest {report.final_global_digest[:12]}  winners {winners}")
