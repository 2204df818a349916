"""Provenance: every round's inputs and outcome sit in a hash chain.

Export the ledger, tamper with one line, and the verifier names the line.

    python3 demos/07_ledger_provenance.py
"""

import tempfile
from pathlib import Path

from flsim import HashChainLedger, RunOptions, load_job_config, load_ledger, run_experiment

job = Path(__file__).resolve().parents[1] / "jobs" / "byzantine_1m2h.yaml"
ledger = HashChainLedger()
report = run_experiment(load_job_config(job), RunOptions(seed=7, ledger=ledger))

print("round 1 provenance:")
for e in ledger.provenance(1):
    print(f"  #{e.index:<3d} {e.kind:18s} {e.node:12s} {e.payload_digest[:16]}")
print("entries per round:", {r.round: sum(ledger.counts(r.round).values()) for r in report.rounds})
print("chain verifies:", ledger.verify_chain().ok)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "ledger.jsonl"
    ledger.export(path)
    lines = path.read_text().splitlines()
    lines[5] = lines[5].replace('"node":"', '"node":"x', 1)
    path.write_text("\n".join(lines) + "\n")
    _, result = load_ledger(path)
    print(f"after editing line 5: ok={result.ok}, first bad index={result.bad_index}")
