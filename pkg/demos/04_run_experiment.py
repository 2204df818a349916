"""A full experiment from a job file, then the same run again to show it repeats exactly.

    python3 demos/04_run_experiment.py
"""

from pathlib import Path

from flsim import HashChainLedger, RunOptions, load_job_config, run_experiment
from flsim.runner import metrics_csv, summary_text

job = Path(__file__).resolve().parents[1] / "jobs" / "fedavg_dirichlet.yaml"
cfg = load_job_config(job)
print(f"{len(cfg.clients())} clients, {len(cfg.workers())} worker, {cfg.strategy.total_rounds} rounds\n")

ledger = HashChainLedger()
report = run_experiment(cfg, RunOptions(seed=7, ledger=ledger))
print(summary_text(report))
print()
print(metrics_csv(report))

again = run_experiment(cfg, RunOptions(seed=7))
print("second run identical:", metrics_csv(again) == metrics_csv(report))
print("virtual time", report.virtual_ms, "ms; polls", report.polls)
