"""The three built-in aggregation strategies on the same Dirichlet split.

    python3 demos/03_strategies.py
"""

from pathlib import Path

from flsim import RunOptions, load_job_config, run_experiment

JOBS = Path(__file__).resolve().parents[1] / "jobs"

for name in ("fedavg_dirichlet", "fedavgm_dirichlet", "scaffold_dirichlet"):
    cfg = load_job_config(JOBS / f"{name}.yaml")
    report = run_experiment(cfg, RunOptions(seed=7))
    curve = " ".join(f"{r.accuracy:.3f}" for r in report.rounds)
    print(f"{cfg.strategy.name:9s} accuracy per round: {curve}")
