import sys
from pathlib import Path

import pytest
import yaml

ROOT = Path(__file__).resolve().parents[1]
JOBS = ROOT / "jobs"
sys.path.insert(0, str(Path(__file__).resolve().parent))


def job_doc(
    *,
    clients=2,
    workers=1,
    rounds=1,
    strategy="fedavg",
    dataset=None,
    partitioner="iid",
    partitioner_params=None,
    topology=None,
    consensus="majority-hash",
    consensus_timeout_s=30,
    timeout_ms=30000,
    poll_ms=100,
    model=None,
    train=None,
    aggregation=None,
    extra_nodes=(),
):
    """A valid job document as a plain dict; tests mutate it before dumping."""
    nodes = []
    if clients:
        nodes.append({"id": "client", "role": "client", "count": clients})
    if workers:
        nodes.append({"id": "worker", "role": "worker", "count": workers})
    nodes.extend(extra_nodes)
    strat = {
        "name": strategy,
        "model": model or {"kind": "logistic-regression"},
        "train": train or {"learning_rate": 0.1, "batch_size": 16, "local_epochs": 1},
        "total_rounds": rounds,
    }
    if aggregation:
        strat["aggregation"] = aggregation
    return {
        "dataset": {
            "name": "synthetic-blobs",
            "params": dataset or {"n_samples": 200, "n_features": 3, "n_classes": 3},
            "partitioner": partitioner,
            "partitioner_params": partitioner_params or {},
            "train_fraction": 0.8,
            "seed": 0,
        },
        "consensus": {"name": consensus, "timeout_s": consensus_timeout_s},
        "topology": topology or {"kind": "client-server"},
        "strategy": strat,
        "node_defaults": {"poll_interval_ms": poll_ms, "timeout_ms": timeout_ms},
        "nodes": nodes,
    }


def job_text(**kw) -> str:
    return yaml.safe_dump(job_doc(**kw), sort_keys=False)


@pytest.fixture
def make_job():
    return job_text


# -- acceptance reporting ---------------------------------------------------------------


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, ok, seconds, note = ACCEPTANCE_RESULTS[number]
        status = "PASS" if ok else "FAIL"
        line = f"{status}  criterion {number}  {name}  ({seconds:.2f} s)"
        if note:
            line += f"  {note}"
        terminalreporter.write_line(line)
