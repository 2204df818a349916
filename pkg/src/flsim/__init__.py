"""flsim: a deterministic federated-learning simulator.

Typical use::

    from flsim import load_job_config, run_experiment, RunOptions, HashChainLedger

    cfg = load_job_config("jobs/fedavg_dirichlet.yaml")
    ledger = HashChainLedger()
    report = run_experiment(cfg, RunOptions(seed=7, ledger=ledger))
"""

from .consensus import (
    CONSENSUS,
    Ballot,
    ConsensusInput,
    Decision,
    four_phase_round,
    majority_hash_consensus,
    malicious_worker_wrapper,
    register_consensus,
    run_consensus,
)
from .errors import FLSimError
from .jobconfig import JobConfig, load_job_config, parse_job_config, resolve_roles, serialize_job_config
from .ledger import HashChainLedger, load_ledger
from .modelcore import ModelSpec, ParamVector, TrainConfig, evaluate, init_params, loss_and_grad, param_hash, train_local
from .partition import Dataset, dirichlet_partition, iid_partition, prepare_root_dataset
from .strategy import STRATEGIES, ClientUpdate, ServerState, StrategyConfig, register_strategy
from .sync import ExperimentReport, RoundRecord, RunOptions, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Ballot",
    "CONSENSUS",
    "ClientUpdate",
    "ConsensusInput",
    "Dataset",
    "Decision",
    "ExperimentReport",
    "FLSimError",
    "HashChainLedger",
    "JobConfig",
    "ModelSpec",
    "ParamVector",
    "RoundRecord",
    "RunOptions",
    "STRATEGIES",
    "ServerState",
    "StrategyConfig",
    "TrainConfig",
    "dirichlet_partition",
    "evaluate",
    "four_phase_round",
    "iid_partition",
    "init_params",
    "load_job_config",
    "load_ledger",
    "loss_and_grad",
    "majority_hash_consensus",
    "malicious_worker_wrapper",
    "param_hash",
    "parse_job_config",
    "prepare_root_dataset",
    "register_consensus",
    "register_strategy",
    "resolve_roles",
    "run_consensus",
    "run_experiment",
    "serialize_job_config",
    "train_local",
]
