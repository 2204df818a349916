import pytest
import yaml

from flsim import agents
from flsim.agents import ClientAgent
from flsim.bus import Bus
from flsim.errors import IllegalTransition, InvalidValue
from flsim.jobconfig import parse_job_config
from flsim.modelcore import ModelSpec, TrainConfig, init_params, param_hash
from flsim.strategy import FedAvg, fedavg_aggregate
from flsim.sync import (
    CLIENT_STAGE_NAMES,
    PHASE_NAMES,
    WORKER_STAGE_NAMES,
    Controller,
    PollStats,
    RunOptions,
    Scheduler,
    SyncState,
    Trace,
    WaitOutcome,
    WaitSpec,
    build_experiment,
    execute,
    node_poll_loop,
    run_experiment,
)

from conftest import job_doc, job_text


def test_state_names():
    assert PHASE_NAMES[2] == "In Model Aggergation"
    assert CLIENT_STAGE_NAMES[4] == "Clients Waiting for Next Round"
    assert WORKER_STAGE_NAMES[3] == "Workers busy in Aggregation"


# -- update_node_status -------------------------------------------------------------


def test_forward_transitions_within_a_round():
    st = SyncState(["c1"], ["w1"], 3)
    for stage in (1, 2):
        st.update_node_status("c1", stage)
    st.update_node_status("c1", 2, rnd=1)
    st.update_node_status("c1", 4, rnd=1)  # skipping ahead is allowed
    assert st.stage("c1", "client").stage == 4
    assert st.node_stage == {"c1": 4, "w1": 0}


@pytest.mark.parametrize(
    "setup, move",
    [
        ([(1, 0)], (0, 0)),  # backwards
        ([(1, 0)], (1, 0)),  # repeat
        ([(1, 0)], (5, 0)),  # out of range
        ([(1, 0)], (2, 1)),  # new round from stage 1
        ([(1, 0), (2, 0)], (3, 1)),  # new round not into stage 2
        ([(1, 0), (2, 0), (2, 2)], (4, 1)),  # older round
    ],
)
def test_illegal_transitions(setup, move):
    st = SyncState(["c"], [], 3)
    for stage, rnd in setup:
        st.update_node_status("c", stage, rnd=rnd)
    with pytest.raises(IllegalTransition):
        st.update_node_status("c", move[0], rnd=move[1])


def test_rollover_from_stage_four():
    st = SyncState(["c"], [], 3)
    for stage, rnd in [(1, 0), (2, 0), (2, 1), (3, 1), (4, 1), (2, 2)]:
        st.update_node_status("c", stage, rnd=rnd)
    assert st.reached("c", "client", 2, 2)
    assert not st.reached("c", "client", 2, 1)


def test_dual_role_nodes_have_independent_stages():
    st = SyncState(["n"], ["n"], 1)
    st.update_node_status("n", 1, role="worker")
    assert st.stage("n", "client").stage == 0
    assert st.node_stage == {"n": 0}
    with pytest.raises(InvalidValue):
        SyncState(["n"], [], 1).update_node_status("n", 1, role="worker")


def test_state_validation():
    with pytest.raises(InvalidValue):
        SyncState([], [], 0)
    with pytest.raises(InvalidValue):
        WaitSpec(3, timeout_ms=0)


# -- waits ----------------------------------------------------------------------------


def _controller(clients, workers, timeout=1000):
    sched = Scheduler()
    st = SyncState(clients, workers, 2)
    bus = Bus()
    agents.register_topics(bus, clients, workers)
    trace = Trace(sched.clock, lambda: st.process_phase)
    params = init_params(ModelSpec("logistic-regression", 2, 2))
    ctrl = Controller(
        state=st, bus=bus, clock=sched.clock, trace=trace, initial_params=params,
        initial_extra={}, node_timeout_ms=timeout, consensus_timeout_ms=timeout, tick_ms=100,
    )
    return sched, st, ctrl


def _run_wait(sched, ctrl, spec):
    task = sched.spawn(ctrl.wait_until(spec), name="controller", priority=0)
    sched.run(until=lambda: task.done)
    return task.result


def _bring_to(st, node, stage, rnd=1, role="client"):
    st.update_node_status(node, 1, role=role)
    st.update_node_status(node, 2, role=role)
    st.update_node_status(node, 2, role=role, rnd=rnd)
    if stage > 2:
        st.update_node_status(node, stage, role=role, rnd=rnd)


def test_wait_all_reached_returns_immediately():
    sched, st, ctrl = _controller(["a", "b"], [])
    _bring_to(st, "a", 3)
    _bring_to(st, "b", 3)
    assert _run_wait(sched, ctrl, WaitSpec(3, rnd=1)) is WaitOutcome.ALL_REACHED
    assert sched.now == 0


def test_wait_times_out_with_quorum():
    sched, st, ctrl = _controller(["a", "b"], [])
    _bring_to(st, "a", 3)
    assert _run_wait(sched, ctrl, WaitSpec(3, timeout_ms=1000, rnd=1)) is WaitOutcome.TIMED_OUT_WITH_QUORUM
    assert sched.now == 1000
    assert ctrl.misses[("b", "client")] == 1


def test_wait_times_out_empty():
    sched, st, ctrl = _controller(["a"], [])
    assert _run_wait(sched, ctrl, WaitSpec(3, timeout_ms=250, rnd=1)) is WaitOutcome.TIMED_OUT_EMPTY
    assert sched.now == 250


def test_two_misses_make_a_node_stale():
    sched, st, ctrl = _controller(["a", "b"], [])
    _bring_to(st, "a", 4)
    _run_wait(sched, ctrl, WaitSpec(3, timeout_ms=300, rnd=1))
    _run_wait(sched, ctrl, WaitSpec(4, timeout_ms=300, rnd=1))
    assert ("b", "client") in ctrl.stale
    # a stale node is no longer waited for
    start = sched.now
    assert _run_wait(sched, ctrl, WaitSpec(4, timeout_ms=300, rnd=1)) is WaitOutcome.ALL_REACHED
    assert sched.now == start


def test_min_results_decides_timeout_outcome():
    sched, st, ctrl = _controller([], ["w"])
    _bring_to(st, "w", 3, role="worker")
    spec = WaitSpec(4, ("worker",), 200, 1, min_results=lambda: False)
    assert _run_wait(sched, ctrl, spec) is WaitOutcome.TIMED_OUT_EMPTY


# -- polling --------------------------------------------------------------------------


class CountingNode:
    def __init__(self, node_id):
        self.node_id = node_id
        self.polls = 0

    def poll(self):
        self.polls += 1
        return True


def test_poll_count_is_bounded_by_interval():
    sched = Scheduler()
    stats = PollStats()
    nodes = [CountingNode(f"n{i}") for i in range(10)]
    for n in nodes:
        sched.spawn(node_poll_loop(n, 100, stats=stats, clock=sched.clock), name=n.node_id)
    sched.run(until=lambda: sched._heap[0][0] > 1000)
    assert stats.total <= 100
    assert all(n.polls <= 10 for n in nodes)


@pytest.mark.parametrize("bad", [0, -5, 1.5, True])
def test_bad_poll_interval_is_rejected_before_scheduling(bad):
    with pytest.raises(InvalidValue):
        node_poll_loop(CountingNode("x"), bad)


def test_outstanding_polls_bounded_by_node_count():
    sched = Scheduler()
    stats = PollStats()
    for i in range(1000):
        sched.spawn(node_poll_loop(CountingNode(f"n{i:04d}"), 500, stats=stats, clock=sched.clock),
                    name=f"n{i:04d}")
    sched.run(until=lambda: sched._heap[0][0] > 2000)
    assert stats.max_outstanding <= 1000
    assert stats.total == 4000


def test_scheduler_orders_ties_by_priority_then_name():
    sched = Scheduler()
    seen = []

    def task(name):
        seen.append(name)
        yield 1

    for name in ("b", "a", "controller"):
        sched.spawn(task(name), name=name, priority=0 if name == "controller" else 1)
    for _ in range(3):
        sched.step()
    assert seen == ["controller", "a", "b"]


def test_scheduler_time_limit():
    sched = Scheduler()

    def forever():
        while True:
            yield 10

    sched.spawn(forever(), name="f")
    with pytest.raises(RuntimeError):
        sched.run(max_time=100)


# -- end to end -----------------------------------------------------------------------


def test_two_clients_one_round_equals_hand_composed_fedavg():
    cfg = parse_job_config(job_text(clients=2, rounds=1))
    exp = build_experiment(cfg, RunOptions(seed=3))
    report = execute(exp)

    strat = FedAvg()
    train = TrainConfig(0.1, 16, 1)
    g = init_params(ModelSpec("logistic-regression", 3, 3, seed=3))
    updates = []
    for cid in ("client-1", "client-2"):
        c = ClientAgent(cid, strat, train, 3)
        c.load_chunk(exp.archive.download(cid), 0.8)
        c.install_global(g, {}, 1)
        updates.append(c.local_round(1))
    expected = fedavg_aggregate(updates)
    assert report.rounds[0].global_digest == param_hash(expected)
    assert report.final_global_digest == param_hash(expected)


def _run(seed=0, **kw):
    cfg = parse_job_config(job_text(**kw))
    exp = build_experiment(cfg, RunOptions(seed=seed))
    return exp, execute(exp)


def test_phase_discipline_over_trace():
    exp, report = _run(clients=4, workers=2, rounds=3)
    assert len(report.rounds) == 3
    train = exp.trace.select("train")
    agg = exp.trace.select("aggregate")
    assert train and agg
    assert all(e.phase == 1 for e in train)
    assert all(e.phase == 2 for e in agg)
    installs = [e.round for e in exp.trace.select("global-installed")]
    assert installs == sorted(set(installs)) == [1, 2, 3]
    # every client trains on the model of the round it reports for
    for e in train:
        assert exp.clients[e.actor].global_history[e.round] is not None
    # and a new global only appears after the round's aggregation
    for rnd in (1, 2, 3):
        last_agg = max(e.time for e in agg if e.round == rnd)
        inst = next(e.time for e in exp.trace.select("global-installed") if e.round == rnd)
        first_train = min(e.time for e in train if e.round == rnd)
        assert first_train <= last_agg <= inst


def test_trace_digest_is_deterministic():
    a = _run(seed=7, clients=3, workers=2, rounds=2)[1]
    b = _run(seed=7, clients=3, workers=2, rounds=2)[1]
    c = _run(seed=8, clients=3, workers=2, rounds=2)[1]
    assert a.trace_digest == b.trace_digest
    assert a.to_json() == b.to_json()
    assert a.final_global_digest != c.final_global_digest


def test_crashed_client_is_skipped_and_rejoin_rule():
    extra = [{"id": "late", "role": "client", "fault": {"kind": "crash", "round": 2, "phase": 1}}]
    exp, report = _run(clients=3, rounds=3, timeout_ms=2000, extra_nodes=extra)
    assert [r.round for r in report.rounds] == [1, 2, 3]
    assert report.rounds[0].n_updates == 4
    assert report.rounds[1].n_updates == 3
    assert "TimedOutWithQuorum" in report.rounds[1].waits
    stale = [e for e in exp.trace.select("stale") if e.detail[0][1] == "late"]
    assert {e.round for e in stale} == {2, 3}


def test_every_client_installs_the_same_global():
    _, report = _run(clients=5, workers=3, rounds=2)
    for rec in report.rounds:
        assert rec.clients_agree and rec.holders == 5
        assert set(rec.ballots.values()) == {rec.global_digest}


def test_non_deterministic_mode_still_completes():
    cfg = parse_job_config(job_text(clients=4, workers=2, rounds=2))
    r = run_experiment(cfg, RunOptions(seed=1, deterministic=False, entropy=11))
    assert len(r.rounds) == 2
    assert r.deterministic is False


def test_worker_crash_in_aggregation_keeps_running():
    extra = [{"id": "fragile", "role": "worker", "fault": {"kind": "crash", "round": 2, "phase": 2}}]
    doc = job_doc(clients=3, workers=1, rounds=3, timeout_ms=2000, consensus_timeout_s=2, extra_nodes=extra)
    cfg = parse_job_config(yaml.safe_dump(doc))
    r = run_experiment(cfg, RunOptions())
    assert [x.round for x in r.rounds] == [1, 2, 3]
    assert list(r.rounds[0].ballots) == ["fragile", "worker-1"]
    assert list(r.rounds[2].ballots) == ["worker-1"]


def test_one_malicious_one_honest_is_deterministic():
    extra = [{"id": "bad", "role": "worker", "fault": {"kind": "malicious", "mode": "negate"}}]
    a = _run(seed=2, clients=4, workers=1, rounds=3, extra_nodes=extra)[1]
    b = _run(seed=2, clients=4, workers=1, rounds=3, extra_nodes=extra)[1]
    assert [r.global_digest for r in a.rounds] == [r.global_digest for r in b.rounds]
    assert [r.winner for r in a.rounds] == [r.winner for r in b.rounds]
    # a 1-1 split is a tie, settled by the smaller digest
    for r in a.rounds:
        assert r.global_digest == min(r.ballots.values())
