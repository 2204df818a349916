"""The controller task: initialization, then phase 1 / phase 2 / consensus per round.

Waits per round (all on virtual time):

    W1  clients reach stage 3 (training)         node timeout
    W2  clients reach stage 4 (uploaded)         node timeout
    W3  workers reach stage 3 (aggregating)      node timeout
    W4  workers reach stage 4, or the timeout    consensus timeout
        expires with at least one aggregate

A wait that times out with nothing to show aborts the round: the global model
is kept and the next round starts. A node that misses two consecutive waits is
treated as stale for the rest of the round and expected again next round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Mapping, Optional

from .. import agents
from ..bus import CONSENSUS_BALLOTS, CONTROL_PHASE, Bus, Message, control_stage_topic, worker_aggregate_topic
from ..consensus import Ballot, ConsensusInput, Decision, decide
from ..modelcore import ParamVector, param_hash
from .state import SyncState, WaitOutcome, WaitSpec
from .trace import Trace

PHASE_KEY = "state"
CONTROLLER = "controller"


@dataclass
class RoundResult:
    round: int
    decision: Optional[Decision]
    started_ms: int
    finished_ms: int
    uploads: dict[str, dict] = field(default_factory=dict)
    ballots: dict[str, str] = field(default_factory=dict)
    waits: list[str] = field(default_factory=list)
    aborted: str = ""


class Controller:
    def __init__(
        self,
        *,
        state: SyncState,
        bus: Bus,
        clock: Callable[[], int],
        trace: Trace,
        initial_params: ParamVector,
        initial_extra: Mapping[str, ParamVector],
        node_timeout_ms: int,
        consensus_timeout_ms: int,
        tick_ms: int,
        consensus_name: str = "majority-hash",
        hyperparams: Mapping[str, Any] | None = None,
        ledger=None,
        delegate_to_ledger: bool = False,
        on_round: Optional[Callable[[RoundResult], None]] = None,
    ):
        self.state = state
        self.bus = bus
        self.clock = clock
        self.trace = trace
        self.initial_params = initial_params
        self.initial_extra = dict(initial_extra)
        self.node_timeout_ms = node_timeout_ms
        self.consensus_timeout_ms = consensus_timeout_ms
        self.tick_ms = max(1, int(tick_ms))
        self.consensus_name = consensus_name
        self.hyperparams = dict(hyperparams or {})
        self.ledger = ledger
        self.delegate_to_ledger = delegate_to_ledger
        self.on_round = on_round
        self.misses: dict[tuple[str, str], int] = {}
        self.stale: set[tuple[str, str]] = set()
        self.uploads: dict[int, dict[str, dict]] = {}
        self.ballots: dict[int, dict[str, Ballot]] = {}
        self.bundles: dict[int, dict[str, agents.Bundle]] = {}
        self.results: list[RoundResult] = []
        self.installs: list[tuple[int, str]] = []
        self._subscribe()

    # -- bus wiring -------------------------------------------------------------------

    def _subscribe(self) -> None:
        nodes = sorted(set(self.state.clients) | set(self.state.workers))
        for n in nodes:
            self.bus.subscribe(control_stage_topic(n), CONTROLLER, self._on_stage)
        for w in self.state.workers:
            self.bus.subscribe(worker_aggregate_topic(w), CONTROLLER, self._on_aggregate)
        self.bus.subscribe(CONSENSUS_BALLOTS, CONTROLLER, self._on_ballot)

    def _on_stage(self, msg: Message) -> None:
        doc = json.loads(msg.payload)
        node, role, stage, rnd = doc["node"], doc["role"], doc["stage"], doc["round"]
        self.state.update_node_status(node, stage, role=role, rnd=rnd)
        if role == "client" and stage == 4:
            self.uploads.setdefault(rnd, {})[node] = doc

    def _on_ballot(self, msg: Message) -> None:
        b = Ballot.decode(msg.payload)
        self.ballots.setdefault(b.round, {})[b.worker] = b

    def _on_aggregate(self, msg: Message) -> None:
        bundle = agents.decode_bundle(msg.payload)
        self.bundles.setdefault(int(bundle.meta["round"]), {})[bundle.meta["node"]] = bundle

    def _valid_aggregates(self, rnd: int) -> dict[str, ParamVector]:
        """Aggregates whose published parameters hash to the worker's ballot digest."""
        out = {}
        ballots = self.ballots.get(rnd, {})
        for w, bundle in sorted(self.bundles.get(rnd, {}).items()):
            b = ballots.get(w)
            if b is not None and bundle.params is not None and b.matches(bundle.params):
                out[w] = bundle.params
        return out

    def _publish_phase(self) -> None:
        st = self.state
        payload = json.dumps(st.phase_record(), sort_keys=True, separators=(",", ":")).encode()
        self.bus.publish(CONTROL_PHASE, PHASE_KEY, payload, CONTROLLER)
        self.trace.record(CONTROLLER, "phase", st.global_round, value=st.process_phase,
                          job=st.download_job_config, dataset=st.download_dataset, finished=st.finished)

    # -- waiting -----------------------------------------------------------------------

    def wait_until(self, spec: WaitSpec) -> Generator[int, None, WaitOutcome]:
        st = self.state
        start = self.clock()
        while True:
            members = [
                (n, role) for role in spec.roles for n in st.members(role) if (n, role) not in self.stale
            ]
            reached = [m for m in members if st.reached(m[0], m[1], spec.target, spec.rnd)]
            if len(reached) == len(members):
                outcome = WaitOutcome.ALL_REACHED
                break
            elapsed = self.clock() - start
            if elapsed >= spec.timeout_ms:
                done = set(reached)
                for m in members:
                    if m not in done:
                        self.misses[m] = self.misses.get(m, 0) + 1
                        if self.misses[m] >= 2:
                            self.stale.add(m)
                            self.trace.record(CONTROLLER, "stale", spec.rnd, node=m[0], role=m[1])
                ok = spec.min_results() if spec.min_results is not None else bool(reached)
                outcome = WaitOutcome.TIMED_OUT_WITH_QUORUM if ok else WaitOutcome.TIMED_OUT_EMPTY
                break
            yield min(self.tick_ms, spec.timeout_ms - elapsed)
        for m in reached:
            self.misses[m] = 0
        self.trace.record(CONTROLLER, "wait", spec.rnd, label=spec.label, outcome=outcome.value,
                          reached=len(reached), expected=len(members))
        return outcome

    # -- main loop ----------------------------------------------------------------------

    def run(self) -> Generator[int, None, list[RoundResult]]:
        st = self.state
        everyone = ("client", "worker")
        self.bus.set_round(1)
        self._publish_phase()

        st.download_job_config = True
        self._publish_phase()
        yield from self.wait_until(WaitSpec(1, everyone, self.node_timeout_ms, 0, label="init-job"))
        st.download_dataset = True
        self._publish_phase()
        yield from self.wait_until(WaitSpec(2, everyone, self.node_timeout_ms, 0, label="init-dataset"))

        agents.publish_global(self.bus, self.initial_params, self.initial_extra, 1)
        st.global_param_ref = param_hash(self.initial_params)

        while st.global_round <= st.total_rounds:
            rnd = st.global_round
            self.bus.set_round(rnd)
            self.stale.clear()
            self.misses.clear()
            result = RoundResult(rnd, None, self.clock(), self.clock())

            st.process_phase = 1
            self._publish_phase()
            outcome = yield from self.wait_until(
                WaitSpec(3, ("client",), self.node_timeout_ms, rnd, label="W1")
            )
            result.waits.append(outcome.value)
            if outcome is not WaitOutcome.TIMED_OUT_EMPTY:
                outcome = yield from self.wait_until(
                    WaitSpec(4, ("client",), self.node_timeout_ms, rnd, label="W2")
                )
                result.waits.append(outcome.value)
            if outcome is WaitOutcome.TIMED_OUT_EMPTY:
                self._finish_round(result, "no client completed local training")
                continue

            st.process_phase = 2
            self._publish_phase()
            outcome = yield from self.wait_until(
                WaitSpec(3, ("worker",), self.node_timeout_ms, rnd, label="W3")
            )
            result.waits.append(outcome.value)
            if outcome is not WaitOutcome.TIMED_OUT_EMPTY:
                outcome = yield from self.wait_until(
                    WaitSpec(4, ("worker",), self.consensus_timeout_ms, rnd, label="W4",
                             min_results=lambda r=rnd: bool(self._valid_aggregates(r)))
                )
                result.waits.append(outcome.value)
            aggregates = self._valid_aggregates(rnd)
            if outcome is WaitOutcome.TIMED_OUT_EMPTY or not aggregates:
                self._finish_round(result, "no worker produced an aggregate")
                continue

            self._consensus(result, aggregates)
            self._finish_round(result, "")

        st.finished = True
        self._publish_phase()
        return self.results

    def _consensus(self, result: RoundResult, aggregates: dict[str, ParamVector]) -> None:
        rnd = result.round
        ballots = self.ballots.get(rnd, {})
        hyper = dict(self.hyperparams)
        hyper.setdefault("sample_counts", {w: ballots[w].n_samples for w in aggregates})
        inp = ConsensusInput(aggregates, hyper)
        self._ledger_inputs(rnd, aggregates)
        if self.ledger is not None and self.delegate_to_ledger:
            decision = self.ledger.run_delegated_consensus(lambda i: decide(self.consensus_name, i), inp, rnd)
        else:
            decision = decide(self.consensus_name, inp)
            if self.ledger is not None:
                self.ledger.append("consensus-decision", rnd, decision.worker, decision.digest)
        self.trace.record(CONTROLLER, "consensus", rnd, winner=decision.worker, digest=decision.digest)

        source = decision.worker if decision.worker in aggregates else min(aggregates)
        extra = self.bundles[rnd][source].extra
        # Only place the global model changes.
        agents.publish_global(self.bus, decision.params, extra, rnd + 1)
        self.state.global_param_ref = decision.digest
        self.installs.append((rnd, decision.digest))
        if self.ledger is not None:
            self.ledger.append("global-param", rnd, CONTROLLER, decision.digest)
        self.trace.record(CONTROLLER, "global-installed", rnd, digest=decision.digest)
        result.decision = decision
        result.ballots = {w: ballots[w].digest for w in sorted(aggregates)}

    def _ledger_inputs(self, rnd: int, aggregates: Mapping[str, ParamVector]) -> None:
        if self.ledger is None:
            return
        for node, doc in sorted(self.uploads.get(rnd, {}).items()):
            self.ledger.append("client-param", rnd, node, doc["digest"])
        ballots = self.ballots.get(rnd, {})
        for w in sorted(aggregates):
            self.ledger.append("worker-aggregate", rnd, w, ballots[w].digest)

    def _finish_round(self, result: RoundResult, aborted: str) -> None:
        rnd = result.round
        if aborted:
            result.aborted = aborted
            if self.ledger is not None:
                for node, doc in sorted(self.uploads.get(rnd, {}).items()):
                    self.ledger.append("client-param", rnd, node, doc["digest"])
            self.trace.record(CONTROLLER, "round-aborted", rnd, reason=aborted)
        result.uploads = dict(sorted(self.uploads.get(rnd, {}).items()))
        result.finished_ms = self.clock()
        self.results.append(result)
        if self.on_round is not None:
            self.on_round(result)
        self.state.global_round += 1
