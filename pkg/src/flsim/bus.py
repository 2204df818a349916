"""In-process pub-sub broker with a last-value store and exact byte accounting.

Topics must be registered before use. ``publish`` stores the payload as the
latest value for ``(topic, key)`` and delivers a copy to every current
subscriber. Each delivery counts ``size_bytes`` once against the subscriber's
received total; the publish itself counts once against the publisher's sent
total. ``get`` is a local read of the latest value and costs nothing.

Delivery is synchronous by default. With ``synchronous=False`` messages queue
until :meth:`Bus.flush`; a ``latency`` function adds per-link virtual delay
(messages become deliverable once ``clock() >= publish_time + delay``).

Topic names used by the simulator (bit-exact)::

    global/params  client/<id>/params  worker/<id>/aggregate
    control/phase  control/stage/<id>  consensus/ballots
"""

from __future__ import annotations

import heapq
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import UnknownTopic

GLOBAL_PARAMS = "global/params"
CONTROL_PHASE = "control/phase"
CONSENSUS_BALLOTS = "consensus/ballots"


def client_params_topic(node: str) -> str:
    return f"client/{node}/params"


def worker_aggregate_topic(node: str) -> str:
    return f"worker/{node}/aggregate"


def control_stage_topic(node: str) -> str:
    return f"control/stage/{node}"


@dataclass(frozen=True)
class Message:
    topic: str
    key: str
    payload: bytes
    publisher: str
    seq: int
    round: int = 0

    @property
    def size_bytes(self) -> int:
        return len(self.payload)


@dataclass
class TrafficRow:
    round: int
    sent: int = 0
    received: int = 0
    messages: int = 0
    deliveries: int = 0
    by_topic_sent: dict[str, int] = field(default_factory=dict)
    by_topic_received: dict[str, int] = field(default_factory=dict)

    def received_with_prefix(self, prefix: str) -> int:
        return sum(v for t, v in self.by_topic_received.items() if t.startswith(prefix))

    def sent_with_prefix(self, prefix: str) -> int:
        return sum(v for t, v in self.by_topic_sent.items() if t.startswith(prefix))


@dataclass
class TrafficLedger:
    sent_by_node: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    received_by_node: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    sent_by_topic: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    received_by_topic: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    rounds: dict[int, TrafficRow] = field(default_factory=dict)

    def row(self, rnd: int) -> TrafficRow:
        if rnd not in self.rounds:
            self.rounds[rnd] = TrafficRow(rnd)
        return self.rounds[rnd]

    @property
    def total_sent(self) -> int:
        return sum(self.sent_by_node.values())

    @property
    def total_received(self) -> int:
        return sum(self.received_by_node.values())


Subscriber = Callable[[Message], None]


class Bus:
    def __init__(
        self,
        *,
        synchronous: bool = True,
        clock: Optional[Callable[[], int]] = None,
        latency: Optional[Callable[[str, str], int]] = None,
    ):
        self.synchronous = synchronous
        self.clock = clock or (lambda: 0)
        self.latency = latency
        self.traffic = TrafficLedger()
        self.round = 0
        self._topics: set[str] = set()
        self._store: dict[tuple[str, str], bytes] = {}
        self._seq: dict[str, int] = defaultdict(int)
        self._subs: dict[str, dict[str, Optional[Subscriber]]] = defaultdict(dict)
        self._inbox: dict[str, deque[Message]] = defaultdict(deque)
        self._pending: list[tuple[int, int, Message, str]] = []
        self._pending_seq = 0
        self._lock = threading.RLock()

    # -- topics and subscriptions ------------------------------------------------

    def register_topic(self, topic: str) -> None:
        with self._lock:
            self._topics.add(topic)

    def topics(self) -> list[str]:
        return sorted(self._topics)

    def _require(self, topic: str) -> None:
        if topic not in self._topics:
            raise UnknownTopic(topic)

    def subscribe(self, topic: str, node: str, callback: Optional[Subscriber] = None) -> None:
        """Future publishes on ``topic`` reach ``node`` (callback, else its inbox)."""
        with self._lock:
            self._require(topic)
            self._subs[topic][node] = callback

    def unsubscribe(self, topic: str, node: str) -> None:
        with self._lock:
            self._require(topic)
            self._subs[topic].pop(node, None)

    def subscribers(self, topic: str) -> list[str]:
        return sorted(self._subs.get(topic, {}))

    # -- publish / read ---------------------------------------------------------------

    def publish(self, topic: str, key: str, payload: bytes, publisher: str) -> int:
        with self._lock:
            self._require(topic)
            self._seq[topic] += 1
            msg = Message(topic, key, bytes(payload), publisher, self._seq[topic], self.round)
            self._store[(topic, key)] = msg.payload
            size = msg.size_bytes
            t = self.traffic
            t.sent_by_node[publisher] += size
            t.sent_by_topic[topic] += size
            row = t.row(self.round)
            row.sent += size
            row.messages += 1
            row.by_topic_sent[topic] = row.by_topic_sent.get(topic, 0) + size
            targets = sorted(self._subs.get(topic, {}))
            for node in targets:
                self._account_delivery(msg, node)
            deliver_now = self.synchronous and self.latency is None
            if deliver_now:
                for node in targets:
                    self._deliver(msg, node)
            else:
                now = self.clock()
                for node in targets:
                    delay = self.latency(publisher, node) if self.latency else 0
                    self._pending_seq += 1
                    heapq.heappush(self._pending, (now + delay, self._pending_seq, msg, node))
                if self.synchronous:
                    self.flush()
            return msg.seq

    def _account_delivery(self, msg: Message, node: str) -> None:
        size = msg.size_bytes
        t = self.traffic
        t.received_by_node[node] += size
        t.received_by_topic[msg.topic] += size
        row = t.row(self.round)
        row.received += size
        row.deliveries += 1
        row.by_topic_received[msg.topic] = row.by_topic_received.get(msg.topic, 0) + size

    def _deliver(self, msg: Message, node: str) -> None:
        callback = self._subs.get(msg.topic, {}).get(node)
        if callback is not None:
            callback(msg)
        else:
            self._inbox[node].append(msg)

    def flush(self) -> int:
        """Deliver every queued message whose due time has passed; returns the count."""
        delivered = 0
        while True:
            with self._lock:
                if not self._pending or self._pending[0][0] > self.clock():
                    return delivered
                _, _, msg, node = heapq.heappop(self._pending)
            self._deliver(msg, node)
            delivered += 1

    def pending(self) -> int:
        return len(self._pending)

    def get(self, topic: str, key: str) -> Optional[bytes]:
        with self._lock:
            self._require(topic)
            return self._store.get((topic, key))

    def drain(self, node: str) -> list[Message]:
        """Remove and return every message waiting in ``node``'s inbox, in arrival order."""
        with self._lock:
            box = self._inbox.get(node)
            if not box:
                return []
            out = list(box)
            box.clear()
            return out

    # -- accounting -------------------------------------------------------------------

    def set_round(self, rnd: int) -> None:
        self.round = rnd

    def traffic_snapshot(self, rnd: Optional[int] = None) -> TrafficRow:
        """Per-round row, or a cumulative row across all rounds when ``rnd`` is None."""
        with self._lock:
            if rnd is not None:
                src = self.traffic.rounds.get(rnd, TrafficRow(rnd))
                return TrafficRow(
                    src.round,
                    src.sent,
                    src.received,
                    src.messages,
                    src.deliveries,
                    dict(src.by_topic_sent),
                    dict(src.by_topic_received),
                )
            total = TrafficRow(-1)
            for row in self.traffic.rounds.values():
                total.sent += row.sent
                total.received += row.received
                total.messages += row.messages
                total.deliveries += row.deliveries
                for k, v in row.by_topic_sent.items():
                    total.by_topic_sent[k] = total.by_topic_sent.get(k, 0) + v
                for k, v in row.by_topic_received.items():
                    total.by_topic_received[k] = total.by_topic_received.get(k, 0) + v
            return total
