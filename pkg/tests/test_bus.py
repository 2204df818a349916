import threading

import pytest
from hypothesis import given, settings, strategies as st

from flsim.bus import Bus, client_params_topic, control_stage_topic, worker_aggregate_topic
from flsim.errors import UnknownTopic


def make_bus(**kw):
    bus = Bus(**kw)
    for t in ("a", "b"):
        bus.register_topic(t)
    return bus


def test_topic_names():
    assert client_params_topic("c1") == "client/c1/params"
    assert worker_aggregate_topic("w") == "worker/w/aggregate"
    assert control_stage_topic("n") == "control/stage/n"


def test_unknown_topic_is_rejected():
    bus = make_bus()
    with pytest.raises(UnknownTopic):
        bus.publish("nope", "k", b"x", "p")
    with pytest.raises(UnknownTopic):
        bus.subscribe("nope", "n")
    with pytest.raises(UnknownTopic):
        bus.get("nope", "k")


def test_publish_delivers_and_counts_bytes():
    bus = make_bus()
    bus.subscribe("a", "n1")
    bus.subscribe("a", "n2")
    bus.publish("a", "k", b"12345", "p")
    assert [m.payload for m in bus.drain("n1")] == [b"12345"]
    assert bus.drain("n1") == []
    row = bus.traffic_snapshot(0)
    assert (row.sent, row.received, row.messages, row.deliveries) == (5, 10, 1, 2)
    assert bus.traffic.sent_by_node["p"] == 5
    assert bus.traffic.received_by_node["n2"] == 5


def test_get_is_free_last_value():
    bus = make_bus()
    assert bus.get("a", "k") is None
    bus.publish("a", "k", b"one", "p")
    bus.publish("a", "k", b"three", "p")
    before = bus.traffic_snapshot()
    assert bus.get("a", "k") == b"three"
    after = bus.traffic_snapshot()
    assert (before.sent, before.received) == (after.sent, after.received)


def test_subscription_only_affects_future_publishes():
    bus = make_bus()
    bus.publish("a", "k", b"early", "p")
    bus.subscribe("a", "n")
    bus.publish("a", "k", b"late", "p")
    assert [m.payload for m in bus.drain("n")] == [b"late"]
    bus.unsubscribe("a", "n")
    bus.publish("a", "k", b"gone", "p")
    assert bus.drain("n") == []


def test_callback_subscribers():
    bus = make_bus()
    got = []
    bus.subscribe("a", "n", got.append)
    bus.publish("a", "k", b"x", "p")
    assert got[0].payload == b"x" and got[0].publisher == "p"


def test_per_round_attribution():
    bus = make_bus()
    bus.subscribe("a", "n")
    bus.set_round(1)
    bus.publish("a", "k", b"xx", "p")
    bus.set_round(2)
    bus.publish("a", "k", b"yyy", "p")
    assert bus.traffic_snapshot(1).sent == 2
    assert bus.traffic_snapshot(2).received == 3
    assert bus.traffic_snapshot().sent == 5
    assert bus.traffic_snapshot(2).received_with_prefix("a") == 3


def test_queued_delivery_with_latency():
    now = [0]
    bus = make_bus(synchronous=False, clock=lambda: now[0], latency=lambda src, dst: 10)
    bus.subscribe("a", "n")
    bus.publish("a", "k", b"x", "p")
    assert bus.flush() == 0 and bus.pending() == 1
    now[0] = 10
    assert bus.flush() == 1
    assert len(bus.drain("n")) == 1


@given(st.lists(st.tuples(st.sampled_from("ab"), st.binary(max_size=40)), max_size=30), st.integers(0, 4))
@settings(max_examples=60, deadline=None)
def test_byte_totals_are_exact(messages, n_subs):
    bus = make_bus()
    for i in range(n_subs):
        bus.subscribe("a", f"s{i}")
    bus.subscribe("b", "only-b")
    sent = sum(len(p) for _, p in messages)
    received = sum(len(p) * (n_subs if t == "a" else 1) for t, p in messages)
    for t, p in messages:
        bus.publish(t, "k", p, "pub")
    total = bus.traffic_snapshot()
    assert total.sent == sent == bus.traffic.total_sent
    assert total.received == received == bus.traffic.total_received


def test_concurrent_publishers_are_all_counted():
    bus = make_bus()
    bus.subscribe("a", "n")

    def work(i):
        for _ in range(200):
            bus.publish("a", str(i), b"abcd", f"p{i}")

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert bus.traffic_snapshot().sent == 4 * 200 * 4
    assert len(bus.drain("n")) == 800
