import hashlib
import json

import pytest
from hypothesis import given, settings, strategies as st

from flsim.ledger import GENESIS_HASH, HashChainLedger, LedgerEntry, load_ledger, verify_entries

KINDS = ["client-param", "worker-aggregate", "consensus-decision", "global-param"]


def filled(n=6):
    led = HashChainLedger()
    for i in range(n):
        led.append(KINDS[i % 4], i // 4 + 1, f"n{i}", hashlib.sha256(str(i).encode()).hexdigest())
    return led


def test_genesis_and_links():
    led = HashChainLedger()
    e0 = led.append("client-param", 1, "c", "ab" * 32)
    e1 = led.append("global-param", 1, "controller", "cd" * 32)
    assert e0.index == 0 and e0.prev_hash == GENESIS_HASH == "0" * 64
    assert e1.prev_hash == e0.entry_hash
    text = f"0|{GENESIS_HASH}|client-param|1|c|{'ab' * 32}"
    assert e0.entry_hash == hashlib.sha256(text.encode()).hexdigest()
    assert led.verify_chain()


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        HashChainLedger().append("vote", 1, "n", "x")


def test_provenance_and_counts():
    led = filled(8)
    assert [e.index for e in led.provenance(1)] == [0, 1, 2, 3]
    assert led.counts(2) == {k: 1 for k in KINDS}
    assert led.provenance(9) == []


def test_export_format(tmp_path):
    led = filled(3)
    path = tmp_path / "l.jsonl"
    led.export(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    doc = json.loads(lines[1])
    assert list(doc) == ["index", "prev_hash", "kind", "round", "node", "payload_digest", "entry_hash"]
    assert " " not in lines[1]
    loaded, res = load_ledger(path)
    assert res.ok and [e.entry_hash for e in loaded.entries] == [e.entry_hash for e in led.entries]


@pytest.mark.parametrize("field", ["prev_hash", "kind", "round", "node", "payload_digest", "entry_hash", "index"])
def test_any_field_mutation_is_detected(field):
    led = filled(6)
    entries = led.entries
    e = entries[3]
    changes = {
        "prev_hash": "1" + e.prev_hash[1:],
        "kind": "global-param" if e.kind != "global-param" else "client-param",
        "round": e.round + 1,
        "node": e.node + "x",
        "payload_digest": "f" + e.payload_digest[1:] if e.payload_digest[0] != "f" else "e" + e.payload_digest[1:],
        "entry_hash": "0" + e.entry_hash[1:] if e.entry_hash[0] != "0" else "1" + e.entry_hash[1:],
        "index": 7,
    }
    doc = {k: getattr(e, k) for k in LedgerEntry.__dataclass_fields__}
    doc[field] = changes[field]
    entries[3] = LedgerEntry(**doc)
    res = verify_entries(entries)
    assert not res.ok and res.bad_index == 3


@given(st.integers(0, 9), st.integers(0, 400), st.integers(0, 7))
@settings(max_examples=150, deadline=None)
def test_single_bit_flip_in_export_is_detected(tmp_path_factory, line_no, offset, bit):
    led = filled(10)
    path = tmp_path_factory.mktemp("l") / "ledger.jsonl"
    led.export(path)
    lines = path.read_bytes().split(b"\n")
    line = bytearray(lines[line_no])
    pos = offset % len(line)
    line[pos] ^= 1 << bit
    lines[line_no] = bytes(line)
    path.write_bytes(b"\n".join(lines))
    _, res = load_ledger(path)
    assert not res.ok
    assert res.bad_index == line_no


def test_truncated_file_still_verifies_prefix(tmp_path):
    led = filled(5)
    path = tmp_path / "l.jsonl"
    led.export(path)
    lines = path.read_text().splitlines()[:3]
    path.write_text("\n".join(lines) + "\n")
    loaded, res = load_ledger(path)
    assert res.ok and len(loaded) == 3


def test_delegated_consensus_records_decision():
    class D:
        worker, digest = "w1", "aa" * 32

    led = HashChainLedger()
    out = led.run_delegated_consensus(lambda inp: D(), None, 4)
    assert isinstance(out, D)
    (e,) = led.entries
    assert (e.kind, e.round, e.node, e.payload_digest) == ("consensus-decision", 4, "w1", "aa" * 32)
    assert led.summary()["verified"] is True
