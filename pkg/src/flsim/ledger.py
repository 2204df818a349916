"""Append-only hash-chain ledger recording parameter digests and consensus lineage.

Stands in for a blockchain backend. Each entry commits to its predecessor::

    entry_hash = sha256("{index}|{prev_hash}|{kind}|{round}|{node}|{payload_digest}")

with an all-zero ``prev_hash`` for the genesis entry. The export format is one
JSON object per line with keys in the fixed order
``index, prev_hash, kind, round, node, payload_digest, entry_hash`` and no
whitespace. A line that does not re-serialize to itself counts as corrupted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

GENESIS_HASH = "0" * 64
ENTRY_KINDS = ("client-param", "worker-aggregate", "consensus-decision", "global-param")
_FIELDS = ("index", "prev_hash", "kind", "round", "node", "payload_digest", "entry_hash")


def compute_entry_hash(
    index: int, prev_hash: str, kind: str, rnd: int, node: str, payload_digest: str
) -> str:
    text = f"{index}|{prev_hash}|{kind}|{rnd}|{node}|{payload_digest}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LedgerEntry:
    index: int
    prev_hash: str
    kind: str
    round: int
    node: str
    payload_digest: str
    entry_hash: str

    def expected_hash(self) -> str:
        return compute_entry_hash(
            self.index, self.prev_hash, self.kind, self.round, self.node, self.payload_digest
        )

    def to_line(self) -> str:
        doc = {name: getattr(self, name) for name in _FIELDS}
        return json.dumps(doc, separators=(",", ":"), ensure_ascii=True)

    @classmethod
    def from_line(cls, line: str) -> "LedgerEntry":
        doc = json.loads(line)
        if not isinstance(doc, dict) or tuple(doc) != _FIELDS:
            raise ValueError("ledger line has unexpected fields")
        entry = cls(**doc)
        if entry.to_line() != line:
            raise ValueError("ledger line is not in canonical form")
        return entry


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    bad_index: Optional[int] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


class LedgerBackend(Protocol):
    def append(self, kind: str, rnd: int, node: str, digest: str) -> LedgerEntry: ...

    def verify_chain(self) -> VerifyResult: ...

    def provenance(self, rnd: int) -> list[LedgerEntry]: ...


def verify_entries(entries: Iterable[LedgerEntry]) -> VerifyResult:
    prev = GENESIS_HASH
    for pos, e in enumerate(entries):
        if e.index != pos:
            return VerifyResult(False, pos, "index is not contiguous")
        if e.kind not in ENTRY_KINDS:
            return VerifyResult(False, pos, f"unknown entry kind {e.kind!r}")
        if e.prev_hash != prev:
            return VerifyResult(False, pos, "prev_hash does not link to the previous entry")
        if e.entry_hash != e.expected_hash():
            return VerifyResult(False, pos, "entry_hash does not match the entry contents")
        prev = e.entry_hash
    return VerifyResult(True)


class HashChainLedger:
    """In-memory chain with optional export to / import from a line-oriented file."""

    def __init__(self):
        self._entries: list[LedgerEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[LedgerEntry]:
        return list(self._entries)

    @property
    def tip(self) -> str:
        return self._entries[-1].entry_hash if self._entries else GENESIS_HASH

    def append(self, kind: str, rnd: int, node: str, digest: str) -> LedgerEntry:
        if kind not in ENTRY_KINDS:
            raise ValueError(f"unknown ledger entry kind {kind!r}")
        index = len(self._entries)
        prev = self.tip
        entry = LedgerEntry(
            index, prev, kind, rnd, node, digest,
            compute_entry_hash(index, prev, kind, rnd, node, digest),
        )
        self._entries.append(entry)
        return entry

    def verify_chain(self) -> VerifyResult:
        return verify_entries(self._entries)

    def provenance(self, rnd: int) -> list[LedgerEntry]:
        return [e for e in self._entries if e.round == rnd]

    def counts(self, rnd: int) -> dict[str, int]:
        out = {k: 0 for k in ENTRY_KINDS}
        for e in self.provenance(rnd):
            out[e.kind] += 1
        return out

    def run_delegated_consensus(self, fn: Callable, inp, rnd: int):
        """Execute a consensus function 'on chain': its decision is recorded here.

        Returns whatever ``fn(inp)`` returns; the caller supplies the winner
        identity and digest via the returned object's ``worker``/``digest``.
        """
        decision = fn(inp)
        self.append("consensus-decision", rnd, decision.worker, decision.digest)
        return decision

    def summary(self) -> dict:
        return {"entries": len(self._entries), "tip": self.tip, "verified": bool(self.verify_chain())}

    # -- file format -------------------------------------------------------------

    def export(self, path: str | Path) -> None:
        text = "".join(e.to_line() + "\n" for e in self._entries)
        Path(path).write_text(text, encoding="ascii")

    @classmethod
    def from_entries(cls, entries: Iterable[LedgerEntry]) -> "HashChainLedger":
        ledger = cls()
        ledger._entries = list(entries)
        return ledger


def load_ledger(path: str | Path) -> tuple[HashChainLedger, VerifyResult]:
    """Read an exported ledger and verify it; unparseable lines fail at their index."""
    entries = []
    lines = Path(path).read_text(encoding="ascii", errors="replace").splitlines()
    for pos, line in enumerate(lines):
        try:
            entries.append(LedgerEntry.from_line(line))
        except (ValueError, TypeError) as exc:
            return HashChainLedger.from_entries(entries), VerifyResult(False, pos, str(exc))
    ledger = HashChainLedger.from_entries(entries)
    return ledger, ledger.verify_chain()


def entry_as_dict(entry: LedgerEntry) -> dict:
    return asdict(entry)
