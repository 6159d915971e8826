"""Normalized ledger data model and the tab-separated transaction dump format.

One transaction per line::

    tx_id <TAB> timestamp <TAB> coinjoin_hint <TAB> inputs <TAB> outputs

``coinjoin_hint`` is ``0``, ``1`` or ``-`` (unknown). ``inputs`` and
``outputs`` are comma-joined ``address:value`` pairs; an empty inputs field
marks a coinbase. Outputs to ``__UNSPENDABLE__`` are burned. Files whose name
ends in ``.gz`` are read and written through gzip.
"""

from __future__ import annotations

import gzip
import heapq
import io
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

SECONDS_PER_DAY = 86400
UNSPENDABLE = "__UNSPENDABLE__"
MAX_VALUE = 2**63 - 1


class DumpSyntaxError(ValueError):
    """A dump line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class ValueOverflow(DumpSyntaxError):
    pass


@dataclass(frozen=True)
class TxIn:
    address: str
    value: int


@dataclass(frozen=True)
class TxOut:
    address: str
    value: int


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    timestamp: int
    inputs: tuple[TxIn, ...]
    outputs: tuple[TxOut, ...]
    coinjoin_hint: bool | None = None

    @property
    def is_coinbase(self) -> bool:
        return not self.inputs

    @property
    def fee(self) -> int:
        if self.is_coinbase:
            return 0
        return sum(i.value for i in self.inputs) - sum(o.value for o in self.outputs)

    @property
    def period(self) -> int:
        return period_of(self.timestamp)


@dataclass(frozen=True)
class LedgerStats:
    tx_count: int = 0
    address_count: int = 0
    first_timestamp: int = 0
    last_timestamp: int = 0


def period_of(timestamp: int) -> int:
    """Day index of a UTC epoch timestamp."""
    return timestamp // SECONDS_PER_DAY


def _parse_amount(text: str, line_no: int) -> int:
    if not text or not (text.isdigit() and text.isascii()):
        raise DumpSyntaxError(line_no, f"invalid amount {text!r}")
    value = int(text)
    if value > MAX_VALUE:
        raise ValueOverflow(line_no, f"amount {text} exceeds 2^63-1")
    return value


def _parse_pairs(field: str, line_no: int, kind):
    pairs = []
    for item in field.split(","):
        address, sep, amount = item.rpartition(":")
        if not sep or not address:
            raise DumpSyntaxError(line_no, f"malformed address:value pair {item!r}")
        pairs.append(kind(address, _parse_amount(amount, line_no)))
    return tuple(pairs)


_HINTS = {"0": False, "1": True, "-": None}


def parse_line(line: str, line_no: int = 1) -> Transaction:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != 5:
        raise DumpSyntaxError(line_no, f"expected 5 tab-separated fields, got {len(fields)}")
    tx_id, ts, hint, ins, outs = fields
    if not tx_id:
        raise DumpSyntaxError(line_no, "empty tx_id")
    if hint not in _HINTS:
        raise DumpSyntaxError(line_no, f"coinjoin hint must be 0, 1 or -, got {hint!r}")
    timestamp = _parse_amount(ts, line_no)
    inputs = _parse_pairs(ins, line_no, TxIn) if ins else ()
    if not outs:
        raise DumpSyntaxError(line_no, "transaction has no outputs")
    outputs = _parse_pairs(outs, line_no, TxOut)
    if any(i.address == UNSPENDABLE for i in inputs):
        raise DumpSyntaxError(line_no, "unspendable sentinel used as input")
    if inputs and sum(i.value for i in inputs) < sum(o.value for o in outputs):
        raise DumpSyntaxError(line_no, "outputs exceed inputs")
    return Transaction(tx_id, timestamp, inputs, outputs, _HINTS[hint])


def format_transaction(tx: Transaction) -> str:
    """Inverse of :func:`parse_line` (without the trailing newline)."""
    hint = {None: "-", False: "0", True: "1"}[tx.coinjoin_hint]
    ins = ",".join(f"{i.address}:{i.value}" for i in tx.inputs)
    outs = ",".join(f"{o.address}:{o.value}" for o in tx.outputs)
    return f"{tx.tx_id}\t{tx.timestamp}\t{hint}\t{ins}\t{outs}"


def parse_transactions(source: IO[str] | Iterable[str]) -> Iterator[Transaction]:
    """Yield transactions in file order. Blank lines are skipped."""
    for line_no, line in enumerate(source, 1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if not line.strip():
            continue
        yield parse_line(line, line_no)


def open_dump(path: str | os.PathLike, mode: str = "r") -> IO[str]:
    path = os.fspath(path)
    if path.endswith(".gz"):
        fh = open(path, mode.replace("t", "") + "b")
        # empty name and zero mtime keep the header independent of path and clock
        raw = gzip.GzipFile(filename="", mode=fh.mode, fileobj=fh, mtime=0)
        raw.myfileobj = fh  # closed together with the gzip stream
        return io.TextIOWrapper(raw, encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def read_dump(path: str | os.PathLike) -> Iterator[Transaction]:
    with open_dump(path) as fh:
        yield from parse_transactions(fh)


def write_dump(transactions: Iterable[Transaction], path: str | os.PathLike) -> None:
    with open_dump(path, "w") as fh:
        for tx in transactions:
            fh.write(format_transaction(tx) + "\n")


def merge_streams(*streams: Iterable[Transaction]) -> Iterator[Transaction]:
    """Merge per-file streams by ``(timestamp, tx_id)``; each input must already be in that order."""
    return heapq.merge(*streams, key=lambda tx: (tx.timestamp, tx.tx_id))


def scan_stats(transactions: Iterable[Transaction]) -> LedgerStats:
    addresses: set[str] = set()
    count = 0
    first = last = None
    for tx in transactions:
        count += 1
        for i in tx.inputs:
            addresses.add(i.address)
        for o in tx.outputs:
            addresses.add(o.address)
        if first is None or tx.timestamp < first:
            first = tx.timestamp
        if last is None or tx.timestamp > last:
            last = tx.timestamp
    addresses.discard(UNSPENDABLE)
    if not count:
        return LedgerStats()
    return LedgerStats(count, len(addresses), first, last)
