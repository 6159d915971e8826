"""Per-entity cumulative balances on the daily period grid.

Balances are kept as sparse change-points: an entity only gets a record for
periods in which its end-of-period balance actually moved. The streaming
path (:func:`stream_balances`) never holds more than the current balance per
entity plus a short reorder buffer; :func:`compute_balances` materializes the
change-points for random access.
"""

from __future__ import annotations

import os
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .ledger import UNSPENDABLE, Transaction, period_of

FEE_POOL = -1
FEE_POLICIES = ("pool", "burn", "miner-unsupported-error")
DEFAULT_REORDER_WINDOW = 1


class BalanceError(ValueError):
    pass


class NegativeBalance(BalanceError):
    def __init__(self, entity: int, period: int, balance: int):
        super().__init__(f"entity {entity} ends period {period} with negative balance {balance}")
        self.entity = entity
        self.period = period
        self.balance = balance


class UnknownAddress(BalanceError):
    def __init__(self, address: str, tx_id: str):
        super().__init__(f"address {address!r} in tx {tx_id} is not covered by the assignment")
        self.address = address


class OutOfOrder(BalanceError):
    pass


class UnsupportedFeePolicy(BalanceError):
    pass


class ConservationError(BalanceError):
    pass


class PeriodOutOfRange(IndexError):
    pass


def check_fee_policy(policy: str) -> None:
    if policy == "miner-unsupported-error":
        raise UnsupportedFeePolicy("crediting fees to miners is not supported; use 'pool' or 'burn'")
    if policy not in FEE_POLICIES:
        raise UnsupportedFeePolicy(f"unknown fee policy {policy!r}")


@dataclass
class PeriodChanges:
    """Net effect of one period: ``changes`` maps entity -> (before, after)."""

    period: int
    changes: dict[int, tuple[int, int]]
    supply: int
    issued: int = 0
    burned: int = 0


def _entity(assignment: Mapping[str, int], address: str, tx_id: str) -> int:
    try:
        return assignment[address]
    except KeyError:
        raise UnknownAddress(address, tx_id) from None


def tx_effects(tx: Transaction, assignment, fee_policy: str = "pool"):
    """Return ``(deltas, issued, burned)`` for one transaction.

    ``burned`` counts unspendable outputs plus fees under the burn policy.
    """
    deltas: dict[int, int] = defaultdict(int)
    issued = burned = 0
    for i in tx.inputs:
        deltas[_entity(assignment, i.address, tx.tx_id)] -= i.value
    for o in tx.outputs:
        if o.address == UNSPENDABLE:
            burned += o.value
        else:
            deltas[_entity(assignment, o.address, tx.tx_id)] += o.value
    if tx.is_coinbase:
        issued = sum(o.value for o in tx.outputs)
    else:
        fee = tx.fee
        if fee:
            if fee_policy == "pool":
                deltas[FEE_POOL] += fee
            else:
                burned += fee
    return deltas, issued, burned


def stream_balances(
    transactions: Iterable[Transaction],
    assignment,
    fee_policy: str = "pool",
    reorder_window: int | None = DEFAULT_REORDER_WINDOW,
) -> Iterator[PeriodChanges]:
    """Replay transactions and yield one :class:`PeriodChanges` per period.

    Periods are emitted contiguously from the first to the last observed
    period, quiet ones included. A period is closed once a transaction more
    than ``reorder_window`` days later has been seen; a transaction landing in
    an already closed period raises :class:`OutOfOrder`. ``None`` buffers the
    whole ledger, which accepts any order.
    """
    check_fee_policy(fee_policy)
    balances: dict[int, int] = {}
    pending: dict[int, list] = {}
    supply = 0
    next_period = None
    max_seen = None

    def close(period):
        nonlocal supply
        deltas, issued, burned = pending.pop(period, ({}, 0, 0))
        changes = {}
        for entity, delta in deltas.items():
            if not delta:
                continue
            before = balances.get(entity, 0)
            after = before + delta
            if after < 0:
                raise NegativeBalance(entity, period, after)
            if after:
                balances[entity] = after
            else:
                del balances[entity]
            changes[entity] = (before, after)
        supply += issued - burned
        return PeriodChanges(period, changes, supply, issued, burned)

    for tx in transactions:
        period = period_of(tx.timestamp)
        if next_period is None:
            next_period = max_seen = period
        elif period < next_period:
            if reorder_window is not None:
                raise OutOfOrder(
                    f"tx {tx.tx_id} falls in period {period}, which was already closed; "
                    "sort the dump or widen the reorder window"
                )
            next_period = period
        deltas, issued, burned = tx_effects(tx, assignment, fee_policy)
        slot = pending.setdefault(period, [defaultdict(int), 0, 0])
        for entity, delta in deltas.items():
            slot[0][entity] += delta
        slot[1] += issued
        slot[2] += burned
        if period > max_seen:
            max_seen = period
        if reorder_window is not None:
            while next_period < max_seen - reorder_window:
                yield close(next_period)
                next_period += 1

    if next_period is None:
        return
    while next_period <= max_seen:
        yield close(next_period)
        next_period += 1
    held = sum(balances.values())
    if held != supply:
        raise ConservationError(f"entity balances sum to {held}, supply is {supply}")


@dataclass(frozen=True)
class BalanceSeries:
    first: int
    last: int
    points: dict[int, tuple[tuple[int, ...], tuple[int, ...]]]
    supply: tuple[int, ...]
    issued: tuple[int, ...] = field(default=(), repr=False)
    burned: tuple[int, ...] = field(default=(), repr=False)

    def _check(self, period: int) -> None:
        if not self.first <= period <= self.last:
            raise PeriodOutOfRange(f"period {period} outside [{self.first}, {self.last}]")

    def balance_at(self, entity: int, period: int) -> int:
        self._check(period)
        try:
            periods, values = self.points[entity]
        except KeyError:
            return 0
        i = bisect_right(periods, period)
        return values[i - 1] if i else 0

    def supply_at(self, period: int) -> int:
        self._check(period)
        return self.supply[period - self.first]

    def entities(self) -> list[int]:
        return sorted(self.points)

    @property
    def n_periods(self) -> int:
        return self.last - self.first + 1

    def iter_changes(self) -> Iterator[PeriodChanges]:
        by_period: dict[int, dict[int, tuple[int, int]]] = defaultdict(dict)
        for entity, (periods, values) in self.points.items():
            before = 0
            for p, v in zip(periods, values):
                by_period[p][entity] = (before, v)
                before = v
        for offset, supply in enumerate(self.supply):
            p = self.first + offset
            yield PeriodChanges(
                p,
                by_period.pop(p, {}),
                supply,
                self.issued[offset] if self.issued else 0,
                self.burned[offset] if self.burned else 0,
            )


def balance_at(series: BalanceSeries, entity: int, period: int) -> int:
    return series.balance_at(entity, period)


def collect(changes: Iterable[PeriodChanges]) -> BalanceSeries:
    points: dict[int, tuple[list, list]] = {}
    supply, issued, burned = [], [], []
    first = last = None
    for pc in changes:
        if first is None:
            first = pc.period
        last = pc.period
        for entity, (_, after) in pc.changes.items():
            ps, vs = points.setdefault(entity, ([], []))
            ps.append(pc.period)
            vs.append(after)
        supply.append(pc.supply)
        issued.append(pc.issued)
        burned.append(pc.burned)
    if first is None:
        raise BalanceError("ledger is empty")
    frozen = {e: (tuple(ps), tuple(vs)) for e, (ps, vs) in points.items()}
    return BalanceSeries(first, last, frozen, tuple(supply), tuple(issued), tuple(burned))


def compute_balances(transactions: Iterable[Transaction], assignment, fee_policy: str = "pool") -> BalanceSeries:
    return collect(stream_balances(transactions, assignment, fee_policy, reorder_window=None))


def write_balances(series: BalanceSeries, path: str | os.PathLike) -> None:
    """Export change-points as ``entity_id<TAB>period<TAB>cumulative_balance``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for entity in series.entities():
            for p, v in zip(*series.points[entity]):
                fh.write(f"{entity}\t{p}\t{v}\n")
