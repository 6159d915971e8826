"""Deterministic synthetic ledgers and the naive full-grid stake-shift oracle.

Random numbers
--------------
All draws come from :class:`CounterRNG`, a counter-based generator that is
easy to reproduce in any language. For seed ``s`` the ``i``-th draw
(``i = 1, 2, ...``) is::

    z = (s + i * 0x9E3779B97F4A7C15) mod 2**64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    u = z ^ (z >> 31)

i.e. the SplitMix64 finalizer applied to a Weyl sequence. A bounded draw
``below(n)`` is ``(u * n) >> 64`` (multiply-shift, no rejection step).

Ledger construction
-------------------
Entity ``e`` owns ``1 + below(3)`` addresses named ``a{e:05d}.{j}``. For each
day ``d`` (timestamps start at ``(start_day + d) * 86400`` and advance one
second per transaction):

1. On day 0, if ``genesis_supply // entities`` is positive, one coinbase
   pays that amount to every entity's first address.
2. One coinbase pays ``coinbase_per_day`` to a uniformly drawn address.
3. ``floor(transfer_intensity)`` transfers, plus one more when
   ``below(2**32) < frac(transfer_intensity) * 2**32``. Each transfer:

   * with probability 1/40 (and at least three funded entities) a CoinJoin:
     three funded addresses of distinct entities each put in the smallest of
     their balances, paid out as three equal outputs to uniform addresses;
     the hint is ``1`` or ``-`` with equal probability;
   * otherwise a payment from a uniformly drawn funded address, with
     probability 1/4 joined by a second funded address of the same entity
     (the co-spend the clustering heuristic picks up). The whole input
     balance is spent: ``1 + below(total)`` goes to a uniform address (to the
     burn sentinel with probability 1/50), a fee of
     ``below(min(3, rest) + 1)`` is left, and the rest returns to the first
     input address as change.
4. On the spike day every funded address, in address order, sends
   ``floor(balance * fraction)`` to the fresh address ``spike{d}``.

Funded addresses are drawn from a list kept in insertion order with
swap-removal, which is part of the reproducible algorithm.
"""

from __future__ import annotations

import os
from collections import defaultdict, deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

from .clustering import detect_coinjoin
from .ledger import (
    SECONDS_PER_DAY,
    UNSPENDABLE,
    Transaction,
    TxIn,
    TxOut,
    format_transaction,
    open_dump,
    parse_transactions,
    period_of,
)
from .shift import StakeShiftSeries

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
DEFAULT_GRID_GUARD = 5_000_000


class GridTooLarge(ValueError):
    pass


class CounterRNG:
    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        z = (self.seed + self.counter * GAMMA) & MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return (self.next_u64() * n) >> 64


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    days: int
    entities: int
    coinbase_per_day: int
    transfer_intensity: float = 0.0
    spike_spec: tuple[int, float] | None = None
    genesis_supply: int = 0
    start_day: int = 0

    def __post_init__(self):
        if self.days <= 0 or self.entities <= 0 or self.coinbase_per_day <= 0:
            raise ValueError("days, entities and coinbase_per_day must be positive")
        if self.transfer_intensity < 0 or self.genesis_supply < 0 or self.start_day < 0:
            raise ValueError("transfer_intensity, genesis_supply and start_day must be non-negative")
        if self.spike_spec is not None:
            day, fraction = self.spike_spec
            if not 0 < fraction <= 1:
                raise ValueError("spike fraction must be in (0, 1]")
            if not 0 <= day < self.days:
                raise ValueError("spike day outside the generated range")


class _Ledger:
    """Address balances plus the swap-remove list of funded addresses."""

    def __init__(self, names: list[str], owner: list[int]):
        self.names = names
        self.owner = owner
        self.balance = [0] * len(names)
        self.funded: list[int] = []
        self.slot: dict[int, int] = {}

    def credit(self, a: int, value: int) -> None:
        if value and not self.balance[a]:
            self.slot[a] = len(self.funded)
            self.funded.append(a)
        self.balance[a] += value

    def debit(self, a: int, value: int) -> None:
        self.balance[a] -= value
        assert self.balance[a] >= 0
        if not self.balance[a] and value:
            i = self.slot.pop(a)
            last = self.funded.pop()
            if last != a:
                self.funded[i] = last
                self.slot[last] = i


def iter_transactions(config: SynthConfig) -> Iterator[Transaction]:
    rng = CounterRNG(config.seed)
    names: list[str] = []
    owner: list[int] = []
    holdings: list[list[int]] = []
    for e in range(config.entities):
        addrs = []
        for j in range(1 + rng.below(3)):
            addrs.append(len(names))
            names.append(f"a{e:05d}.{j}")
            owner.append(e)
        holdings.append(addrs)
    led = _Ledger(names, owner)
    whole = int(config.transfer_intensity)
    frac_threshold = int((config.transfer_intensity - whole) * 2**32)

    for d in range(config.days):
        base = (config.start_day + d) * SECONDS_PER_DAY
        seq = 0

        def stamp():
            nonlocal seq
            seq += 1
            return f"{config.start_day + d:06d}-{seq:06d}", base + min(seq - 1, SECONDS_PER_DAY - 1)

        if d == 0 and config.genesis_supply >= config.entities:
            share = config.genesis_supply // config.entities
            outs = []
            for addrs in holdings:
                led.credit(addrs[0], share)
                outs.append(TxOut(names[addrs[0]], share))
            yield Transaction(*stamp(), (), tuple(outs), False)

        a = rng.below(len(names))
        led.credit(a, config.coinbase_per_day)
        yield Transaction(*stamp(), (), (TxOut(names[a], config.coinbase_per_day),), False)

        n = whole + (1 if rng.below(2**32) < frac_threshold else 0)
        for _ in range(n):
            if not led.funded:
                break
            if rng.below(40) == 0:
                tx = _coinjoin(rng, led, stamp)
                if tx is not None:
                    yield tx
                    continue
            yield _payment(rng, led, holdings, stamp)

        if config.spike_spec is not None and config.spike_spec[0] == d:
            fraction = Fraction(repr(config.spike_spec[1]))
            fresh = f"spike{config.start_day + d}"
            for a in sorted(led.funded):
                moved = led.balance[a] * fraction.numerator // fraction.denominator
                if moved:
                    led.debit(a, moved)
                    yield Transaction(*stamp(), (TxIn(names[a], moved),), (TxOut(fresh, moved),), False)


def _coinjoin(rng: CounterRNG, led: _Ledger, stamp) -> Transaction | None:
    picked: list[int] = []
    seen_owners: set[int] = set()
    for _ in range(12):
        a = led.funded[rng.below(len(led.funded))]
        if led.owner[a] not in seen_owners:
            picked.append(a)
            seen_owners.add(led.owner[a])
            if len(picked) == 3:
                break
    if len(picked) < 3:
        return None
    x = min(led.balance[a] for a in picked)
    ins = []
    for a in picked:
        led.debit(a, x)
        ins.append(TxIn(led.names[a], x))
    outs = []
    for _ in range(3):
        b = rng.below(len(led.names))
        led.credit(b, x)
        outs.append(TxOut(led.names[b], x))
    hint = True if rng.below(2) == 0 else None
    return Transaction(*stamp(), tuple(ins), tuple(outs), hint)


def _payment(rng: CounterRNG, led: _Ledger, holdings, stamp) -> Transaction:
    src = led.funded[rng.below(len(led.funded))]
    sources = [src]
    if rng.below(4) == 0:
        others = [a for a in holdings[led.owner[src]] if a != src and led.balance[a]]
        if others:
            sources.append(others[rng.below(len(others))])
    total = sum(led.balance[a] for a in sources)
    ins = []
    for a in sources:
        ins.append(TxIn(led.names[a], led.balance[a]))
        led.debit(a, led.balance[a])
    amount = 1 + rng.below(total)
    rest = total - amount
    fee = rng.below(min(3, rest) + 1)
    change = rest - fee
    outs = []
    if rng.below(50) == 0:
        outs.append(TxOut(UNSPENDABLE, amount))
    else:
        dst = rng.below(len(led.names))
        led.credit(dst, amount)
        outs.append(TxOut(led.names[dst], amount))
    if change:
        led.credit(src, change)
        outs.append(TxOut(led.names[src], change))
    return Transaction(*stamp(), tuple(ins), tuple(outs), False)


def iter_dump_lines(config: SynthConfig) -> Iterator[str]:
    for tx in iter_transactions(config):
        yield format_transaction(tx) + "\n"


def generate(config: SynthConfig) -> str:
    """Whole dump as text in the normalized format."""
    return "".join(iter_dump_lines(config))


def write_synth(config: SynthConfig, path: str | os.PathLike) -> None:
    with open_dump(path, "w") as fh:
        fh.writelines(iter_dump_lines(config))


def _lines(dump) -> Iterable[str]:
    if isinstance(dump, str):
        return dump.splitlines()
    return dump


def naive_components(transactions: list[Transaction]) -> dict[str, str]:
    """Map every address to the smallest address of its co-input component (BFS)."""
    adjacency: dict[str, set[str]] = defaultdict(set)
    for tx in transactions:
        for o in tx.outputs:
            if o.address != UNSPENDABLE:
                adjacency[o.address]
        addrs = [i.address for i in tx.inputs]
        for a in addrs:
            adjacency[a]
        if len(addrs) > 1 and not detect_coinjoin(tx):
            for a in addrs:
                adjacency[a].update(addrs)
    label: dict[str, str] = {}
    for start in adjacency:
        if start in label:
            continue
        comp = [start]
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in adjacency[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    comp.append(nxt)
                    queue.append(nxt)
        root = min(comp)
        for a in comp:
            label[a] = root
    return label


def naive_shift_oracle(
    dump,
    lag: int,
    assignment=None,
    include_fee_pool: bool = False,
    fee_policy: str = "pool",
    max_cells: int = DEFAULT_GRID_GUARD,
) -> StakeShiftSeries:
    """Reference stake shift from a fully materialized entity x period grid.

    Every entity's end-of-day balance is stored for every day, then for each
    period the distance is summed over all entities. The sum is taken over
    the common denominator ``B_old * B_new`` so it stays exact.
    """
    txs = list(parse_transactions(_lines(dump)))
    if not txs:
        raise ValueError("empty dump")
    entity_of = naive_components(txs) if assignment is None else dict(getattr(assignment, "entity_of", assignment))
    keys = sorted(set(entity_of.values()), key=str)
    fee_key = object()
    if include_fee_pool and fee_policy == "pool":
        keys.append(fee_key)
    index = {k: i for i, k in enumerate(keys)}
    first = min(period_of(tx.timestamp) for tx in txs)
    last = max(period_of(tx.timestamp) for tx in txs)
    n_periods = last - first + 1
    if len(keys) * n_periods > max_cells:
        raise GridTooLarge(f"{len(keys)} entities x {n_periods} periods exceeds guard {max_cells}")

    daily = [[0] * n_periods for _ in keys]
    for tx in txs:
        p = period_of(tx.timestamp) - first
        for i in tx.inputs:
            daily[index[entity_of[i.address]]][p] -= i.value
        for o in tx.outputs:
            if o.address != UNSPENDABLE:
                daily[index[entity_of[o.address]]][p] += o.value
        if fee_key in index and tx.inputs:
            daily[index[fee_key]][p] += tx.fee
    grid = []
    for row in daily:
        running, cum = 0, []
        for delta in row:
            running += delta
            cum.append(running)
        grid.append(cum)

    totals = [sum(row[p] for row in grid) for p in range(n_periods)]
    values: list[float | None] = []
    for p in range(lag, n_periods):
        b_old, b_new = totals[p - lag], totals[p]
        if not b_old or not b_new:
            values.append(None)
            continue
        num = sum(abs(row[p - lag] * b_new - row[p] * b_old) for row in grid)
        values.append(num / (2 * b_old * b_new))
    return StakeShiftSeries(lag, first, last, tuple(values))
