"""Statistical distance and the stabilized stake-shift series.

The series is computed in one pass over per-period balance changes. For a
lag ``L`` each entity keeps a FIFO of the change records it produced during
the last ``L`` periods; an entity with an empty FIFO has the same balance at
``t - L`` and ``t``. Writing ``B`` for the distributed supply, such an
unchanged entity with balance ``b`` contributes ``b * |1/B_t - 1/B_{t-L}|``,
so all of them together contribute ``(B_{t-L} - sum of old balances of
changed entities) * |1/B_t - 1/B_{t-L}|`` and only changed entities are
enumerated.

Everything is accumulated as integers over the common denominator
``2 * B_{t-L} * B_t``; the single float rounding happens at the end, so the
result does not depend on summation order or on how entities are
partitioned across workers.
"""

from __future__ import annotations

import datetime
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from .balances import FEE_POOL, BalanceSeries, PeriodChanges, PeriodOutOfRange

EPOCH = datetime.date(1970, 1, 1)


class InsufficientHistory(ValueError):
    pass


class EmptySeries(ValueError):
    pass


def is_distributed(entity: int, include_fee_pool: bool = False) -> bool:
    """Whether an entity takes part in stake distributions."""
    return entity >= 0 or (include_fee_pool and entity == FEE_POOL)


def iso_date(period: int) -> str:
    return (EPOCH + datetime.timedelta(days=period)).isoformat()


@dataclass(frozen=True)
class StakeDistribution:
    period: int
    shares: Mapping[int, Fraction]

    @classmethod
    def from_balances(cls, balances: Mapping[int, int], period: int = 0) -> "StakeDistribution":
        total = sum(balances.values())
        if not total:
            return cls(period, {})
        return cls(period, {e: Fraction(b, total) for e, b in balances.items() if b})


def distribution_at(series: BalanceSeries, period: int, include_fee_pool: bool = False) -> StakeDistribution:
    balances = {
        e: series.balance_at(e, period) for e in series.points if is_distributed(e, include_fee_pool)
    }
    return StakeDistribution.from_balances(balances, period)


def statistical_distance(x, y) -> float:
    """Total variation distance between two sparse distributions.

    Accepts :class:`StakeDistribution` or plain ``{outcome: probability}``
    mappings. An empty distribution (zero supply) is at distance 0 from
    anything.
    """
    px = x.shares if isinstance(x, StakeDistribution) else x
    py = y.shares if isinstance(y, StakeDistribution) else y
    if not px or not py:
        return 0.0
    total = sum(abs(px.get(s, 0) - py.get(s, 0)) for s in px.keys() | py.keys())
    return float(total / 2)


@dataclass(frozen=True)
class StakeShiftSeries:
    """Shift values for periods ``first + lag .. last`` of the ledger.

    ``values[i]`` belongs to period ``first + lag + i``; ``None`` marks a
    period where either endpoint has zero distributed supply.
    """

    lag: int
    first: int
    last: int
    values: tuple[float | None, ...]

    @property
    def start(self) -> int:
        return self.first + self.lag

    def __getitem__(self, period: int) -> float | None:
        if not self.start <= period <= self.last:
            raise PeriodOutOfRange(f"period {period} outside [{self.start}, {self.last}]")
        return self.values[period - self.start]

    def items(self) -> Iterator[tuple[int, float]]:
        for i, v in enumerate(self.values):
            if v is not None:
                yield self.start + i, v

    def __len__(self):
        return sum(1 for v in self.values if v is not None)


class _LagWindow:
    """Per-entity FIFOs of ``(period, balance_before)`` for the last ``lag`` periods."""

    def __init__(self, lag: int):
        self.lag = lag
        # lists, not deques: a FIFO holds at most ``lag`` records and a deque's block is far larger
        self.records: dict[int, list] = {}
        self.order: deque = deque()

    def push(self, period: int, changes: Mapping[int, tuple[int, int]]) -> None:
        touched = []
        for entity, (before, _) in changes.items():
            self.records.setdefault(entity, []).append((period, before))
            touched.append(entity)
        self.order.append((period, touched))

    def expire(self, period: int) -> None:
        horizon = period - self.lag
        while self.order and self.order[0][0] <= horizon:
            _, touched = self.order.popleft()
            for entity in touched:
                fifo = self.records[entity]
                del fifo[0]
                if not fifo:
                    del self.records[entity]

    def partial(self, current: Mapping[int, int], old_total: int, new_total: int) -> tuple[int, int]:
        """Return (sum of |b_old*B_new - b_new*B_old| over changed entities, sum of their b_old)."""
        num = 0
        old_sum = 0
        for entity, fifo in self.records.items():
            b_old = fifo[0][1]
            num += abs(b_old * new_total - current.get(entity, 0) * old_total)
            old_sum += b_old
        return num, old_sum


def _finish(num: int, old_changed: int, old_total: int, new_total: int) -> float | None:
    if not old_total or not new_total:
        return None
    num += (old_total - old_changed) * abs(new_total - old_total)
    return num / (2 * old_total * new_total)


class ShiftAccumulator:
    """Streaming consumer of :class:`PeriodChanges` for several lags at once.

    Memory is one balance per distributed entity, plus the lag windows,
    which only hold entities that changed within the window.
    """

    def __init__(self, lags: Iterable[int], include_fee_pool: bool = False):
        self.lags = sorted(set(lags))
        if not self.lags or self.lags[0] < 1:
            raise ValueError("lags must be positive integers")
        self.include_fee_pool = include_fee_pool
        self.current: dict[int, int] = {}
        self.total = 0
        self.totals: deque = deque(maxlen=self.lags[-1] + 1)
        self.windows = {lag: _LagWindow(lag) for lag in self.lags}
        self.values: dict[int, list] = {lag: [] for lag in self.lags}
        self.first: int | None = None
        self.last: int | None = None

    def feed(self, pc: PeriodChanges) -> None:
        if self.last is not None and pc.period != self.last + 1:
            raise ValueError(f"periods must be contiguous: got {pc.period} after {self.last}")
        if self.first is None:
            self.first = pc.period
        self.last = pc.period
        changes = {e: ba for e, ba in pc.changes.items() if is_distributed(e, self.include_fee_pool)}
        for entity, (before, after) in changes.items():
            self.total += after - before
            if after:
                self.current[entity] = after
            else:
                self.current.pop(entity, None)
        self.totals.append(self.total)
        for lag, window in self.windows.items():
            window.push(pc.period, changes)
            window.expire(pc.period)
            if pc.period - self.first >= lag:
                old_total = self.totals[-1 - lag]
                num, old_changed = window.partial(self.current, old_total, self.total)
                self.values[lag].append(_finish(num, old_changed, old_total, self.total))

    def result(self) -> dict[int, StakeShiftSeries]:
        if self.first is None:
            raise InsufficientHistory("no periods were processed")
        out = {}
        for lag in self.lags:
            if self.last - self.first < lag:
                raise InsufficientHistory(
                    f"lag {lag} needs {lag + 1} periods, ledger has {self.last - self.first + 1}"
                )
            out[lag] = StakeShiftSeries(lag, self.first, self.last, tuple(self.values[lag]))
        return out


def stream_shift(
    changes: Iterable[PeriodChanges], lags: Iterable[int], include_fee_pool: bool = False
) -> dict[int, StakeShiftSeries]:
    acc = ShiftAccumulator(lags, include_fee_pool)
    for pc in changes:
        acc.feed(pc)
    return acc.result()


def _distributed_totals(series: BalanceSeries, include_fee_pool: bool) -> list[int]:
    totals = list(series.supply)
    if not include_fee_pool and FEE_POOL in series.points:
        for offset in range(len(totals)):
            totals[offset] -= series.balance_at(FEE_POOL, series.first + offset)
    return totals


def _partition_partials(points, first: int, last: int, lag: int, totals: Sequence[int]):
    """Per-period ``(num, old_changed)`` restricted to one entity partition."""
    by_period: dict[int, dict[int, tuple[int, int]]] = {}
    for entity, (periods, values) in points.items():
        before = 0
        for p, v in zip(periods, values):
            by_period.setdefault(p, {})[entity] = (before, v)
            before = v
    window = _LagWindow(lag)
    current: dict[int, int] = {}
    out = []
    for p in range(first, last + 1):
        changes = by_period.pop(p, {})
        for entity, (_, after) in changes.items():
            current[entity] = after
        window.push(p, changes)
        window.expire(p)
        if p - first >= lag:
            out.append(window.partial(current, totals[p - first - lag], totals[p - first]))
    return out


def stake_shift_series(
    balances: BalanceSeries | Iterable[PeriodChanges],
    lag: int,
    include_fee_pool: bool = False,
    partitions: int = 1,
    workers: int = 1,
) -> StakeShiftSeries:
    """Stabilized ``lag``-day stake shift for every period of the ledger.

    With ``partitions > 1`` (only for a materialized :class:`BalanceSeries`)
    entities are split by ``entity % partitions``, each partition is reduced
    independently (in a process pool when ``workers > 1``) and the integer
    partials are summed; the output is bit-identical to the single pass.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if partitions <= 1 or not isinstance(balances, BalanceSeries):
        changes = balances.iter_changes() if isinstance(balances, BalanceSeries) else balances
        return stream_shift(changes, [lag], include_fee_pool)[lag]

    series = balances
    if series.n_periods <= lag:
        raise InsufficientHistory(f"lag {lag} needs {lag + 1} periods, ledger has {series.n_periods}")
    totals = _distributed_totals(series, include_fee_pool)
    parts: list[dict] = [{} for _ in range(partitions)]
    for entity, pts in series.points.items():
        if is_distributed(entity, include_fee_pool):
            parts[entity % partitions][entity] = pts
    args = [(part, series.first, series.last, lag, totals) for part in parts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(_partition_partials, *zip(*args)))
    else:
        partials = [_partition_partials(*a) for a in args]

    values = []
    for i in range(series.n_periods - lag):
        num = sum(p[i][0] for p in partials)
        old_changed = sum(p[i][1] for p in partials)
        values.append(_finish(num, old_changed, totals[i], totals[i + lag]))
    return StakeShiftSeries(lag, series.first, series.last, tuple(values))


def execution_max_shift(series: StakeShiftSeries) -> tuple[int, float]:
    """Largest shift over the execution; the earliest period wins ties."""
    best = None
    for period, value in series.items():
        if best is None or value > best[1]:
            best = (period, value)
    if best is None:
        raise EmptySeries("series has no defined values")
    return best


@dataclass(frozen=True)
class ContributionRow:
    entity: int
    abs_share_delta: float
    rank: int


def top_contributors(
    balances: BalanceSeries,
    period: int,
    lag: int,
    k: int | None = None,
    include_fee_pool: bool = False,
) -> list[ContributionRow]:
    """Entities ranked by ``|share at period - share at period-lag|``.

    Every distributed entity of the ledger is ranked, so the half-sum of the
    untruncated list equals the shift value. Ties go to the smaller id.
    """
    if not balances.first + lag <= period <= balances.last:
        raise PeriodOutOfRange(
            f"period {period} outside [{balances.first + lag}, {balances.last}] for lag {lag}"
        )
    old_p = period - lag
    entities = [e for e in balances.points if is_distributed(e, include_fee_pool)]
    old = {e: balances.balance_at(e, old_p) for e in entities}
    new = {e: balances.balance_at(e, period) for e in entities}
    old_total, new_total = sum(old.values()), sum(new.values())

    # integer numerators over the shared denominator old_total * new_total
    if old_total and new_total:
        keyed = [(abs(old[e] * new_total - new[e] * old_total), e) for e in entities]
        denom = old_total * new_total
    else:
        keyed = [(0, e) for e in entities]
        denom = 1
    keyed.sort(key=lambda item: (-item[0], item[1]))
    if k is not None:
        keyed = keyed[:k]
    return [ContributionRow(e, num / denom, rank) for rank, (num, e) in enumerate(keyed, 1)]


def write_series(series: StakeShiftSeries, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("period\tiso_date\tlag\tshift\n")
        for period, value in series.items():
            fh.write(f"{period}\t{iso_date(period)}\t{series.lag}\t{value!r}\n")


def read_series(path: str | os.PathLike, first: int | None = None, last: int | None = None) -> StakeShiftSeries:
    """Load a series file. Ledger bounds default to the file's own span."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["period", "iso_date", "lag", "shift"]:
            raise ValueError(f"{path}: not a series file")
        for line in fh:
            if line.strip():
                p, _, lag, v = line.rstrip("\n").split("\t")
                rows.append((int(p), int(lag), float(v)))
    if not rows:
        raise EmptySeries(f"{path}: no rows")
    lag = rows[0][1]
    start = rows[0][0]
    first = start - lag if first is None else first
    last = rows[-1][0] if last is None else last
    values: list[float | None] = [None] * (last - first - lag + 1)
    for p, _, v in rows:
        values[p - first - lag] = v
    return StakeShiftSeries(lag, first, last, tuple(values))
