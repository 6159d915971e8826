"""Summary statistics, lag-trend fitting, attribution joins and PoS resilience margins."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import EntityAssignment
from .shift import ContributionRow, StakeShiftSeries

DEFAULT_BURN_IN = 0.06
DEFAULT_LAGS = tuple(range(1, 15))


class EmptyAfterBurnIn(ValueError):
    pass


class DegenerateDesign(ValueError):
    pass


class TagFileSyntax(ValueError):
    pass


@dataclass(frozen=True)
class LagSummary:
    lag: int
    mean: float
    median: float
    stddev: float
    count: int = 0


def burn_in_cutoff(first: int, last: int, fraction: float) -> int:
    """First period kept after dropping ``ceil(fraction * total_days)`` days."""
    if not 0 <= fraction < 1:
        raise ValueError("burn-in fraction must be in [0, 1)")
    total_days = last - first + 1
    # decimal Fraction: 0.06 * 100 must give 6, not 6.000000000000001
    return first + math.ceil(Fraction(repr(fraction)) * total_days)


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


def summary_stats(series: StakeShiftSeries, burn_in_fraction: float = DEFAULT_BURN_IN, ddof: int = 0) -> LagSummary:
    """Mean, median and standard deviation after the burn-in cut.

    The cut is measured on the ledger's full timeline, not on the series, so
    every lag loses the same calendar days. ``ddof=0`` gives the population
    standard deviation, ``ddof=1`` the sample one.
    """
    cutoff = burn_in_cutoff(series.first, series.last, burn_in_fraction)
    kept = [v for p, v in series.items() if p >= cutoff]
    if len(kept) <= ddof:
        raise EmptyAfterBurnIn(f"lag {series.lag}: {len(kept)} values left after burn-in")
    n = len(kept)
    # fsum is correctly rounded, so the result does not depend on value order
    mean = math.fsum(kept) / n
    var = math.fsum((v - mean) ** 2 for v in kept) / (n - ddof)
    return LagSummary(series.lag, mean, _median(kept), math.sqrt(var), n)


@dataclass(frozen=True)
class QuadraticFit:
    """``c0 + c1 * lag + c2 * lag**2`` with its coefficient of determination."""

    c0: float
    c1: float
    c2: float
    r_squared: float

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return (self.c0, self.c1, self.c2)

    def __call__(self, lag):
        return self.c0 + self.c1 * lag + self.c2 * lag**2


def fit_quadratic(points: Iterable[tuple[float, float]]) -> QuadraticFit:
    pts = list(points)
    if len({x for x, _ in pts}) < 3:
        raise DegenerateDesign("a quadratic fit needs at least 3 distinct lags")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    design = np.vander(x, 3, increasing=True)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ coef
    ss_res = float(residuals @ residuals)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        # flat data: any residual beyond round-off means the fit is worse than the mean
        tol = len(pts) * (1e-12 * max(1.0, float(np.abs(y).max()))) ** 2
        r2 = 1.0 if ss_res <= tol else -math.inf
    else:
        r2 = 1 - ss_res / ss_tot
    return QuadraticFit(float(coef[0]), float(coef[1]), float(coef[2]), r2)


@dataclass(frozen=True)
class ResilienceQuery:
    threshold: float = 0.5
    epsilon: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 <= self.sigma <= 1:
            raise ValueError(f"sigma must be in [0, 1], got {self.sigma}")


@dataclass(frozen=True)
class ResilienceMargin:
    alpha_max: float
    raw: float
    clamped: bool


def resilience_bound(q: ResilienceQuery) -> ResilienceMargin:
    """Largest tolerable adversarial stake ratio ``(1 - eps) * T - sigma``, floored at 0."""
    raw = (1 - q.epsilon) * q.threshold - q.sigma
    return ResilienceMargin(max(raw, 0.0), raw, raw < 0)


@dataclass(frozen=True)
class ProtocolLagEntry:
    protocol: str
    lag_days: float
    basis: str
    lag_days_min: float | None = None

    @property
    def lag_range(self) -> tuple[float, float]:
        low = self.lag_days if self.lag_days_min is None else self.lag_days_min
        return (low, self.lag_days)


_DAY = 86400

_CATALOG = (
    ProtocolLagEntry(
        "ouroboros",
        14 * 2160 * 20 / _DAY,
        "epoch of 10k slots; leaders drawn from the chain up to slot 4k of the previous epoch, "
        "so at most 14k slots; Cardano deployment k=2160, 20 s slots",
    ),
    ProtocolLagEntry(
        "ouroboros-praos",
        2 * 10 * 2160 * 20 / _DAY,
        "distribution fixed at the end of epoch j-2, at most 2 epochs; same epoch length as Ouroboros",
    ),
    ProtocolLagEntry(
        "ouroboros-genesis",
        2 * 10 * 2160 * 20 / _DAY,
        "same epoch structure and lag as Ouroboros Praos",
    ),
    ProtocolLagEntry("algorand", 1.0, "1-day stake distribution lag in the parametrization proposed with Vault"),
    ProtocolLagEntry("vault", 2.0, "twice the Algorand lag under the same parametrization"),
    ProtocolLagEntry(
        "snow-white",
        10.0,
        "look-back of 2*omega blocks, omega unspecified; assumed comparable to the other protocols",
        lag_days_min=1.0,
    ),
)


def protocol_catalog() -> tuple[ProtocolLagEntry, ...]:
    return _CATALOG


def lookup_protocol(name: str) -> ProtocolLagEntry:
    key = name.strip().lower().replace(" ", "-").replace("_", "-")
    for entry in _CATALOG:
        if entry.protocol == key:
            return entry
    known = ", ".join(e.protocol for e in _CATALOG)
    raise KeyError(f"unknown protocol {name!r}; known: {known}")


@dataclass(frozen=True)
class TagRecord:
    key_type: str
    key: str
    label: str
    category: str = ""
    source: str = ""


def parse_tags(lines: Iterable[str]) -> list[TagRecord]:
    """Parse ``key_type<TAB>key<TAB>label<TAB>category<TAB>source`` lines.

    ``key_type`` is ``address`` or ``entity``. Blank lines and ``#`` comments
    are skipped.
    """
    records = []
    for line_no, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise TagFileSyntax(f"line {line_no}: expected 5 tab-separated fields, got {len(parts)}")
        key_type, key, label, category, source = parts
        if key_type not in ("address", "entity"):
            raise TagFileSyntax(f"line {line_no}: key_type must be 'address' or 'entity'")
        if not key or not label:
            raise TagFileSyntax(f"line {line_no}: empty key or label")
        if key_type == "entity":
            try:
                int(key)
            except ValueError:
                raise TagFileSyntax(f"line {line_no}: entity key {key!r} is not an integer") from None
        records.append(TagRecord(key_type, key, label, category, source))
    return records


def read_tags(path: str | os.PathLike) -> list[TagRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_tags(fh)


@dataclass(frozen=True)
class AttributedRow:
    rank: int
    entity: int
    abs_share_delta: float
    labels: tuple[str, ...] = field(default=("unknown",))
    categories: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return ";".join(self.labels)

    @property
    def category(self) -> str:
        return ";".join(self.categories)


def attribute_entities(
    rows: Iterable[ContributionRow],
    tags: Iterable[TagRecord],
    assignment: EntityAssignment | Mapping[str, int],
) -> list[AttributedRow]:
    """Attach labels to contribution rows.

    Address tags propagate to the address's whole entity. All distinct labels
    of an entity are kept, sorted; rows with none are labeled ``unknown``.
    Tags on addresses absent from the assignment are ignored.
    """
    entity_of = assignment.entity_of if isinstance(assignment, EntityAssignment) else assignment
    labels: dict[int, set[str]] = {}
    categories: dict[int, set[str]] = {}
    for tag in tags:
        if tag.key_type == "entity":
            entity = int(tag.key)
        elif tag.key in entity_of:
            entity = entity_of[tag.key]
        else:
            continue
        labels.setdefault(entity, set()).add(tag.label)
        if tag.category:
            categories.setdefault(entity, set()).add(tag.category)
    out = []
    for row in rows:
        found = labels.get(row.entity)
        out.append(
            AttributedRow(
                row.rank,
                row.entity,
                row.abs_share_delta,
                tuple(sorted(found)) if found else ("unknown",),
                tuple(sorted(categories.get(row.entity, ()))),
            )
        )
    return out
