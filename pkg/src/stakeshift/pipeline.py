"""File-level pipeline steps shared by the CLI: ingest, cluster, shift, report."""

from __future__ import annotations

import datetime
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

from . import __version__
from .analytics import (
    DEFAULT_BURN_IN,
    DEFAULT_LAGS,
    LagSummary,
    QuadraticFit,
    ResilienceQuery,
    attribute_entities,
    fit_quadratic,
    read_tags,
    resilience_bound,
    summary_stats,
)
from .balances import compute_balances, stream_balances
from .clustering import EntityAssignment, cluster_addresses, read_assignment, write_assignment
from .ledger import LedgerStats, Transaction, merge_streams, read_dump, scan_stats
from .shift import (
    EPOCH,
    StakeShiftSeries,
    execution_max_shift,
    iso_date,
    stake_shift_series,
    stream_shift,
    top_contributors,
    write_series,
)


@dataclass
class RunManifest:
    inputs: list[str]
    lags: list[int] = field(default_factory=lambda: list(DEFAULT_LAGS))
    burn_in: float = DEFAULT_BURN_IN
    fee_policy: str = "pool"
    include_fee_pool: bool = False
    output_dir: str = "out"
    assignment: str | None = None
    threads: int = 1
    ddof: int = 0
    tool_version: str = __version__
    input_digests: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**data)

    def write(self, out_dir: Path) -> None:
        (out_dir / "manifest.json").write_text(self.to_json(), encoding="utf-8")


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def iter_inputs(paths: Sequence[str]) -> Iterator[Transaction]:
    if len(paths) == 1:
        return read_dump(paths[0])
    return merge_streams(*(read_dump(p) for p in paths))


def parse_period(text: str) -> int:
    """Accept a day index or an ISO date."""
    try:
        return int(text)
    except ValueError:
        return (datetime.date.fromisoformat(text) - EPOCH).days


def parse_lags(text: str) -> list[int]:
    """``"1,7,14"`` or ``"1-14"`` or a mix of both."""
    lags: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            lags.update(range(int(lo), int(hi) + 1))
        else:
            lags.add(int(part))
    if not lags or min(lags) < 1:
        raise ValueError(f"invalid lag list {text!r}")
    return sorted(lags)


def ledger_stats(paths: Sequence[str]) -> LedgerStats:
    return scan_stats(iter_inputs(paths))


def cluster(paths: Sequence[str]) -> EntityAssignment:
    return cluster_addresses(iter_inputs(paths))


def load_or_cluster(paths: Sequence[str], assignment_path: str | None) -> EntityAssignment:
    if assignment_path:
        return read_assignment(assignment_path)
    return cluster(paths)


def compute_series(
    paths: Sequence[str],
    assignment: EntityAssignment,
    lags: Sequence[int],
    fee_policy: str = "pool",
    include_fee_pool: bool = False,
    threads: int = 1,
) -> dict[int, StakeShiftSeries]:
    """Streaming by default; ``threads > 1`` materializes balances and reduces entity partitions in parallel."""
    if threads <= 1:
        changes = stream_balances(iter_inputs(paths), assignment.entity_of, fee_policy)
        return stream_shift(changes, lags, include_fee_pool)
    balances = compute_balances(iter_inputs(paths), assignment.entity_of, fee_policy)
    return {
        lag: stake_shift_series(balances, lag, include_fee_pool, partitions=threads, workers=threads)
        for lag in lags
    }


def _fmt(x: float) -> str:
    return repr(float(x))


def write_summary(summaries: Sequence[LagSummary], path: Path, label: str = "") -> None:
    prefix = f"{label}_" if label else ""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"lag\t{prefix}mean\t{prefix}median\t{prefix}stddev\n")
        for s in summaries:
            fh.write(f"{s.lag}\t{_fmt(s.mean)}\t{_fmt(s.median)}\t{_fmt(s.stddev)}\n")


def read_table(path: str | os.PathLike) -> tuple[list[str], list[list[float]]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        rows = [[float(c) for c in line.rstrip("\r\n").split("\t")] for line in fh if line.strip()]
    if not header or header[0] != "lag":
        raise ValueError(f"{path}: first column must be 'lag'")
    return header, rows


def reference_table_path() -> Path:
    return Path(str(resources.files("stakeshift") / "data" / "reference_lag_summary.tsv"))


def run_shift(manifest: RunManifest) -> dict:
    """Cluster (unless an assignment is given), compute every lag, write all reports."""
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.input_digests = {p: sha256_file(p) for p in manifest.inputs}
    assignment = load_or_cluster(manifest.inputs, manifest.assignment)
    if not manifest.assignment:
        write_assignment(assignment, out / "assignment.tsv")
    series = compute_series(
        manifest.inputs,
        assignment,
        manifest.lags,
        manifest.fee_policy,
        manifest.include_fee_pool,
        manifest.threads,
    )
    summaries = []
    maxima = {}
    for lag in sorted(series):
        s = series[lag]
        write_series(s, out / f"series_lag{lag:02d}.tsv")
        summaries.append(summary_stats(s, manifest.burn_in, manifest.ddof))
        maxima[lag] = execution_max_shift(s)
    write_summary(summaries, out / "summary.tsv")
    with open(out / "max_shift.tsv", "w", encoding="utf-8", newline="") as fh:
        fh.write("lag\tperiod\tiso_date\tshift\n")
        for lag, (period, value) in maxima.items():
            fh.write(f"{lag}\t{period}\t{iso_date(period)}\t{_fmt(value)}\n")
    manifest.write(out)
    return {"assignment": assignment, "series": series, "summaries": summaries, "maxima": maxima}


def write_fit_report(fits: dict[str, QuadraticFit], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("statistic\tc0\tc1\tc2\tr_squared\n")
        for name, f in fits.items():
            fh.write(f"{name}\t{_fmt(f.c0)}\t{_fmt(f.c1)}\t{_fmt(f.c2)}\t{_fmt(f.r_squared)}\n")


def fit_table(path: str | os.PathLike) -> dict[str, QuadraticFit]:
    header, rows = read_table(path)
    lags = [r[0] for r in rows]
    return {name: fit_quadratic(zip(lags, [r[i] for r in rows])) for i, name in enumerate(header) if i}


def resilience_table(path: str | os.PathLike, epsilon: float = 0.0, thresholds=(0.5, 1 / 3)) -> list[dict]:
    """Per-lag margins using every ``*mean`` column as sigma."""
    header, rows = read_table(path)
    out = []
    for i, name in enumerate(header):
        if not name.endswith("mean"):
            continue
        for r in rows:
            entry = {"column": name, "lag": int(r[0]), "sigma": r[i]}
            for t in thresholds:
                entry[t] = resilience_bound(ResilienceQuery(t, epsilon, r[i])).alpha_max
            out.append(entry)
    return out


def run_spikes(
    paths: Sequence[str],
    assignment: EntityAssignment,
    period: int,
    lag: int,
    k: int,
    fee_policy: str = "pool",
    include_fee_pool: bool = False,
    tags_path: str | None = None,
):
    balances = compute_balances(iter_inputs(paths), assignment.entity_of, fee_policy)
    rows = top_contributors(balances, period, lag, k, include_fee_pool)
    tags = read_tags(tags_path) if tags_path else []
    return attribute_entities(rows, tags, assignment)
