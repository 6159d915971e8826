"""Command-line entry point: ``stakeshift <command> ...``.

Exit codes: 0 success, 2 input error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .analytics import (
    DEFAULT_BURN_IN,
    ResilienceQuery,
    TagFileSyntax,
    lookup_protocol,
    protocol_catalog,
    resilience_bound,
)
from .balances import FEE_POLICIES, ConservationError, NegativeBalance, check_fee_policy
from .clustering import write_assignment
from .pipeline import (
    RunManifest,
    fit_table,
    ledger_stats,
    load_or_cluster,
    reference_table_path,
    parse_lags,
    parse_period,
    resilience_table,
    run_shift,
    run_spikes,
    write_fit_report,
)
from .synth import SynthConfig, write_synth

log = logging.getLogger("stakeshift")

EXIT_INPUT = 2
EXIT_INVARIANT = 3


def _add_common(p: argparse.ArgumentParser, assignment: bool = True) -> None:
    p.add_argument("--input", action="append", required=True, help="transaction dump (repeatable, .gz accepted)")
    if assignment:
        p.add_argument("--assignment", help="address<TAB>entity_id file; clustered from the input if omitted")
    p.add_argument("--fee-policy", choices=FEE_POLICIES, default="pool")
    p.add_argument("--include-fee-pool", action="store_true", help="count the fee pool as a stakeholder")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stakeshift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="transaction and address counts of a dump")
    p.add_argument("--input", action="append", required=True)

    p = sub.add_parser("cluster", help="multiple-input clustering")
    p.add_argument("--input", action="append", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("shift", help="stake-shift series, summary table and maxima")
    _add_common(p)
    p.add_argument("--lags", default="1-14")
    p.add_argument("--burn-in", type=float, default=DEFAULT_BURN_IN)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--ddof", type=int, choices=(0, 1), default=0, help="0: population stddev, 1: sample")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="re-run the shift pipeline from a manifest.json")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("spikes", help="ranked per-entity contributions for one period")
    _add_common(p)
    p.add_argument("--period", required=True, help="day index or YYYY-MM-DD")
    p.add_argument("--lag", type=int, default=1)
    p.add_argument("--k", type=int, default=60)
    p.add_argument("--tags", help="tag file: key_type<TAB>key<TAB>label<TAB>category<TAB>source")
    p.add_argument("--out", required=True, help="output file")

    p = sub.add_parser("fit", help="quadratic lag trend per summary column")
    p.add_argument("--summary", help="summary table (default: the bundled reference table)")
    p.add_argument("--out", help="write the fit report here")

    p = sub.add_parser("resilience", help="tolerable adversarial stake ratio")
    p.add_argument("--protocol", help="look up the protocol's lag in the catalog")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--sigma", type=float)
    p.add_argument("--summary", help="summary table; reports margins per lag for T=1/2 and T=1/3")
    p.add_argument("--out")

    sub.add_parser("catalog", help="stake distribution lags of known PoS protocols")

    p = sub.add_parser("synth", help="generate a synthetic ledger dump")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=100)
    p.add_argument("--entities", type=int, default=100)
    p.add_argument("--coinbase", type=int, default=5000)
    p.add_argument("--intensity", type=float, default=10.0)
    p.add_argument("--genesis", type=int, default=0)
    p.add_argument("--start-day", type=int, default=0)
    p.add_argument("--spike", help="DAY:FRACTION")
    p.add_argument("--out", required=True)
    return parser


def cmd_stats(args) -> None:
    s = ledger_stats(args.input)
    print("txs\taddresses\tfirst_timestamp\tlast_timestamp")
    print(f"{s.tx_count}\t{s.address_count}\t{s.first_timestamp}\t{s.last_timestamp}")


def cmd_cluster(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = ledger_stats(args.input)
    assignment = load_or_cluster(args.input, None)
    write_assignment(assignment, out / "assignment.tsv")
    header = "txs\taddresses\tclusters\tentities\n"
    row = f"{stats.tx_count}\t{stats.address_count}\t{assignment.cluster_count}\t{assignment.entity_count}\n"
    (out / "cluster_counts.tsv").write_text(header + row, encoding="utf-8")
    sys.stdout.write(header + row)


def _manifest_from_args(args) -> RunManifest:
    return RunManifest(
        inputs=list(args.input),
        lags=parse_lags(args.lags),
        burn_in=args.burn_in,
        fee_policy=args.fee_policy,
        include_fee_pool=args.include_fee_pool,
        output_dir=args.out,
        assignment=args.assignment,
        threads=args.threads,
        ddof=args.ddof,
    )


def _report_shift(result) -> None:
    print("lag\tmean\tmedian\tstddev\tmax_period\tmax_shift")
    for s in result["summaries"]:
        period, value = result["maxima"][s.lag]
        print(f"{s.lag}\t{s.mean:.6f}\t{s.median:.6f}\t{s.stddev:.6f}\t{period}\t{value:.6f}")


def cmd_shift(args) -> None:
    manifest = _manifest_from_args(args)
    check_fee_policy(manifest.fee_policy)
    _report_shift(run_shift(manifest))


def cmd_run(args) -> None:
    manifest = RunManifest.from_json(Path(args.manifest).read_text(encoding="utf-8"))
    check_fee_policy(manifest.fee_policy)
    _report_shift(run_shift(manifest))


def cmd_spikes(args) -> None:
    check_fee_policy(args.fee_policy)
    assignment = load_or_cluster(args.input, args.assignment)
    rows = run_spikes(
        args.input,
        assignment,
        parse_period(args.period),
        args.lag,
        args.k,
        args.fee_policy,
        args.include_fee_pool,
        args.tags,
    )
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("rank\tentity_id\tabs_share_delta\tlabel\tcategory\n")
        for r in rows:
            fh.write(f"{r.rank}\t{r.entity}\t{r.abs_share_delta!r}\t{r.label}\t{r.category}\n")
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_fit(args) -> None:
    fits = fit_table(args.summary or reference_table_path())
    print("statistic\tc0\tc1\tc2\tr_squared")
    for name, f in fits.items():
        print(f"{name}\t{f.c0:.6g}\t{f.c1:.6g}\t{f.c2:.6g}\t{f.r_squared:.5f}")
    if args.out:
        write_fit_report(fits, Path(args.out))


def cmd_resilience(args) -> None:
    if args.summary:
        rows = resilience_table(args.summary, args.epsilon)
        if args.protocol:
            lags = set(lookup_protocol(args.protocol).lag_range)
            rows = [r for r in rows if r["lag"] in lags]
            if not rows:
                raise ValueError(f"summary table has no row for the {args.protocol} lag")
        lines = ["column\tlag\tsigma\talpha_max_T1/2\talpha_max_T1/3"]
        for r in rows:
            lines.append(f"{r['column']}\t{r['lag']}\t{r['sigma']!r}\t{r[0.5]:.6f}\t{r[1 / 3]:.6f}")
        text = "\n".join(lines) + "\n"
        sys.stdout.write(text)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        return
    if args.sigma is None:
        raise ValueError("--sigma or --summary is required")
    if args.protocol:
        entry = lookup_protocol(args.protocol)
        low, high = entry.lag_range
        lag = f"{high:g}" if low == high else f"{low:g}-{high:g}"
        print(f"protocol\t{entry.protocol}\tlag_days\t{lag}")
    margin = resilience_bound(ResilienceQuery(args.threshold, args.epsilon, args.sigma))
    print(f"alpha_max\t{margin.alpha_max:.6f}")
    if margin.clamped:
        print(f"clamped\traw bound {margin.raw:.6f} is negative")


def cmd_catalog(args) -> None:
    print("protocol\tlag_days\tbasis")
    for e in protocol_catalog():
        low, high = e.lag_range
        lag = f"{high:g}" if low == high else f"{low:g}-{high:g}"
        print(f"{e.protocol}\t{lag}\t{e.basis}")


def cmd_synth(args) -> None:
    spike = None
    if args.spike:
        day, frac = args.spike.split(":")
        spike = (int(day), float(frac))
    cfg = SynthConfig(
        seed=args.seed,
        days=args.days,
        entities=args.entities,
        coinbase_per_day=args.coinbase,
        transfer_intensity=args.intensity,
        spike_spec=spike,
        genesis_supply=args.genesis,
        start_day=args.start_day,
    )
    write_synth(cfg, args.out)


COMMANDS = {
    "stats": cmd_stats,
    "cluster": cmd_cluster,
    "shift": cmd_shift,
    "run": cmd_run,
    "spikes": cmd_spikes,
    "fit": cmd_fit,
    "resilience": cmd_resilience,
    "catalog": cmd_catalog,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (NegativeBalance, ConservationError) as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except (ValueError, KeyError, OSError, TagFileSyntax) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
