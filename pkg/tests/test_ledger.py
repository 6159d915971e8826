import datetime
import gzip
import io

import pytest
from hypothesis import given, strategies as st

from stakeshift.ledger import (
    UNSPENDABLE,
    DumpSyntaxError,
    LedgerStats,
    ValueOverflow,
    format_transaction,
    merge_streams,
    parse_line,
    parse_transactions,
    period_of,
    read_dump,
    scan_stats,
    write_dump,
)
from stakeshift.synth import SynthConfig, generate

from conftest import dump_text, random_ledger, tx


def test_parse_coinbase():
    t = parse_line("cb1\t100\t-\t\tA1:50")
    assert t.inputs == ()
    assert [(o.address, o.value) for o in t.outputs] == [("A1", 50)]
    assert t.is_coinbase and t.coinjoin_hint is None


def test_parse_spend_with_fee():
    t = parse_line("x\t86400\t0\tA1:50,A2:10\tA3:55,A1:3")
    assert t.fee == 2
    assert t.coinjoin_hint is False
    assert t.period == 1


@pytest.mark.parametrize(
    "line",
    [
        "x\t0\t-\t\tA1:-5",
        "x\t0\t-\tA1:-5\tA2:1",
        "x\t0\t-\t\tA1:5.0",
        "x\t-1\t-\t\tA1:5",
        "x\t0\t2\t\tA1:5",
        "x\t0\t-\t\t",
        "x\t0\t-\tA1:1",
        "\t0\t-\t\tA1:5",
        "x\t0\t-\t\tA1",
        "x\t0\t-\tA1:1\tA2:2",
        "x\t0\t-\t__UNSPENDABLE__:1\tA2:1",
    ],
)
def test_malformed_lines_rejected(line):
    with pytest.raises(DumpSyntaxError):
        parse_line(line)


def test_overflow():
    with pytest.raises(ValueOverflow):
        parse_line(f"x\t0\t-\t\tA1:{2**63}")
    assert parse_line(f"x\t0\t-\t\tA1:{2**63 - 1}").outputs[0].value == 2**63 - 1


def test_error_is_positioned():
    text = "a\t0\t-\t\tA1:5\n\nb\t0\t-\t\tA1:x\n"
    with pytest.raises(DumpSyntaxError) as err:
        list(parse_transactions(io.StringIO(text)))
    assert err.value.line_no == 3


def test_address_with_colon_kept_verbatim():
    t = parse_line("x\t0\t-\t\tbc1:weird:7")
    assert t.outputs[0].address == "bc1:weird" and t.outputs[0].value == 7


def test_thousand_lines_count():
    text = generate(SynthConfig(seed=5, days=40, entities=30, coinbase_per_day=1000, transfer_intensity=24))
    lines = text.splitlines()[:1000]
    assert len(lines) == 1000
    txs = list(parse_transactions(lines))
    # oracle: raw line count
    assert len(txs) == sum(1 for line in lines if line.strip())
    assert scan_stats(txs).tx_count == 1000


def test_period_of_boundaries():
    assert period_of(0) == 0
    assert period_of(86399) == 0
    assert period_of(86400) == 1


def test_period_of_last_block_of_july_2019():
    ts = 1564617305
    # independent calendar computation
    when = datetime.datetime.fromtimestamp(ts, tz=datetime.timezone.utc)
    assert when.isoformat() == "2019-07-31T23:55:05+00:00"
    expected = (when.date() - datetime.date(1970, 1, 1)).days
    assert expected == 18108
    assert period_of(ts) == expected


@given(st.integers(0, 2**40), st.integers(0, 2**40))
def test_period_of_monotone(a, b):
    lo, hi = sorted((a, b))
    assert period_of(lo) <= period_of(hi)


def test_scan_stats_empty():
    assert scan_stats([]) == LedgerStats(0, 0, 0, 0)


def test_scan_stats_small():
    txs = [
        tx("a", 0, (), [("A1", 10)]),
        tx("b", 1, [("A1", 10)], [("A2", 4), ("A3", 5), (UNSPENDABLE, 1)]),
        tx("c", 0, (), [("A2", 1)], second=5),
    ]
    s = scan_stats(txs)
    assert s.address_count == 3
    assert s.tx_count == 3
    assert s.first_timestamp == 0 and s.last_timestamp == 86400


def test_scan_stats_against_hash_set_oracle():
    text = generate(SynthConfig(seed=11, days=200, entities=400, coinbase_per_day=500, transfer_intensity=50))
    lines = text.splitlines()
    assert len(lines) >= 10_000
    seen = set()
    for line in lines:
        fields = line.split("\t")
        for part in (fields[3], fields[4]):
            for pair in filter(None, part.split(",")):
                seen.add(pair.rsplit(":", 1)[0])
    seen.discard(UNSPENDABLE)
    s = scan_stats(parse_transactions(lines))
    assert s.tx_count == len(lines)
    assert s.address_count == len(seen)


def test_round_trip(rng):
    txs = random_ledger(rng, n_tx=200)
    again = list(parse_transactions(dump_text(txs).splitlines()))
    assert again == txs
    assert [format_transaction(t) for t in again] == [format_transaction(t) for t in txs]


def test_fee_non_negative(rng):
    for t in parse_transactions(dump_text(random_ledger(rng, n_tx=300)).splitlines()):
        if not t.is_coinbase:
            assert t.fee >= 0


@pytest.mark.parametrize("name", ["d.tsv", "d.tsv.gz"])
def test_file_round_trip(tmp_path, rng, name):
    txs = random_ledger(rng, n_tx=50)
    path = tmp_path / name
    write_dump(txs, path)
    assert list(read_dump(path)) == txs
    if name.endswith(".gz"):
        with gzip.open(path, "rt") as fh:
            assert fh.readline().startswith("t0\t")


def test_merge_streams_orders_by_time_then_id():
    a = [tx("a1", 0, (), [("A", 1)], second=5), tx("a2", 2, (), [("A", 1)])]
    b = [tx("b1", 0, (), [("B", 1)], second=5), tx("b2", 1, (), [("B", 1)])]
    assert [t.tx_id for t in merge_streams(a, b)] == ["a1", "b1", "b2", "a2"]
