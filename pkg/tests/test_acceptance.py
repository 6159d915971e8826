"""Acceptance criteria. Each test prints one ``criterion N: PASS|FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
The lines are repeated in the terminal summary of any pytest run.
"""

import contextlib
import random
import shutil
import sys
import time
import tracemalloc
from collections import Counter
from pathlib import Path

import pytest

from stakeshift.analytics import ResilienceQuery, fit_quadratic, resilience_bound, summary_stats
from stakeshift.balances import stream_balances
from stakeshift.clustering import cluster_addresses
from stakeshift.ledger import UNSPENDABLE, parse_transactions, period_of
from stakeshift.pipeline import RunManifest, fit_table, reference_table_path, read_table, run_shift
from stakeshift.shift import StakeDistribution, statistical_distance, stream_shift
from stakeshift.synth import SynthConfig, generate, naive_components, naive_shift_oracle, write_synth

from conftest import ACCEPTANCE_LINES, random_ledger

pytestmark = pytest.mark.acceptance

LAGS = range(1, 15)
CURRENCIES = ("BTC", "BCH", "LTC", "ZEC")


@contextlib.contextmanager
def criterion(number, title):
    info = {}
    try:
        yield info
    except pytest.skip.Exception:
        line = f"criterion {number}: SKIP  {title}"
        raise
    except BaseException as exc:
        line = f"criterion {number}: FAIL  {title} ({type(exc).__name__}: {str(exc)[:120]})"
        raise
    else:
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        line = f"criterion {number}: PASS  {title}" + (f" [{detail}]" if detail else "")
    finally:
        print(line)
        ACCEPTANCE_LINES.append(line)


def random_configs(n, seed):
    r = random.Random(seed)
    for i in range(n):
        yield SynthConfig(
            seed=r.getrandbits(64),
            days=r.randint(20, 200),
            entities=r.randint(10, 500),
            coinbase_per_day=r.randint(1, 10_000),
            transfer_intensity=r.choice([0, 0.5, 2, 5, 12.5, 30]),
            spike_spec=(r.randint(0, 19), r.choice([0.1, 0.5, 1.0])) if r.random() < 0.3 else None,
            genesis_supply=r.choice([0, 0, 10**6, 10**12]),
            start_day=r.randint(0, 20_000),
        )


def reference_table():
    header, rows = read_table(reference_table_path())
    return {name: [r[i] for r in rows] for i, name in enumerate(header)}


def test_criterion_1_oracle_equivalence():
    with criterion(1, "streaming engine equals naive oracle, 50 configs x lags 1..14, tol 1e-12") as info:
        start = time.perf_counter()
        worst = 0.0
        periods = 0
        configs = list(random_configs(50, seed=1))
        for cfg in configs:
            text = generate(cfg)
            txs = list(parse_transactions(text.splitlines()))
            got = stream_shift(stream_balances(txs, cluster_addresses(txs).entity_of), LAGS)
            for lag in LAGS:
                want = naive_shift_oracle(text, lag)
                mine = got[lag]
                assert (mine.first, mine.last, len(mine.values)) == (want.first, want.last, len(want.values))
                for a, b in zip(mine.values, want.values):
                    assert (a is None) == (b is None)
                    if a is not None:
                        worst = max(worst, abs(a - b))
                        periods += 1
        elapsed = time.perf_counter() - start
        assert worst <= 1e-12
        assert elapsed < 120, f"took {elapsed:.1f}s"
        info.update(configs=len(configs), compared=periods, max_abs_diff=worst, seconds=round(elapsed, 1))


def test_criterion_2_metric_axioms():
    with criterion(2, "metric axioms on 10,000 random sparse distribution triples") as info:
        r = random.Random(2)

        def draw():
            support = r.sample(range(40), r.randint(1, 10))
            return StakeDistribution.from_balances({k: r.randint(1, 10**6) for k in support}).shares

        def exact(a, b):
            return sum(abs(a.get(k, 0) - b.get(k, 0)) for k in a.keys() | b.keys()) / 2

        equal_pairs = 0
        for _ in range(10_000):
            x, y, z = draw(), draw(), draw()
            if r.random() < 0.05:
                y = dict(x)
            dxy, dyx = statistical_distance(x, y), statistical_distance(y, x)
            assert dxy == dyx
            assert 0 <= dxy <= 1
            assert (dxy == 0) == (x == y)
            equal_pairs += x == y
            assert exact(x, z) <= exact(x, y) + exact(y, z)
            assert statistical_distance(x, z) <= statistical_distance(x, y) + statistical_distance(y, z) + 1e-15
        info.update(triples=10_000, identical_pairs=equal_pairs)


def test_criterion_3_clustering():
    with criterion(3, "clustering equals brute-force components, 100 instances x 5 shuffles") as info:
        r = random.Random(3)
        for instance in range(100):
            txs = random_ledger(r, n_addresses=r.randint(5, 300), n_days=5, n_tx=r.randint(10, 400), max_inputs=4)
            oracle = naive_components(txs)
            want = {frozenset(a for a in oracle if oracle[a] == root) for root in set(oracle.values())}
            base = cluster_addresses(txs)
            got = {frozenset(members) for members in base.members().values()}
            assert got == want, f"instance {instance}"
            for _ in range(5):
                shuffled = list(txs)
                r.shuffle(shuffled)
                assert cluster_addresses(shuffled).entity_of == base.entity_of
        info.update(instances=100, shuffles=5)


def test_criterion_4_conservation():
    with criterion(4, "per-period supply delta equals coinbase minus burns, exact") as info:
        fixtures = [generate(cfg) for cfg in random_configs(20, seed=4)]
        r = random.Random(4)
        fixtures += [
            "".join(line + "\n" for line in _lines(random_ledger(r, n_tx=300))) for _ in range(20)
        ]
        checked = 0
        for text in fixtures:
            txs = list(parse_transactions(text.splitlines()))
            assignment = cluster_addresses(txs).entity_of
            for policy in ("pool", "burn"):
                minted, burned = Counter(), Counter()
                for t in txs:
                    p = period_of(t.timestamp)
                    if t.is_coinbase:
                        minted[p] += sum(o.value for o in t.outputs)
                    burned[p] += sum(o.value for o in t.outputs if o.address == UNSPENDABLE)
                    if policy == "burn":
                        burned[p] += t.fee
                prev = 0
                balances = Counter()
                for pc in stream_balances(txs, assignment, policy):
                    assert pc.supply - prev == minted[pc.period] - burned[pc.period]
                    assert (pc.issued, pc.burned) == (minted[pc.period], burned[pc.period])
                    for e, (_, after) in pc.changes.items():
                        balances[e] = after
                    assert sum(balances.values()) == pc.supply
                    prev = pc.supply
                    checked += 1
        info.update(fixtures=len(fixtures), periods_checked=checked)


def _lines(txs):
    from stakeshift.ledger import format_transaction

    return [format_transaction(t) for t in txs]


def test_criterion_5_quadratic_fits():
    with criterion(5, "quadratic fit recovery and reference-table mean R^2 >= 0.99") as info:
        f = fit_quadratic((lag, 2 + 3 * lag + 0.5 * lag**2) for lag in LAGS)
        for got, want in zip(f.coefficients, (2, 3, 0.5)):
            assert abs(got - want) <= 1e-9
        assert abs(f.r_squared - 1) <= 1e-9
        fits = fit_table(reference_table_path())
        r2 = {c: fits[f"{c}_mean"].r_squared for c in CURRENCIES}
        assert all(v >= 0.99 for v in r2.values()), r2
        info.update(**{f"R2_{c}": f"{v:.5f}" for c, v in r2.items()})


def test_criterion_6_resilience():
    with criterion(6, "resilience grid, ZEC lag 14: sigma 0.094 -> alpha_max 0.406") as info:
        table = reference_table()
        grid = {}
        for c in CURRENCIES:
            for lag, sigma in zip(table["lag"], table[f"{c}_mean"]):
                m = resilience_bound(ResilienceQuery(0.5, 0.0, sigma))
                assert not m.clamped and m.alpha_max == 0.5 - sigma
                grid[c, int(lag)] = m.alpha_max
        assert len(grid) == 56
        assert round(grid["ZEC", 14], 3) == 0.406
        info.update(zec_lag14=f"{grid['ZEC', 14]:.3f}", cells=len(grid))


def test_criterion_7_monotonicity():
    with criterion(7, "mean/median increase with lag: reference table strictly, synthetic >= 90%") as info:
        table = reference_table()
        for c in CURRENCIES:
            for stat in ("mean", "median"):
                col = table[f"{c}_{stat}"]
                assert all(b > a for a, b in zip(col, col[1:])), f"{c}_{stat}"
        pairs = increasing = 0
        r = random.Random(7)
        for run in range(5):
            cfg = SynthConfig(seed=r.getrandbits(64), days=200, entities=300, coinbase_per_day=1000,
                              transfer_intensity=r.choice([2, 5, 10]), genesis_supply=10**7)
            txs = list(parse_transactions(generate(cfg).splitlines()))
            series = stream_shift(stream_balances(txs, cluster_addresses(txs).entity_of), LAGS)
            summaries = [summary_stats(series[lag]) for lag in LAGS]
            for stat in ("mean", "median"):
                col = [getattr(s, stat) for s in summaries]
                pairs += len(col) - 1
                increasing += sum(b > a for a, b in zip(col, col[1:]))
        share = increasing / pairs
        assert share >= 0.9
        info.update(synthetic_increasing=f"{increasing}/{pairs}")


def test_criterion_8_full_scale_excluded():
    with criterion(8, "full-scale ledger claims excluded from CI (documented procedure, fixtures present)"):
        assert reference_table_path().is_file()
        readme = Path(__file__).resolve().parents[1] / "README.md"
        assert readme.is_file() and "Full-scale" in readme.read_text(encoding="utf-8")
        pytest.skip("needs full BTC/BCH/LTC/ZEC dumps; see README, Full-scale reproduction")


def _peak_of_pipeline(tmp_path, days, entities):
    dump = tmp_path / f"ledger_{days}.tsv"
    write_synth(SynthConfig(seed=9, days=days, entities=entities, coinbase_per_day=1000,
                            transfer_intensity=150, genesis_supply=10**9), dump)
    manifest = RunManifest(inputs=[str(dump)], output_dir=str(tmp_path / f"out_{days}"))
    tracemalloc.start()
    try:
        run_shift(manifest)
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def test_criterion_9_memory(tmp_path):
    with criterion(9, "pipeline peak memory grows < 10% when days are quadrupled") as info:
        small = _peak_of_pipeline(tmp_path, 40, 10_000)
        large = _peak_of_pipeline(tmp_path, 160, 10_000)
        growth = large / small - 1
        info.update(entities=10_000, peak_40d_MB=round(small / 2**20, 2), peak_160d_MB=round(large / 2**20, 2),
                    growth=f"{growth:.1%}")
        assert growth < 0.10


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "two runs of one manifest give byte-identical output trees") as info:
        dump = tmp_path / "ledger.tsv.gz"
        write_synth(SynthConfig(seed=10, days=120, entities=200, coinbase_per_day=500,
                                transfer_intensity=6, spike_spec=(60, 0.4)), dump)
        out = tmp_path / "out"
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(RunManifest(inputs=[str(dump)], output_dir=str(out)).to_json())

        run_shift(RunManifest.from_json(manifest_path.read_text()))
        first = _tree(out)
        shutil.rmtree(out)
        run_shift(RunManifest.from_json(manifest_path.read_text()))
        second = _tree(out)
        assert first == second

        # with two worker processes the tree differs only in the recorded thread count
        threaded = RunManifest.from_json(manifest_path.read_text())
        threaded.threads = 2
        run_shift(threaded)
        third = _tree(out)
        assert {k: v for k, v in third.items() if k != "manifest.json"} == {
            k: v for k, v in first.items() if k != "manifest.json"
        }
        info.update(files=len(first), bytes=sum(map(len, first.values())))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
