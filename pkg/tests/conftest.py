import random

import pytest

from stakeshift.ledger import SECONDS_PER_DAY, Transaction, TxIn, TxOut, format_transaction


def tx(tx_id, day, ins=(), outs=(), hint=None, second=0):
    """Build a transaction from ``(address, value)`` pairs."""
    return Transaction(
        tx_id,
        day * SECONDS_PER_DAY + second,
        tuple(TxIn(a, v) for a, v in ins),
        tuple(TxOut(a, v) for a, v in outs),
        hint,
    )


def dump_text(transactions):
    return "".join(format_transaction(t) + "\n" for t in transactions)


def random_ledger(rng: random.Random, n_addresses=20, n_days=10, n_tx=60, max_inputs=3):
    """Random valid ledger: coinbases and address-level spends, never overdrawn."""
    addrs = [f"r{i:03d}" for i in range(n_addresses)]
    bal = dict.fromkeys(addrs, 0)
    out = []
    for n in range(n_tx):
        day = n * n_days // n_tx
        funded = [a for a in addrs if bal[a]]
        if not funded or rng.random() < 0.25:
            a = rng.choice(addrs)
            v = rng.randint(1, 1000)
            bal[a] += v
            out.append(tx(f"t{n}", day, (), [(a, v)], second=n))
            continue
        srcs = rng.sample(funded, min(len(funded), rng.randint(1, max_inputs)))
        ins = [(a, rng.randint(1, bal[a])) for a in srcs]
        for a, v in ins:
            bal[a] -= v
        total = sum(v for _, v in ins)
        fee = rng.randint(0, min(2, total - 1)) if total > 1 else 0
        pay = total - fee
        outs = []
        while pay:
            v = rng.randint(1, pay)
            dst = rng.choice(addrs + ["__UNSPENDABLE__"]) if rng.random() < 0.05 else rng.choice(addrs)
            outs.append((dst, v))
            if dst in bal:
                bal[dst] += v
            pay -= v
        out.append(tx(f"t{n}", day, ins, outs, hint=rng.choice([None, None, None, False, True]), second=n))
    return out


@pytest.fixture
def rng():
    return random.Random(20191031)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
