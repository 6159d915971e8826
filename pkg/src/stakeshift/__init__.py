"""Stabilized stake shift over UTXO ledgers."""

__version__ = "0.1.0"

from .analytics import (  # noqa: E402
    LagSummary,
    QuadraticFit,
    ResilienceQuery,
    attribute_entities,
    fit_quadratic,
    protocol_catalog,
    resilience_bound,
    summary_stats,
)
from .balances import FEE_POOL, BalanceSeries, balance_at, compute_balances, stream_balances  # noqa: E402
from .clustering import EntityAssignment, cluster_addresses, detect_coinjoin  # noqa: E402
from .ledger import Transaction, TxIn, TxOut, parse_transactions, period_of, scan_stats  # noqa: E402
from .shift import (  # noqa: E402
    StakeShiftSeries,
    execution_max_shift,
    stake_shift_series,
    statistical_distance,
    top_contributors,
)
from .synth import SynthConfig, generate, naive_shift_oracle  # noqa: E402
