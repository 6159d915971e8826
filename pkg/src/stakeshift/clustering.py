"""Multiple-input address clustering with CoinJoin filtering."""

from __future__ import annotations

import gzip
import json
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

from .ledger import UNSPENDABLE, Transaction


def detect_coinjoin(tx: Transaction) -> bool:
    """Return the dump's hint if present, else a shape heuristic.

    The built-in heuristic flags transactions with at least 3 inputs, at
    least 3 outputs and some output value repeated at least 3 times. It is a
    stand-in for an external detector, not a reconstruction of one.
    """
    if tx.coinjoin_hint is not None:
        return tx.coinjoin_hint
    if len(tx.inputs) < 3 or len(tx.outputs) < 3:
        return False
    counts = Counter(o.value for o in tx.outputs)
    return max(counts.values()) >= 3


class UnionFind:
    """Disjoint-set forest over hashable keys, union by size, path compression."""

    def __init__(self):
        self.parent: dict = {}
        self.size: dict = {}

    def add(self, key) -> None:
        if key not in self.parent:
            self.parent[key] = key
            self.size[key] = 1

    def find(self, key):
        parent = self.parent
        root = key
        while parent[root] != root:
            root = parent[root]
        while parent[key] != root:
            parent[key], key = root, parent[key]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        del self.size[rb]
        return True

    def __len__(self):
        return len(self.parent)


@dataclass(frozen=True)
class EntityAssignment:
    """Partition of addresses into entities.

    Addresses are indexed by their rank in sorted order; an entity's id is the
    smallest index among its addresses, so ids depend only on the partition.
    """

    entity_of: Mapping[str, int]
    cluster_count: int
    entity_count: int

    def __getitem__(self, address: str) -> int:
        return self.entity_of[address]

    def __contains__(self, address: str) -> bool:
        return address in self.entity_of

    def __len__(self):
        return len(self.entity_of)

    def members(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for address in sorted(self.entity_of):
            out.setdefault(self.entity_of[address], []).append(address)
        return out

    @property
    def singleton_count(self) -> int:
        return self.entity_count - self.cluster_count

    @classmethod
    def from_mapping(cls, entity_of: Mapping[str, int]) -> "EntityAssignment":
        sizes = Counter(entity_of.values())
        clusters = sum(1 for n in sizes.values() if n >= 2)
        return cls(dict(entity_of), clusters, len(sizes))


def cluster_addresses(transactions: Iterable[Transaction]) -> EntityAssignment:
    uf = UnionFind()
    for tx in transactions:
        for o in tx.outputs:
            if o.address != UNSPENDABLE:
                uf.add(o.address)
        if not tx.inputs:
            continue
        first = tx.inputs[0].address
        for i in tx.inputs:
            uf.add(i.address)
        if len(tx.inputs) > 1 and not detect_coinjoin(tx):
            for i in tx.inputs[1:]:
                uf.union(first, i.address)
    return canonicalize(uf)


def canonicalize(uf: UnionFind) -> EntityAssignment:
    ordered = sorted(uf.parent)
    canon: dict = {}
    entity_of = {}
    for index, address in enumerate(ordered):
        root = uf.find(address)
        # sorted iteration: the first member seen is the minimum index
        entity_of[address] = canon.setdefault(root, index)
    clusters = sum(1 for n in uf.size.values() if n >= 2)
    return EntityAssignment(entity_of, clusters, len(uf.size))


def write_assignment(assignment: EntityAssignment, path: str | os.PathLike) -> None:
    """Write ``address<TAB>entity_id`` sorted by address."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for address in sorted(assignment.entity_of):
            fh.write(f"{address}\t{assignment.entity_of[address]}\n")


def read_assignment(path: str | os.PathLike) -> EntityAssignment:
    entity_of = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected address<TAB>entity_id")
            try:
                entity_of[parts[0]] = int(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad entity id {parts[1]!r}") from None
    return EntityAssignment.from_mapping(entity_of)


def save_cache(assignment: EntityAssignment, path: str | os.PathLike) -> None:
    """Compact cache: sorted address list plus parallel entity-id list, gzipped JSON."""
    addresses = sorted(assignment.entity_of)
    payload = {
        "addresses": addresses,
        "entities": [assignment.entity_of[a] for a in addresses],
        "cluster_count": assignment.cluster_count,
        "entity_count": assignment.entity_count,
    }
    # no name and mtime=0 keep the cache byte-identical across runs and paths
    with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
        fh.write(json.dumps(payload, separators=(",", ":")).encode("utf-8"))


def load_cache(path: str | os.PathLike) -> EntityAssignment:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        payload = json.load(fh)
    entity_of = dict(zip(payload["addresses"], payload["entities"]))
    return EntityAssignment(entity_of, payload["cluster_count"], payload["entity_count"])
