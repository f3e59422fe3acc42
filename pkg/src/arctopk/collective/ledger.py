"""Per-node communication accounting in scalar entries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import AuditMismatch

PRIMITIVES = ("all_reduce", "all_gather", "broadcast")
METHODS = ("dense", "topk", "randk", "arc")


@dataclass
class CommLedger:
    """Cumulative scalar entries sent by one node, split by primitive."""

    counts: dict = field(default_factory=lambda: {p: 0 for p in PRIMITIVES})

    def charge(self, primitive: str, entries: int) -> None:
        if primitive not in self.counts:
            raise KeyError(f"unknown primitive {primitive!r}")
        if entries < 0:
            raise ValueError("entry counts are non-negative")
        self.counts[primitive] += int(entries)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict:
        return dict(self.counts)

    def since(self, snapshot: dict) -> int:
        """Entries charged after ``snapshot`` was taken."""
        return self.total - sum(snapshot.values())

    def reset(self) -> None:
        for p in self.counts:
            self.counts[p] = 0


def expected_entries(method: str, m: int, n: int, N: int, K: int, r: int) -> int:
    """Closed-form per-node entries for one compression round of an m x n block."""
    if method == "dense":
        return 2 * m * n
    if method == "topk":
        return (N - 1) * (n * K + K)
    if method == "randk":
        return 2 * K * n
    if method == "arc":
        return 2 * K * n + 2 * m * r
    raise ValueError(f"unknown method {method!r}")


def selected_rows(mu: float, m: int) -> int:
    """K = ceil(mu * m), guarded against float noise such as 0.3 * 10."""
    if not 0.0 < mu <= 1.0:
        raise ValueError("mu must lie in (0, 1]")
    K = math.ceil(round(mu * m, 9))
    return max(1, min(m, K))


def audit_round(method: str, m: int, n: int, N: int, K: int, r: int, observed: int) -> int:
    """Check one round's observed per-node entries against the closed form.

    Returns the expected count; raises :class:`AuditMismatch` otherwise.
    The closed forms assume N >= 2; a single node never communicates.
    """
    expected = expected_entries(method, m, n, N, K, r) if N > 1 else 0
    if int(observed) != expected:
        raise AuditMismatch(method, expected, int(observed))
    return expected
