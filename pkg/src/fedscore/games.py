"""Coalition games over a fixed client set and exact reference scores.

A game assigns a real utility to every subset of clients.  Coalitions are
bitmasks over client indices 0..N-1, so a full game is a table of 2^N
values indexed by mask.  Everything downstream (contribution scores, the
federated simulator's retraining games, the per-round aggregate games)
speaks to a game only through :class:`CoalitionOracle`, which counts and
logs every evaluation.  That audit trail is what lets tests pin down the
exact evaluation budget of each scoring method.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

# Exact enumeration walks all 2^N subsets; past this the table alone is
# over a million entries and "exact" stops being a desk-scale idea.
MAX_ENUM_CLIENTS = 20

# Recognised score provenance labels.  EE-MED is the median-aggregated
# robust variant of EE; everything else is a distinct method.
METHOD_LABELS = ("SV", "MR-SV", "LOO", "IOI", "FP", "EE", "COS", "EE-MED")


class GameError(ValueError):
    """Invalid game description or misuse of a coalition oracle."""


@dataclass(frozen=True, order=True)
class Coalition:
    """An immutable subset of clients, stored as a bitmask.

    Bit i set means client i is a member.  The empty coalition is
    ``Coalition(0)``.
    """

    mask: int = 0

    def __post_init__(self):
        if self.mask < 0:
            raise GameError(f"coalition mask must be nonnegative, got {self.mask}")

    @classmethod
    def of(cls, members: Iterable[int]) -> "Coalition":
        """Build a coalition from an iterable of client indices."""
        mask = 0
        for i in members:
            i = int(i)
            if i < 0:
                raise GameError(f"negative client index {i}")
            mask |= 1 << i
        return cls(mask)

    @classmethod
    def grand(cls, n_clients: int) -> "Coalition":
        """The coalition of all clients 0..n_clients-1."""
        if n_clients < 1:
            raise GameError(f"need at least one client, got {n_clients}")
        return cls((1 << n_clients) - 1)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.mask.bit_length()) if (self.mask >> i) & 1)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    def __contains__(self, client: int) -> bool:
        return client >= 0 and bool((self.mask >> client) & 1)

    def __iter__(self):
        return iter(self.members)

    def add(self, client: int) -> "Coalition":
        if client < 0:
            raise GameError(f"negative client index {client}")
        return Coalition(self.mask | (1 << client))

    def remove(self, client: int) -> "Coalition":
        if client not in self:
            raise GameError(f"client {client} is not in coalition {self.members}")
        return Coalition(self.mask & ~(1 << client))


class CoalitionOracle:
    """Wraps a coalition utility function and audits every evaluation.

    ``call_count`` goes up by exactly one per :meth:`evaluate` call and the
    mask of every evaluated coalition lands in the audit log, so a test can
    assert both how many utility evaluations a method consumed and which
    coalitions it was allowed to see.  Thread safe: the retraining game
    and bulk tabulation may be driven from worker threads.

    Args:
        n_clients: size of the player set; coalitions must stay within it.
        fn: the utility function, called with a :class:`Coalition`.
    """

    def __init__(self, n_clients: int, fn: Callable[[Coalition], float]):
        if n_clients < 1:
            raise GameError(f"need at least one client, got {n_clients}")
        self.n_clients = int(n_clients)
        self._fn = fn
        self._lock = threading.Lock()
        self._count = 0
        self._audit: list[int] = []

    def evaluate(self, coalition: Coalition) -> float:
        if coalition.mask >> self.n_clients:
            raise GameError(
                f"coalition {coalition.members} has members outside "
                f"0..{self.n_clients - 1}"
            )
        with self._lock:
            self._count += 1
            self._audit.append(coalition.mask)
        value = float(self._fn(coalition))
        if not math.isfinite(value):
            raise GameError(
                f"utility of coalition {coalition.members} is not finite: {value!r}"
            )
        return value

    @property
    def call_count(self) -> int:
        with self._lock:
            return self._count

    @property
    def audit_log(self) -> tuple[int, ...]:
        """Masks of all evaluated coalitions, in call order."""
        with self._lock:
            return tuple(self._audit)


@dataclass(frozen=True)
class TableGame:
    """Explicit utility table over all 2^N coalitions.

    ``table[mask]`` is the utility of the coalition with that bitmask.
    """

    n_clients: int
    table: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_clients <= MAX_ENUM_CLIENTS:
            raise GameError(
                f"table games support 1..{MAX_ENUM_CLIENTS} clients, "
                f"got {self.n_clients}"
            )
        table = np.asarray(self.table, dtype=np.float64)
        if table.shape != (2**self.n_clients,):
            raise GameError(
                f"expected {2**self.n_clients} utilities for {self.n_clients} "
                f"clients, got shape {table.shape}"
            )
        if not np.all(np.isfinite(table)):
            raise GameError("game table contains non-finite utilities")
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def from_values(
        cls, n_clients: int, values: Mapping[object, float]
    ) -> "TableGame":
        """Build a game from a mapping of coalitions to utilities.

        Keys may be Coalition objects, integer bitmasks, or iterables of
        client indices.  Every one of the 2^n_clients subsets must appear
        exactly once.
        """
        table = np.full(2**n_clients, np.nan)
        for key, value in values.items():
            if isinstance(key, Coalition):
                mask = key.mask
            elif isinstance(key, (int, np.integer)):
                mask = int(key)
            else:
                mask = Coalition.of(key).mask
            if not 0 <= mask < 2**n_clients:
                raise GameError(f"coalition mask {mask} out of range")
            if not np.isnan(table[mask]):
                raise GameError(f"coalition mask {mask} specified twice")
            table[mask] = float(value)
        if np.any(np.isnan(table)):
            missing = int(np.flatnonzero(np.isnan(table))[0])
            raise GameError(f"missing utility for coalition mask {missing}")
        return cls(n_clients, table)

    def value(self, coalition: Coalition) -> float:
        if coalition.mask >> self.n_clients:
            raise GameError(
                f"coalition {coalition.members} out of range for "
                f"{self.n_clients} clients"
            )
        return float(self.table[coalition.mask])

    def oracle(self) -> CoalitionOracle:
        """A fresh auditing oracle over this table."""
        return CoalitionOracle(self.n_clients, self.value)


@dataclass(frozen=True)
class ScoreVector:
    """Per-client scores with provenance.

    Args:
        method: one of METHOD_LABELS.
        scores: one finite float per client.
        round: 1-based round the scores refer to, if any.
    """

    method: str
    scores: np.ndarray
    round: int | None = None

    def __post_init__(self):
        if self.method not in METHOD_LABELS:
            raise GameError(
                f"unknown method label {self.method!r}, expected one of "
                f"{METHOD_LABELS}"
            )
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size < 1:
            raise GameError(f"scores must be a nonempty vector, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise GameError("scores contain non-finite values")
        scores = scores.copy()
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        if self.round is not None and self.round < 1:
            raise GameError(f"round indices are 1-based, got {self.round}")

    @property
    def n_clients(self) -> int:
        return int(self.scores.size)

    def __len__(self) -> int:
        return self.n_clients


def _tabulate(oracle: CoalitionOracle) -> np.ndarray:
    """Evaluate every coalition exactly once, in mask order."""
    n = oracle.n_clients
    if n > MAX_ENUM_CLIENTS:
        raise GameError(
            f"exact enumeration capped at {MAX_ENUM_CLIENTS} clients, got {n}"
        )
    values = np.empty(2**n)
    for mask in range(2**n):
        values[mask] = oracle.evaluate(Coalition(mask))
    return values


def _subset_sizes(n: int) -> np.ndarray:
    """Population count of every mask 0..2^n-1."""
    idx = np.arange(2**n, dtype=np.uint32)
    sizes = np.zeros(2**n, dtype=np.int64)
    for bit in range(n):
        sizes += (idx >> bit) & 1
    return sizes


def marginal(oracle: CoalitionOracle, base: Coalition, client: int) -> float:
    """Marginal contribution of ``client`` on top of ``base``.

    ``base`` must not already contain the client.
    """
    if client in base:
        raise GameError(f"client {client} already in base coalition {base.members}")
    return oracle.evaluate(base.add(client)) - oracle.evaluate(base)


def shapley_exact(oracle: CoalitionOracle) -> ScoreVector:
    """Exact Shapley scores by full enumeration.

    Tabulates all 2^N coalition utilities once (so the oracle is hit
    exactly 2^N times), then for each client sums the marginal over every
    subset S not containing it, weighted by 1 / (N * C(N-1, |S|)).  The
    result distributes v(grand) - v(empty) across clients.
    """
    values = _tabulate(oracle)
    n = oracle.n_clients
    sizes = _subset_sizes(n)
    weights = np.array([1.0 / (n * math.comb(n - 1, s)) for s in range(n)])
    idx = np.arange(2**n, dtype=np.int64)
    out = np.empty(n)
    for i in range(n):
        without = idx[(idx >> i) & 1 == 0]
        gains = values[without | (1 << i)] - values[without]
        out[i] = float(np.sum(weights[sizes[without]] * gains))
    return ScoreVector("SV", out)


def banzhaf_raw(oracle: CoalitionOracle) -> np.ndarray:
    """Raw (non-efficient) Banzhaf indices: 2^-(N-1) times the marginal sum.

    Returned as a plain array rather than a ScoreVector because the raw
    index does not satisfy efficiency and is only used as a comparison
    diagnostic.
    """
    values = _tabulate(oracle)
    n = oracle.n_clients
    idx = np.arange(2**n, dtype=np.int64)
    weight = 0.5 ** (n - 1)
    out = np.empty(n)
    for i in range(n):
        without = idx[(idx >> i) & 1 == 0]
        out[i] = weight * float(np.sum(values[without | (1 << i)] - values[without]))
    return out


def save_table_game(game: TableGame, path) -> None:
    """Write a game as text: a client-count line, then one 'mask value' line
    per coalition in mask order.  Lines starting with '#' are comments."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# coalition game: first value is the client count,\n")
        fh.write("# then one '<bitmask> <utility>' line per subset\n")
        fh.write(f"{game.n_clients}\n")
        for mask in range(2**game.n_clients):
            fh.write(f"{mask} {float(game.table[mask])!r}\n")


def load_table_game(path) -> TableGame:
    """Parse the text format written by :func:`save_table_game`."""
    entries: dict[int, float] = {}
    n_clients = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if n_clients is None:
                try:
                    n_clients = int(line)
                except ValueError:
                    raise GameError(
                        f"{path}:{lineno}: expected the client count, got {line!r}"
                    ) from None
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GameError(
                    f"{path}:{lineno}: expected '<bitmask> <utility>', got {line!r}"
                )
            try:
                mask, value = int(parts[0]), float(parts[1])
            except ValueError:
                raise GameError(
                    f"{path}:{lineno}: could not parse '<bitmask> <utility>' "
                    f"from {line!r}"
                ) from None
            if mask in entries:
                raise GameError(f"{path}:{lineno}: duplicate coalition mask {mask}")
            entries[mask] = value
    if n_clients is None:
        raise GameError(f"{path}: empty game file")
    return TableGame.from_values(n_clients, entries)
