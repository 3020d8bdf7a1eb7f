"""The reporting surface between clients and the scoring server.

A client influences scoring through exactly two numbers each round: the
utility of the start model plus its own update, and the utility of the
aggregate minus its own update.  This module models a client lying about
them (equivalently, shipping a doctored update), quantifies how much each
client's honest reports feed everyone else's EE mass, and provides a
robust EE variant that swaps the mean over other clients for a median.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .games import ScoreVector
from .scoring import (
    RoundUtilities,
    _efficient_rescale,
    ee,
    ee_numerators,
    fp,
    loo,
)

_STRATEGY_KINDS = ("honest", "additive_bias", "scale", "deflate_to")

_SWEEP_SCORERS = ("LOO", "FP", "EE")


class ProtocolError(ValueError):
    """Invalid report set or misreport description."""


@dataclass(frozen=True)
class MarginalReport:
    """The two per-client utilities the server learns in a round."""

    client: int
    v_with: float
    v_without: float

    def __post_init__(self):
        if self.client < 0:
            raise ProtocolError(f"negative client index {self.client}")
        if not (np.isfinite(self.v_with) and np.isfinite(self.v_without)):
            raise ProtocolError(f"non-finite report from client {self.client}")


@dataclass(frozen=True)
class MisreportStrategy:
    """How one client distorts its two reportable values.

    kinds:
        honest         -- no change (value ignored);
        additive_bias  -- adds ``value`` to both;
        scale          -- multiplies both by ``value``;
        deflate_to     -- replaces both with ``value``.
    """

    kind: str
    target: int
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in _STRATEGY_KINDS:
            raise ProtocolError(
                f"unknown misreport kind {self.kind!r}, expected one of "
                f"{_STRATEGY_KINDS}"
            )
        if self.target < 0:
            raise ProtocolError(f"negative client index {self.target}")
        if not np.isfinite(self.value):
            raise ProtocolError(f"non-finite strategy value {self.value!r}")

    def apply(self, v_with: float, v_without: float) -> tuple[float, float]:
        if self.kind == "honest":
            return v_with, v_without
        if self.kind == "additive_bias":
            return v_with + self.value, v_without + self.value
        if self.kind == "scale":
            return v_with * self.value, v_without * self.value
        return self.value, self.value

    def describe(self) -> str:
        if self.kind == "honest":
            return "honest"
        return f"{self.kind}({self.value!r})"


def reports_from(utilities: RoundUtilities) -> list[MarginalReport]:
    """The honest reports implied by a round's utilities."""
    return [
        MarginalReport(i, float(utilities.v_with[i]), float(utilities.v_without[i]))
        for i in range(utilities.n_clients)
    ]


def collect_reports(
    utilities: RoundUtilities, strategies: Sequence[MisreportStrategy] = ()
) -> RoundUtilities:
    """Assemble the utilities the server actually sees.

    Starts from honest reports and lets each strategy rewrite its target
    client's pair.  At most one strategy per client.
    """
    seen = set()
    for s in strategies:
        if s.target >= utilities.n_clients:
            raise ProtocolError(
                f"strategy targets client {s.target}, but there are only "
                f"{utilities.n_clients} clients"
            )
        if s.target in seen:
            raise ProtocolError(f"two strategies target client {s.target}")
        seen.add(s.target)
    out = utilities
    for s in strategies:
        v_w, v_wo = s.apply(
            float(utilities.v_with[s.target]), float(utilities.v_without[s.target])
        )
        out = out.replace_client(s.target, v_w, v_wo)
    return out


def influence(utilities: RoundUtilities, client: int) -> float:
    """Total mass client ``client``'s two reports feed into each other
    client's EE numerator, before the 1/(2(N-1)^2) scaling:
    (v_grand - v_with[i]) + (v_without[i] - v_empty)."""
    if not 0 <= client < utilities.n_clients:
        raise ProtocolError(f"client {client} out of range")
    return float(
        (utilities.v_grand - utilities.v_with[client])
        + (utilities.v_without[client] - utilities.v_empty)
    )


@dataclass(frozen=True)
class InfluenceMatrix:
    """Who feeds whose EE mass.

    entries[i, j] is the contribution of client i's reports to client j's
    EE numerator m(j); the diagonal is exactly zero because no client's
    reports enter its own numerator.  ``normalized`` rescales every column
    to sum to 1; columns that sum to zero are left zero, columns with a
    negative sum are divided by the sum of absolute entries, and both
    cases are listed in ``flagged_columns``.
    """

    entries: np.ndarray
    normalized: np.ndarray
    flagged_columns: tuple[int, ...]

    def __post_init__(self):
        for name in ("entries", "normalized"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "flagged_columns", tuple(self.flagged_columns))

    @property
    def n_clients(self) -> int:
        return int(self.entries.shape[0])


def influence_matrix(utilities: RoundUtilities) -> InfluenceMatrix:
    """Per-pair influence: entry (i, j) = influence(i) / (2(N-1)^2) off the
    diagonal, zero on it.  Each column j then sums to m(j)."""
    n = utilities.n_clients
    if n < 2:
        raise ProtocolError("influence needs at least two clients")
    scale = 2.0 * (n - 1) ** 2
    per_client = np.array([influence(utilities, i) for i in range(n)]) / scale
    entries = np.tile(per_client[:, None], (1, n))
    np.fill_diagonal(entries, 0.0)

    normalized = np.zeros_like(entries)
    flagged = []
    for j in range(n):
        total = float(np.sum(entries[:, j]))
        if total > 0.0:
            normalized[:, j] = entries[:, j] / total
        elif total == 0.0:
            flagged.append(j)
        else:
            abs_total = float(np.sum(np.abs(entries[:, j])))
            normalized[:, j] = entries[:, j] / abs_total
            flagged.append(j)
    return InfluenceMatrix(entries, normalized, tuple(flagged))


@dataclass(frozen=True)
class SweepRow:
    """Effect of one misreport on one scorer."""

    scorer: str
    attacker: int
    strategy: str
    own_delta: float
    max_other_delta: float
    numerator_delta: float


def _unnormalized_mass(scorer: str, utilities: RoundUtilities, client: int) -> float:
    if scorer == "LOO":
        return float(utilities.v_grand - utilities.v_without[client])
    if scorer == "FP":
        loo_term = utilities.v_grand - utilities.v_without[client]
        ioi_term = utilities.v_with[client] - utilities.v_empty
        return float((loo_term + ioi_term) / 2.0)
    return float(ee_numerators(utilities).m[client])


def _score(scorer: str, utilities: RoundUtilities) -> np.ndarray:
    if scorer == "LOO":
        return loo(utilities).scores
    if scorer == "FP":
        return fp(utilities).scores
    return ee(utilities).scores


def manipulation_sweep(
    utilities: RoundUtilities,
    strategies: Sequence[MisreportStrategy],
    scorers: Sequence[str] = _SWEEP_SCORERS,
) -> list[SweepRow]:
    """Apply each misreport in isolation and record, per scorer, how much
    the attacker's own score moved, the largest move of anyone else's
    score, and the change in the attacker's unnormalised mass."""
    for scorer in scorers:
        if scorer not in _SWEEP_SCORERS:
            raise ProtocolError(
                f"sweep scorer must be one of {_SWEEP_SCORERS}, got {scorer!r}"
            )
    rows = []
    for strategy in strategies:
        seen = collect_reports(utilities, [strategy])
        i = strategy.target
        for scorer in scorers:
            honest = _score(scorer, utilities)
            lied = _score(scorer, seen)
            others = np.delete(np.abs(lied - honest), i)
            rows.append(
                SweepRow(
                    scorer=scorer,
                    attacker=i,
                    strategy=strategy.describe(),
                    own_delta=float(lied[i] - honest[i]),
                    max_other_delta=float(others.max()) if others.size else 0.0,
                    numerator_delta=float(
                        _unnormalized_mass(scorer, seen, i)
                        - _unnormalized_mass(scorer, utilities, i)
                    ),
                )
            )
    return rows


def robust_ee(utilities: RoundUtilities, aggregator: str = "mean") -> ScoreVector:
    """EE with a pluggable aggregate over the other clients' terms.

    "mean" is exactly :func:`fedscore.scoring.ee`.  "median" replaces the
    mean over the N-1 other clients with a median, which shrugs off a
    single wild report at the cost of the exact efficiency decomposition;
    the result is still rescaled to sum to v(grand) and labelled EE-MED.
    """
    if aggregator == "mean":
        return ee(utilities)
    if aggregator != "median":
        raise ProtocolError(
            f"aggregator must be 'mean' or 'median', got {aggregator!r}"
        )
    n = utilities.n_clients
    if n < 3:
        raise ProtocolError(
            "median aggregation needs at least three clients; with fewer "
            "the median of one term is the term itself"
        )
    beta_terms = utilities.v_grand - utilities.v_with
    gamma_terms = utilities.v_without - utilities.v_empty
    others = [np.arange(n) != i for i in range(n)]
    beta = np.array([np.median(beta_terms[others[i]]) for i in range(n)]) / (n - 1)
    gamma = np.array([np.median(gamma_terms[others[i]]) for i in range(n)]) / (n - 1)
    m = (beta + gamma) / 2.0
    vec, _ = _efficient_rescale(
        [("m", m), ("beta", beta), ("gamma", gamma)],
        utilities.v_grand,
        n,
        "EE-MED",
    )
    return vec


def influence_to_csv(matrix: InfluenceMatrix, path, normalized: bool = True) -> None:
    """Write an influence matrix as CSV, one row per source client."""
    table = matrix.normalized if normalized else matrix.entries
    n = matrix.n_clients
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source"] + [f"to_client_{j}" for j in range(n)])
        for i in range(n):
            writer.writerow([f"client_{i}"] + [repr(float(v)) for v in table[i]])


def influence_to_json(matrix: InfluenceMatrix, path) -> None:
    payload = {
        "entries": [[float(v) for v in row] for row in matrix.entries],
        "normalized": [[float(v) for v in row] for row in matrix.normalized],
        "flagged_columns": list(matrix.flagged_columns),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def sweep_to_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scorer", "attacker", "strategy", "own_delta", "max_other_delta",
             "numerator_delta"]
        )
        for r in rows:
            writer.writerow(
                [r.scorer, r.attacker, r.strategy, repr(r.own_delta),
                 repr(r.max_other_delta), repr(r.numerator_delta)]
            )


def sweep_to_json(rows: Sequence[SweepRow], path) -> None:
    payload = [
        {
            "scorer": r.scorer,
            "attacker": r.attacker,
            "strategy": r.strategy,
            "own_delta": r.own_delta,
            "max_other_delta": r.max_other_delta,
            "numerator_delta": r.numerator_delta,
        }
        for r in rows
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
