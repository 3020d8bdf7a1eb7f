"""A three-client coalition game, scored every way this library knows.

Runs top to bottom as a plain script, or cell by cell in any editor
that understands `# %%` markers.  No training here: the game is an
explicit table, so every method's behaviour is visible by hand.
"""

# %%
from pathlib import Path

import numpy as np

from fedscore import (
    MisreportStrategy,
    TableGame,
    collect_reports,
    ee,
    ee_numerators,
    fp,
    game_round_utilities,
    influence_matrix,
    ioi,
    load_table_game,
    loo,
    shapley_exact,
)

# Clients A, B, C contribute 0, 1 and 2.  A coalition is worth the sum
# of its members' contributions, so A is a textbook null player.
values = {
    0b000: 0.0,
    0b001: 0.0,  # {A}
    0b010: 1.0,  # {B}
    0b100: 2.0,  # {C}
    0b011: 1.0,
    0b101: 2.0,
    0b110: 3.0,
    0b111: 3.0,  # {A, B, C}
}
game = TableGame.from_values(3, values)

for mask in range(8):
    members = "".join("ABC"[i] for i in range(3) if mask >> i & 1) or "-"
    print(f"v({members:>3}) = {game.table[mask]:.0f}")

# %%
# The secure-aggregation view of the same game: only the empty set, the
# grand coalition, each singleton, and each drop-one coalition.  That is
# 2N + 2 numbers; every scorer below works from these alone except
# exact Shapley, which needs the full table.
u = game_round_utilities(game)
print("v_with   :", u.v_with)
print("v_without:", u.v_without)

for vec in (
    shapley_exact(game.oracle()),
    loo(u),
    ioi(u),
    fp(u),
    ee(u),
):
    row = "  ".join(f"{s:7.4f}" for s in vec.scores)
    print(f"{vec.method:>5}  {row}")

# SV, LOO, IOI and FP all hand back (0, 1, 2) here.  EE does not: it is
# (3/4, 1, 5/4).  Client A's EE score is built entirely from what B and
# C report, and their reports say the federation works fine without any
# single one of them, which reads as shared credit.  EE trades per-game
# exactness for that independence; the next cell shows what it buys.

# %%
# Suppose C lies.  Reporting v(grand minus C) below the truth makes C
# look indispensable to leave-one-out scoring:
honest_loo = loo(u).scores
lie = MisreportStrategy("deflate_to", target=2, value=-5.0)
seen = collect_reports(u, [lie])
print("LOO before the lie:", honest_loo)
print("LOO after  the lie:", loo(seen).scores)

# EE's numerator for C never touches C's own reports, so the very same
# lie moves it by nothing at all, not even a final bit:
print("EE mass honest:", ee_numerators(u).m)
print("EE mass seen  :", ee_numerators(seen).m)
assert ee_numerators(seen).m[2] == ee_numerators(u).m[2]

# %%
# Who feeds whose EE mass?  Row i, column j is the share of j's
# numerator that client i's reports are responsible for.  The diagonal
# is exactly zero by construction.
infl = influence_matrix(u)
print(np.round(infl.normalized, 3))

# %%
# The same game grown by a fourth client D that contributes nothing,
# loaded from the text format the CLI understands
# (try: fedscore game shapley demos/data/null_client.game).
four = load_table_game(Path(__file__).parent / "data" / "null_client.game")
u4 = game_round_utilities(four)
print("SV:", shapley_exact(four.oracle()).scores)
print("FP:", fp(u4).scores)
print("EE:", ee(u4).scores)
# FP and SV zero out both null players; EE still pays each of them
# 2/3, because the other clients' reports cannot tell a freeloader
# from a redundant contributor.  Sum is still exactly v(grand).
