"""Coalition plumbing and exact allocation rules.

The Shapley implementation is checked against an independent oracle: the
permutation definition (average marginal contribution over all N! client
orderings), written here with plain itertools so the two computations
share no code.
"""

import itertools
import math

import numpy as np
import pytest

from fedscore import (
    Coalition,
    CoalitionOracle,
    GameError,
    ScoreVector,
    TableGame,
    banzhaf_raw,
    load_table_game,
    marginal,
    save_table_game,
    shapley_exact,
)

from helpers import WORKED_VALUES, additive_game, random_game, worked_game


def permutation_shapley(game: TableGame) -> np.ndarray:
    """Reference Shapley via the N! orderings definition."""
    n = game.n_clients
    totals = np.zeros(n)
    for order in itertools.permutations(range(n)):
        mask = 0
        for i in order:
            with_i = mask | (1 << i)
            totals[i] += game.table[with_i] - game.table[mask]
            mask = with_i
    return totals / math.factorial(n)


def subset_banzhaf(game: TableGame) -> np.ndarray:
    """Reference raw Banzhaf: mean marginal over subsets excluding i."""
    n = game.n_clients
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for mask in range(2**n):
            if not mask >> i & 1:
                acc += game.table[mask | (1 << i)] - game.table[mask]
        out[i] = acc / 2 ** (n - 1)
    return out


class TestCoalition:
    def test_members_roundtrip(self):
        c = Coalition.of([0, 3, 5])
        assert c.members == (0, 3, 5)
        assert c.size == 3
        assert 3 in c and 1 not in c
        assert list(c) == [0, 3, 5]

    def test_grand(self):
        assert Coalition.grand(4).members == (0, 1, 2, 3)
        assert Coalition.grand(1).mask == 0b1

    def test_add_remove(self):
        c = Coalition.of([1])
        assert c.add(0).members == (0, 1)
        assert c.add(0).remove(1).members == (0,)
        # add is idempotent, remove is strict
        assert c.add(1) == c
        with pytest.raises(GameError):
            c.remove(0)

    def test_negative_member_rejected(self):
        with pytest.raises(GameError):
            Coalition.of([-1])
        with pytest.raises(GameError):
            Coalition(-1)

    def test_empty(self):
        assert Coalition.of([]).size == 0
        assert Coalition.of([]).members == ()


class TestCoalitionOracle:
    def test_counts_every_call(self):
        oracle = CoalitionOracle(3, lambda c: float(c.size))
        for members in ([], [0], [0, 1], [0, 1, 2], [0]):
            oracle.evaluate(Coalition.of(members))
        assert oracle.call_count == 5
        assert oracle.audit_log == (0b000, 0b001, 0b011, 0b111, 0b001)

    def test_out_of_range_rejected(self):
        oracle = CoalitionOracle(2, lambda c: 0.0)
        with pytest.raises(GameError):
            oracle.evaluate(Coalition.of([2]))

    def test_non_finite_value_rejected(self):
        oracle = CoalitionOracle(1, lambda c: float("nan"))
        with pytest.raises(GameError):
            oracle.evaluate(Coalition.of([0]))


class TestTableGame:
    def test_from_values_key_forms(self):
        by_mask = TableGame.from_values(2, {0: 0.0, 1: 1.0, 2: 2.0, 3: 3.0})
        by_members = TableGame.from_values(
            2, {(): 0.0, (0,): 1.0, (1,): 2.0, (0, 1): 3.0}
        )
        by_coalition = TableGame.from_values(
            2, {Coalition(m): float(m) if m != 2 else 2.0 for m in range(4)}
        )
        # mask m maps to utility: 0,1,2,3 in each spelling
        assert np.array_equal(by_mask.table, by_members.table)
        assert np.array_equal(by_mask.table, by_coalition.table)

    def test_missing_coalition_rejected(self):
        with pytest.raises(GameError, match="missing"):
            TableGame.from_values(2, {0: 0.0, 1: 1.0, 3: 3.0})

    def test_value_lookup(self):
        game = worked_game()
        assert game.value(Coalition.of([1, 2])) == 3.0
        assert game.value(Coalition.of([])) == 0.0

    def test_oracle_tabulation_cost(self):
        game = worked_game()
        oracle = game.oracle()
        sv = shapley_exact(oracle)
        assert oracle.call_count == 2**3
        assert sorted(oracle.audit_log) == list(range(8))
        assert sv.method == "SV"

    def test_too_many_clients_rejected(self):
        with pytest.raises(GameError):
            TableGame(21, np.zeros(2**21))


class TestScoreVector:
    def test_validation(self):
        ScoreVector("LOO", np.array([1.0, 2.0]), round=1)
        with pytest.raises(GameError):
            ScoreVector("XX", np.array([1.0]), round=1)
        with pytest.raises(GameError):
            ScoreVector("LOO", np.array([np.inf]), round=1)
        with pytest.raises(GameError):
            ScoreVector("LOO", np.array([1.0]), round=0)

    def test_round_optional(self):
        vec = ScoreVector("SV", np.array([0.5]))
        assert vec.round is None
        assert len(vec) == 1


class TestShapley:
    def test_worked_example(self):
        sv = shapley_exact(worked_game().oracle())
        np.testing.assert_allclose(sv.scores, [0.0, 1.0, 2.0], atol=1e-12)

    def test_matches_permutation_definition(self):
        rng = np.random.default_rng(61)
        for _ in range(25):
            n = int(rng.integers(2, 6))
            game = random_game(rng, n)
            got = shapley_exact(game.oracle()).scores
            np.testing.assert_allclose(got, permutation_shapley(game), atol=1e-12)

    def test_additive_games_give_per_client_values(self):
        rng = np.random.default_rng(62)
        for _ in range(20):
            c = rng.normal(size=int(rng.integers(1, 7)))
            sv = shapley_exact(additive_game(c).oracle()).scores
            np.testing.assert_allclose(sv, c, atol=1e-12)

    def test_efficiency(self):
        rng = np.random.default_rng(63)
        for _ in range(20):
            game = random_game(rng, int(rng.integers(2, 7)), zero_empty=False)
            sv = shapley_exact(game.oracle()).scores
            expected = game.table[-1] - game.table[0]
            assert abs(sv.sum() - expected) < 1e-9


class TestBanzhaf:
    def test_matches_subset_definition(self):
        rng = np.random.default_rng(64)
        for _ in range(15):
            game = random_game(rng, int(rng.integers(2, 6)))
            got = banzhaf_raw(game.oracle())
            np.testing.assert_allclose(got, subset_banzhaf(game), atol=1e-12)

    def test_additive_agreement(self):
        c = np.array([0.3, -0.2, 1.1])
        np.testing.assert_allclose(
            banzhaf_raw(additive_game(c).oracle()), c, atol=1e-12
        )


class TestMarginal:
    def test_is_value_difference(self):
        game = worked_game()
        base = Coalition.of([1])
        got = marginal(game.oracle(), base, 2)
        assert got == game.value(base.add(2)) - game.value(base)

    def test_member_of_base_rejected(self):
        with pytest.raises(GameError):
            marginal(worked_game().oracle(), Coalition.of([1]), 1)


class TestGameFiles:
    def test_roundtrip(self, tmp_path):
        game = worked_game()
        path = tmp_path / "worked.game"
        save_table_game(game, path)
        loaded = load_table_game(path)
        assert loaded.n_clients == 3
        assert np.array_equal(loaded.table, game.table)

    def test_roundtrip_preserves_exact_floats(self, tmp_path):
        rng = np.random.default_rng(65)
        game = random_game(rng, 4, zero_empty=False)
        path = tmp_path / "random.game"
        save_table_game(game, path)
        assert np.array_equal(load_table_game(path).table, game.table)

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "annotated.game"
        path.write_text(
            "# a 1-client game\n"
            "1\n"
            "\n"
            "0 0.0  # empty\n"
            "1 2.5\n"
        )
        game = load_table_game(path)
        assert game.value(Coalition.of([0])) == 2.5

    def test_duplicate_mask_rejected(self, tmp_path):
        path = tmp_path / "dup.game"
        path.write_text("1\n0 0.0\n1 1.0\n1 2.0\n")
        with pytest.raises(GameError, match=":4"):
            load_table_game(path)

    def test_unparseable_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.game"
        path.write_text("1\n0 0.0\nnot a row\n")
        with pytest.raises(GameError, match=":3"):
            load_table_game(path)

    def test_missing_row_rejected(self, tmp_path):
        path = tmp_path / "short.game"
        path.write_text("2\n0 0.0\n1 1.0\n2 2.0\n")
        with pytest.raises(GameError):
            load_table_game(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.game"
        path.write_text("# nothing here\n")
        with pytest.raises(GameError, match="empty"):
            load_table_game(path)


def test_worked_values_are_additive():
    """The shared example really is the additive game over (0, 1, 2)."""
    assert np.array_equal(worked_game().table, additive_game([0.0, 1.0, 2.0]).table)
    assert WORKED_VALUES[0b111] == 3.0
