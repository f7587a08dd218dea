import itertools
import math

import numpy as np
import pytest

from cmlbench.comparison import (CrossoverResult, InstanceScore, RegimeCell,
                                 compare_pair, crossover_threshold,
                                 fractional_wins, mcnemar_exact, regime_report,
                                 report_pair, wilcoxon_signed_rank,
                                 write_comparison_csv, write_design_space_csv)
from cmlbench.indicators import RegimeSummary
from cmlbench.seeds import make_rng


def enumeration_wilcoxon_p(diffs):
    """Brute-force oracle: exact two-sided p over all 2^n sign patterns.

    Uses the same average-rank and 2*min(cdf, sf) conventions as the
    implementation, but computes the null distribution by enumerating
    every sign assignment instead of by dynamic programming.
    """
    diffs = np.asarray(diffs, dtype=float)
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    abs_d = np.abs(diffs)
    order = np.argsort(abs_d, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and abs_d[order[j + 1]] == abs_d[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    w_obs = ranks[diffs > 0].sum()
    w_all = []
    for signs in itertools.product((False, True), repeat=n):
        w_all.append(sum(r for r, s in zip(ranks, signs) if s))
    w_all = np.asarray(w_all)
    cdf = (w_all <= w_obs).mean()
    sf = (w_all >= w_obs).mean()
    return min(1.0, 2.0 * min(cdf, sf))


class TestWilcoxon:
    def test_all_equal_pairs(self):
        res = wilcoxon_signed_rank([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert res.p_value == 1.0
        assert res.all_zero

    def test_exact_distribution_matches_enumeration(self):
        # Exhausts every n: for untied data the null depends only on n.
        for n in range(1, 13):
            rng = make_rng(1000 + n)
            for _ in range(4):
                diffs = rng.normal(size=n)
                while np.unique(np.abs(diffs)).size < n or (diffs == 0).any():
                    diffs = rng.normal(size=n)
                res = wilcoxon_signed_rank(diffs, np.zeros(n))
                assert res.method == "exact"
                expected = enumeration_wilcoxon_p(diffs)
                assert res.p_value == pytest.approx(expected, abs=1e-12), \
                    f"n={n}, diffs={diffs}"

    def test_one_sided_shift_detected(self):
        rng = make_rng(11)
        x = rng.normal(size=20) + 2.0
        y = rng.normal(size=20)
        res = wilcoxon_signed_rank(x, y)
        assert res.p_value < 1e-3

    def test_ties_fall_back_to_normal(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        y = x - np.array([0.5, 0.5, 0.5, 0.5, 1.0, 1.0])
        res = wilcoxon_signed_rank(x, y)
        assert res.method == "normal"
        assert 0.0 < res.p_value <= 1.0

    def test_large_n_uses_normal(self):
        rng = make_rng(12)
        x = rng.normal(size=40)
        res = wilcoxon_signed_rank(x, np.zeros(40))
        assert res.method == "normal"

    def test_normal_close_to_exact_near_limit(self):
        rng = make_rng(13)
        diffs = rng.normal(size=24)
        exact = wilcoxon_signed_rank(diffs, np.zeros(24))
        assert exact.method == "exact"
        # push past the exact limit by repeating with n=26
        diffs26 = rng.normal(size=26)
        approx = wilcoxon_signed_rank(diffs26, np.zeros(26))
        assert approx.method == "normal"
        # sanity: the approximation stays a proper p-value
        assert 0.0 < approx.p_value <= 1.0

    def test_statistic_is_smaller_sum(self):
        res = wilcoxon_signed_rank([5.0, 6.0, 7.0], [1.0, 1.0, 10.0])
        # diffs 4, 5, -3 -> ranks 2, 3, 1 -> W+ = 5, W- = 1
        assert res.statistic == 1.0


class TestMcnemar:
    def test_paper_values(self):
        assert mcnemar_exact(0, 19) == pytest.approx(3.8147e-6, abs=1e-10)
        assert mcnemar_exact(0, 12) == pytest.approx(4.8828e-4, abs=1e-8)

    def test_exact_fractions(self):
        assert mcnemar_exact(0, 19) == 2.0 / 2 ** 19
        assert mcnemar_exact(0, 12) == 2.0 / 2 ** 12

    def test_symmetric_discordance(self):
        assert mcnemar_exact(5, 5) == 1.0

    def test_symmetry(self):
        for b, c in [(0, 7), (3, 11), (2, 2)]:
            assert mcnemar_exact(b, c) == mcnemar_exact(c, b)

    def test_no_discordance(self):
        assert mcnemar_exact(0, 0) == 1.0

    def test_monotone_in_c(self):
        values = [mcnemar_exact(0, c) for c in range(1, 31)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            mcnemar_exact(-1, 3)


def scores_fixture(table):
    """table: {model: {key: (vpt, valid)}} -> Scores"""
    return {m: {k: InstanceScore(mean_vpt=v, valid=ok)
                for k, (v, ok) in cells.items()}
            for m, cells in table.items()}


K1, K2 = 0.5, 2.0


def key(k, rho, n=8):
    return (k, rho, n)


class TestFractionalWins:
    def test_strict_winner_takes_all(self):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (10.0, True), key(K1, 0.2): (8.0, True)},
            "b": {key(K1, 0.1): (5.0, True), key(K1, 0.2): (7.0, True)},
        })
        table = fractional_wins(scores)
        assert table.wins == {"a": 2.0, "b": 0.0}
        assert table.n_scored == 2

    def test_two_way_tie_split(self):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (5.0, True)},
            "b": {key(K1, 0.1): (5.0, True)},
        })
        table = fractional_wins(scores)
        assert table.wins == {"a": 0.5, "b": 0.5}

    def test_three_way_tie(self):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (5.0, True)},
            "b": {key(K1, 0.1): (5.0, True)},
            "c": {key(K1, 0.1): (5.0, True)},
        })
        table = fractional_wins(scores)
        assert table.wins["a"] == pytest.approx(1 / 3)
        assert sum(table.wins.values()) == pytest.approx(1.0)

    def test_conservation(self):
        rng = make_rng(21)
        scores = {}
        keys = [key(k, r) for k in (0.5, 2.0) for r in (0.1, 0.2, 0.3)]
        for m in ("a", "b", "c"):
            scores[m] = {k: (float(rng.uniform(0, 20)), bool(rng.random() < 0.8))
                         for k in keys}
        table = fractional_wins(scores_fixture(scores))
        assert sum(table.wins.values()) == pytest.approx(table.n_scored)

    def test_invalid_models_do_not_compete(self):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (100.0, False)},
            "b": {key(K1, 0.1): (5.0, True)},
            "c": {key(K1, 0.1): (4.0, True)},
        })
        table = fractional_wins(scores)
        assert table.wins == {"a": 0.0, "b": 1.0, "c": 0.0}

    def test_unscored_instances_skipped(self):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (10.0, True), key(K1, 0.2): (9.0, True)},
            "b": {key(K1, 0.1): (5.0, False), key(K1, 0.2): (7.0, True)},
        })
        table = fractional_wins(scores)
        assert table.n_scored == 1
        assert table.wins == {"a": 1.0, "b": 0.0}

    def test_rank_invariance(self):
        rng = make_rng(22)
        keys = [key(k, r) for k in (0.5, 2.0) for r in (0.1, 0.2, 0.3, 0.4)]
        base = {m: {k: (float(rng.uniform(0, 20)), True) for k in keys}
                for m in ("a", "b", "c")}
        transformed = {m: {k: (math.exp(v / 10.0), ok)
                           for k, (v, ok) in cells.items()}
                       for m, cells in base.items()}
        t1 = fractional_wins(scores_fixture(base))
        t2 = fractional_wins(scores_fixture(transformed))
        assert t1.wins == t2.wins
        assert t1.per_k == t2.per_k

    def test_per_k_breakdown(self):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (10.0, True), key(K2, 0.1): (1.0, True)},
            "b": {key(K1, 0.1): (5.0, True), key(K2, 0.1): (2.0, True)},
        })
        table = fractional_wins(scores)
        assert table.per_k[K1] == {"a": 1.0, "b": 0.0}
        assert table.per_k[K2] == {"a": 0.0, "b": 1.0}


class TestComparePair:
    def test_contingency_and_report(self):
        cells_a = {}
        cells_b = {}
        for i in range(62):
            cells_a[key(K1, float(i))] = (10.0 + (i % 3), True)
            cells_b[key(K1, float(i))] = (10.0 + ((i + 1) % 3), True)
        for i in range(19):
            cells_a[key(K2, float(i))] = (1.0, False)
            cells_b[key(K2, float(i))] = (3.0, True)
        for i in range(15):
            cells_a[key(6.5, float(i))] = (0.5, False)
            cells_b[key(6.5, float(i))] = (0.4, False)
        scores = scores_fixture({"d2": cells_a, "gw": cells_b})
        pc = compare_pair(scores, "d2", "gw")
        assert pc.both_valid == 62
        assert pc.a_only == 0
        assert pc.b_only == 19
        assert pc.neither == 15
        report = report_pair(scores, "d2", "gw")
        assert report.mcnemar_p == pytest.approx(3.8147e-6, abs=1e-10)

    def test_identical_results_flagged(self):
        cells = {key(K1, 0.1): (5.0, True), key(K1, 0.2): (6.0, True)}
        scores = scores_fixture({"a": dict(cells), "b": dict(cells)})
        report = report_pair(scores, "a", "b")
        assert report.wilcoxon.all_zero
        assert report.wilcoxon.p_value == 1.0
        assert report.ties == 2


RHOS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


def crossover_fixture(lead_from):
    """Graph group leads at rho >= lead_from, trails below."""
    g = {}
    ng = {}
    for rho in RHOS:
        for n in (8, 16):
            better = rho >= lead_from
            g[key(K2, rho, n)] = (10.0 if better else 4.0, True)
            ng[key(K2, rho, n)] = (6.0, True)
    return scores_fixture({"graph": g, "nongraph": ng})


class TestCrossover:
    def test_uniform_graph_lead(self):
        scores = crossover_fixture(lead_from=0.0)
        out = crossover_threshold(scores, ["graph"], ["nongraph"])
        assert out[K2].rho_c == 0.05

    def test_uniform_nongraph_lead(self):
        scores = crossover_fixture(lead_from=10.0)  # never
        out = crossover_threshold(scores, ["graph"], ["nongraph"])
        assert out[K2].rho_c is None
        assert "never" in out[K2].reason

    def test_flip_between_030_and_040(self):
        scores = crossover_fixture(lead_from=0.4)
        out = crossover_threshold(scores, ["graph"], ["nongraph"])
        assert out[K2].rho_c == 0.4

    def test_insufficient_data(self):
        scores = scores_fixture({
            "graph": {key(K2, 0.1): (5.0, True)},
            "nongraph": {key(K2, 0.1): (4.0, True), key(K2, 0.2): (4.0, True)},
        })
        out = crossover_threshold(scores, ["graph"], ["nongraph"])
        assert out[K2].rho_c is None
        assert "insufficient" in out[K2].reason

    def test_transient_lead_not_crossover(self):
        # graph leads at 0.1 only, then trails: no persistent lead.
        g = {key(K2, r): (10.0 if r == 0.1 else 1.0, True) for r in RHOS}
        ng = {key(K2, r): (5.0, True) for r in RHOS}
        out = crossover_threshold(scores_fixture({"g": g, "n": ng}),
                                  ["g"], ["n"])
        assert out[K2].rho_c is None


class TestRegimeReport:
    def test_reciprocal_lyapunov_time(self):
        summary = RegimeSummary(mean_lambda_max=0.5, lambda_max_range=(0.4, 0.6),
                                chaos_fraction=1.0, lyapunov_time=2.0)
        cells = regime_report({key(K2, 0.1): summary})
        assert cells[0].lyapunov_time == 2.0
        assert cells[0].chaos_fraction == 1.0
        assert cells[0].winner is None

    def test_winner_and_margin(self):
        summary = RegimeSummary(mean_lambda_max=1.0, lambda_max_range=(1.0, 1.0),
                                chaos_fraction=1.0, lyapunov_time=1.0)
        scores = scores_fixture({
            "a": {key(K2, 0.1): (7.0, True)},
            "b": {key(K2, 0.1): (4.0, True)},
            "c": {key(K2, 0.1): (9.0, False)},
        })
        cells = regime_report({key(K2, 0.1): summary}, scores)
        assert cells[0].winner == "a"
        assert cells[0].margin == pytest.approx(3.0)

    def test_tie_breaks_alphabetically_with_zero_margin(self):
        summary = RegimeSummary(mean_lambda_max=1.0, lambda_max_range=(1.0, 1.0),
                                chaos_fraction=1.0, lyapunov_time=1.0)
        scores = scores_fixture({
            "b": {key(K2, 0.1): (7.0, True)},
            "a": {key(K2, 0.1): (7.0, True)},
        })
        cells = regime_report({key(K2, 0.1): summary}, scores)
        assert cells[0].winner == "a"
        assert cells[0].margin == 0.0


class TestCsvWriters:
    def test_comparison_csv(self, tmp_path):
        scores = scores_fixture({
            "a": {key(K1, 0.1): (5.0, True), key(K1, 0.2): (4.0, True)},
            "b": {key(K1, 0.1): (3.0, True), key(K1, 0.2): (6.0, True)},
        })
        report = report_pair(scores, "a", "b")
        path = tmp_path / "cmp.csv"
        write_comparison_csv(path, [report])
        lines = path.read_text().splitlines()
        assert lines[0].startswith("model_a,model_b,n_pairs")
        assert lines[1].startswith("a,b,2")

    def test_design_space_csv(self, tmp_path):
        cell = RegimeCell(K=2.0, rho=0.1, N=8, lyapunov_time=1.5,
                          chaos_fraction=1.0, winner=None, margin=0.0)
        path = tmp_path / "design.csv"
        write_design_space_csv(path, [cell])
        lines = path.read_text().splitlines()
        assert lines[0].startswith("K,rho,N")
        assert lines[1].startswith("2.0,0.1,8,1.5,1.0,,")
