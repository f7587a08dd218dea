"""Dual-view model comparison: paired accuracy tests and robustness tests.

Two models are compared from two complementary angles:

* *conditional accuracy* restricts to instances where both models
  produce valid rollouts and applies a two-sided Wilcoxon signed-rank
  test to the matched VPT pairs;
* *robustness* looks at the 2x2 valid/invalid contingency over all
  instances and applies McNemar's exact test to the discordant counts.

Fractional win tables credit each scored instance (one with at least
two valid models) with a total of 1.0, split equally among the models
tied at the top VPT.

The Wilcoxon implementation uses the exact null distribution (a
dynamic program over signed-rank sums) for n <= 25 without ties in the
absolute differences, and a normal approximation with tie and
continuity corrections otherwise.  Two-sided p-values follow the
``2 * min(P(W <= w), P(W >= w))`` convention, capped at 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .indicators import RegimeSummary

__all__ = [
    "WILCOXON_EXACT_LIMIT",
    "WilcoxonResult",
    "CrossoverResult",
    "PairedComparison",
    "ComparisonReport",
    "WinTable",
    "InstanceScore",
    "wilcoxon_signed_rank",
    "mcnemar_exact",
    "fractional_wins",
    "compare_pair",
    "crossover_threshold",
    "regime_report",
    "RegimeCell",
    "write_comparison_csv",
    "write_design_space_csv",
]

WILCOXON_EXACT_LIMIT = 25


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their rank block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _signed_rank_counts(n: int) -> list[int]:
    """Exact null counts of W+ over 0 .. n(n+1)/2 for untied ranks 1..n."""
    total = n * (n + 1) // 2
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in range(1, n + 1):
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    return counts


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_used: int
    method: str
    all_zero: bool = False

    def __iter__(self):
        return iter((self.statistic, self.p_value))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on matched pairs.

    Zero differences are dropped (signed-rank convention); if every
    difference is zero the result carries ``p = 1.0`` with the
    ``all_zero`` flag set.  The statistic is ``min(W+, W-)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be 1-d arrays of equal length")
    diffs = x - y
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_used=0,
                              method="degenerate", all_zero=True)
    abs_d = np.abs(diffs)
    ranks = _average_ranks(abs_d)
    w_plus = float(ranks[diffs > 0].sum())
    total = n * (n + 1) / 2.0
    w_minus = total - w_plus
    statistic = min(w_plus, w_minus)

    has_ties = np.unique(abs_d).size < n
    if n <= WILCOXON_EXACT_LIMIT and not has_ties:
        counts = _signed_rank_counts(n)
        denom = 2 ** n
        w = int(round(w_plus))
        cdf = sum(counts[: w + 1])
        sf = sum(counts[w:])
        p = min(1.0, 2.0 * min(cdf, sf) / denom)
        return WilcoxonResult(statistic=statistic, p_value=p, n_used=n,
                              method="exact")

    mu = total / 2.0
    tie_sizes = np.unique(abs_d, return_counts=True)[1]
    tie_term = float((tie_sizes ** 3 - tie_sizes).sum()) / 48.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    sigma = math.sqrt(max(sigma2, 1e-300))
    delta = w_plus - mu
    if delta > 0:
        delta -= 0.5
    elif delta < 0:
        delta += 0.5
    z = delta / sigma
    p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(statistic=statistic, p_value=p, n_used=n,
                          method="normal")


def mcnemar_exact(a_only: int, b_only: int) -> float:
    """Exact two-sided McNemar p-value from the discordant counts.

    ``p = min(1, 2 * sum_{k <= min(b, c)} C(b + c, k) / 2^(b + c))``;
    a table with no discordant instances scores 1.0.
    """
    if a_only < 0 or b_only < 0:
        raise ValueError("discordant counts must be non-negative")
    n = a_only + b_only
    if n == 0:
        return 1.0
    k_max = min(a_only, b_only)
    tail = sum(math.comb(n, k) for k in range(k_max + 1))
    return min(1.0, 2.0 * tail / 2 ** n)


@dataclass(frozen=True)
class InstanceScore:
    """Seed-averaged standing of one model on one instance."""

    mean_vpt: float
    valid: bool


Scores = Mapping[str, Mapping[tuple[float, float, int], InstanceScore]]


@dataclass(frozen=True)
class WinTable:
    """Fractional wins over scored instances, overall and per K."""

    wins: dict[str, float]
    per_k: dict[float, dict[str, float]]
    n_scored: int


def fractional_wins(scores: Scores) -> WinTable:
    """Credit 1.0 per scored instance, split equally among top-VPT models.

    An instance is scored when at least two models are valid on it;
    only valid models compete for its win.
    """
    models = sorted(scores)
    if len(models) < 2:
        raise ValueError("fractional wins require at least two models")
    all_keys = sorted({k for m in models for k in scores[m]})
    wins = {m: 0.0 for m in models}
    per_k: dict[float, dict[str, float]] = {}
    n_scored = 0
    for key in all_keys:
        valid_models = [
            m for m in models
            if key in scores[m] and scores[m][key].valid
            and not math.isnan(scores[m][key].mean_vpt)
        ]
        if len(valid_models) < 2:
            continue
        n_scored += 1
        best = max(scores[m][key].mean_vpt for m in valid_models)
        winners = [m for m in valid_models if scores[m][key].mean_vpt == best]
        share = 1.0 / len(winners)
        k_table = per_k.setdefault(key[0], {m: 0.0 for m in models})
        for m in winners:
            wins[m] += share
            k_table[m] += share
    return WinTable(wins=wins, per_k=per_k, n_scored=n_scored)


@dataclass(frozen=True)
class PairedComparison:
    """Raw material of one A-vs-B comparison."""

    model_a: str
    model_b: str
    matched: tuple[tuple[float, float], ...]
    both_valid: int
    a_only: int
    b_only: int
    neither: int


def compare_pair(scores: Scores, model_a: str, model_b: str) -> PairedComparison:
    """Pair two models over the union of their instances."""
    keys = sorted(set(scores[model_a]) | set(scores[model_b]))
    matched = []
    a_only = b_only = neither = 0
    for key in keys:
        sa = scores[model_a].get(key)
        sb = scores[model_b].get(key)
        va = sa is not None and sa.valid
        vb = sb is not None and sb.valid
        if va and vb:
            matched.append((sa.mean_vpt, sb.mean_vpt))
        elif va:
            a_only += 1
        elif vb:
            b_only += 1
        else:
            neither += 1
    return PairedComparison(model_a=model_a, model_b=model_b,
                            matched=tuple(matched), both_valid=len(matched),
                            a_only=a_only, b_only=b_only, neither=neither)


@dataclass(frozen=True)
class ComparisonReport:
    """One pairwise comparison row: accuracy and robustness views."""

    model_a: str
    model_b: str
    n_pairs: int
    wins_a: float
    wins_b: float
    ties: int
    wilcoxon: WilcoxonResult
    a_only: int
    b_only: int
    mcnemar_p: float


def report_pair(scores: Scores, model_a: str, model_b: str) -> ComparisonReport:
    pc = compare_pair(scores, model_a, model_b)
    va = np.array([m[0] for m in pc.matched])
    vb = np.array([m[1] for m in pc.matched])
    if pc.matched:
        wil = wilcoxon_signed_rank(va, vb)
        wins_a = float((va > vb).sum()) + 0.5 * float((va == vb).sum())
        wins_b = float((vb > va).sum()) + 0.5 * float((va == vb).sum())
        ties = int((va == vb).sum())
    else:
        wil = WilcoxonResult(statistic=0.0, p_value=1.0, n_used=0,
                             method="degenerate", all_zero=True)
        wins_a = wins_b = 0.0
        ties = 0
    return ComparisonReport(model_a=model_a, model_b=model_b,
                            n_pairs=pc.both_valid, wins_a=wins_a,
                            wins_b=wins_b, ties=ties, wilcoxon=wil,
                            a_only=pc.a_only, b_only=pc.b_only,
                            mcnemar_p=mcnemar_exact(pc.a_only, pc.b_only))


@dataclass(frozen=True)
class CrossoverResult:
    rho_c: Optional[float]
    reason: str


def crossover_threshold(scores: Scores, graph_models: Sequence[str],
                        nongraph_models: Sequence[str]) -> dict[float, CrossoverResult]:
    """Smallest grid rho from which the graph group leads for good.

    For each K, the crossover ``rho_c`` is the smallest grid value such
    that at every ``rho' >= rho_c`` the best graph-group mean VPT is at
    least the best non-graph mean VPT (averaged over N; only valid
    results count).  Undefined when the lead never becomes persistent
    or when either group has valid results at fewer than two rho
    values.
    """
    keys = sorted({k for m in scores for k in scores[m]})
    k_values = sorted({k[0] for k in keys})
    rho_values = sorted({k[1] for k in keys})

    def group_best(models, K, rho):
        best = None
        for m in models:
            if m not in scores:
                continue
            vals = [scores[m][key].mean_vpt for key in keys
                    if key[0] == K and key[1] == rho and key in scores[m]
                    and scores[m][key].valid
                    and not math.isnan(scores[m][key].mean_vpt)]
            if vals:
                mean = float(np.mean(vals))
                best = mean if best is None else max(best, mean)
        return best

    out = {}
    for K in k_values:
        graph_rhos = [r for r in rho_values
                      if group_best(graph_models, K, r) is not None]
        nongraph_rhos = [r for r in rho_values
                         if group_best(nongraph_models, K, r) is not None]
        if len(graph_rhos) < 2 or len(nongraph_rhos) < 2:
            out[K] = CrossoverResult(
                rho_c=None,
                reason="insufficient data: need valid results at >= 2 rho "
                       "values per group")
            continue
        lead = []
        for rho in rho_values:
            g = group_best(graph_models, K, rho)
            ng = group_best(nongraph_models, K, rho)
            if g is None and ng is None:
                lead.append(None)  # empty cell, ignored
            elif g is None:
                lead.append(False)
            elif ng is None:
                lead.append(True)
            else:
                lead.append(g >= ng)
        rho_c = None
        for i, rho in enumerate(rho_values):
            tail = [v for v in lead[i:] if v is not None]
            if tail and all(tail):
                rho_c = rho
                break
        if rho_c is None:
            out[K] = CrossoverResult(rho_c=None,
                                     reason="graph group never leads persistently")
        else:
            out[K] = CrossoverResult(rho_c=rho_c, reason="ok")
    return out


@dataclass(frozen=True)
class RegimeCell:
    """One design-space cell of the regime report."""

    K: float
    rho: float
    N: int
    lyapunov_time: float
    chaos_fraction: float
    winner: Optional[str]
    margin: float


def regime_report(regime_summaries: Mapping[tuple[float, float, int], RegimeSummary],
                  scores: Optional[Scores] = None) -> list[RegimeCell]:
    """Merge per-instance regime summaries with the per-cell winner.

    Winners are decided among valid models by mean VPT; the margin is
    the VPT gap to the runner-up (ties break alphabetically and report
    a zero margin).  Without scores the report carries diagnostics
    only.
    """
    cells = []
    for key in sorted(regime_summaries):
        summary = regime_summaries[key]
        winner = None
        margin = 0.0
        if scores:
            standings = sorted(
                ((scores[m][key].mean_vpt, m) for m in sorted(scores)
                 if key in scores[m] and scores[m][key].valid
                 and not math.isnan(scores[m][key].mean_vpt)),
                key=lambda t: (-t[0], t[1]))
            if standings:
                winner = standings[0][1]
                margin = (standings[0][0] - standings[1][0]
                          if len(standings) > 1 else 0.0)
        cells.append(RegimeCell(K=key[0], rho=key[1], N=key[2],
                                lyapunov_time=summary.lyapunov_time,
                                chaos_fraction=summary.chaos_fraction,
                                winner=winner, margin=margin))
    return cells


COMPARISON_FIELDS = ("model_a", "model_b", "n_pairs", "wins_a", "wins_b",
                     "ties", "wilcoxon_p", "a_only", "b_only", "mcnemar_p")


def write_comparison_csv(path, reports: Sequence[ComparisonReport]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_FIELDS)
        for r in reports:
            writer.writerow([r.model_a, r.model_b, r.n_pairs, repr(r.wins_a),
                             repr(r.wins_b), r.ties, repr(r.wilcoxon.p_value),
                             r.a_only, r.b_only, repr(r.mcnemar_p)])


DESIGN_SPACE_FIELDS = ("K", "rho", "N", "lyapunov_time", "chaos_fraction",
                       "winner", "margin")


def write_design_space_csv(path, cells: Sequence[RegimeCell]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DESIGN_SPACE_FIELDS)
        for c in cells:
            writer.writerow([repr(c.K), repr(c.rho), c.N,
                             repr(c.lyapunov_time), repr(c.chaos_fraction),
                             c.winner or "", repr(c.margin)])
