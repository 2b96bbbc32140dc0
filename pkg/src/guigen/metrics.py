"""Ranking metrics, classification metrics, agreement statistics and the
paired Wilcoxon signed-rank test used by the evaluation harness.

Graded gold relevance is binarised at grade > 0 for AP/MRR/P@k/HITS@k;
NDCG consumes the raw grades (linear gain by default). The Wilcoxon exact
mode computes the exact conditional distribution of W+ given the observed
|d| ranks — mathematically identical to enumerating all 2^m sign
assignments — in integer arithmetic.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------

def average_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    """Mean over all relevant items of precision at their rank; relevant
    items missing from the ranking contribute 0 (rank infinity)."""
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def reciprocal_rank(ranking: Sequence[str], relevant: set[str]) -> float:
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    for rank, item in enumerate(ranking, start=1):
        if item in relevant:
            return 1.0 / rank
    return 0.0


def mean_reciprocal_rank(rankings: Mapping[str, Sequence[str]],
                         relevant_sets: Mapping[str, set[str]]) -> float:
    if not rankings:
        raise ValueError("need at least one query")
    return sum(reciprocal_rank(ranking, relevant_sets[qid])
               for qid, ranking in rankings.items()) / len(rankings)


def precision_at_k(ranking: Sequence[str], relevant: set[str], k: int) -> float:
    """|relevant in top-k| / k; the denominator stays k even when the
    ranking is shorter (fixed cutoff)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for item in ranking[:k] if item in relevant) / k


def hits_at_k(ranking: Sequence[str], relevant: set[str], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1.0 if any(item in relevant for item in ranking[:k]) else 0.0


def ndcg_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int,
              gain: str = "linear") -> float:
    """DCG@k / IDCG@k with discount log2(rank+1). ``gain`` selects linear
    (raw grade) or exponential (2^grade - 1). Unranked judged items count
    toward the ideal ordering."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not any(g > 0 for g in grades.values()):
        raise ValueError("need at least one positive grade")

    def g(value: int) -> float:
        return float(value) if gain == "linear" else float(2 ** value - 1)

    dcg = sum(g(grades.get(item, 0)) / math.log2(rank + 1)
              for rank, item in enumerate(ranking[:k], start=1))
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = sum(g(grade) / math.log2(rank + 1)
               for rank, grade in enumerate(ideal, start=1))
    return dcg / idcg


# ---------------------------------------------------------------------------
# Classification metrics and ground truth
# ---------------------------------------------------------------------------

def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def precision_recall_f1(predicted: set[str], truth: set[str]) -> tuple[float, float, float]:
    if not predicted and not truth:
        return 0.0, 0.0, 0.0
    overlap = len(predicted & truth)
    precision = overlap / len(predicted) if predicted else 0.0
    recall = overlap / len(truth) if truth else 0.0
    return precision, recall, f1_score(precision, recall)


def majority_vote(votes: Sequence[bool]) -> bool:
    """True iff a strict majority votes true; an exact tie is false
    (conservative, mirroring the high-precision filter intent)."""
    if not votes:
        raise ValueError("need at least one vote")
    positive = sum(1 for v in votes if v)
    return positive * 2 > len(votes)


def fleiss_kappa(matrix: Sequence[Sequence[int]]) -> float:
    """Chance-corrected agreement for a fixed rater count per item; rows are
    per-item category counts. Undefined (error) when every rating falls in
    one category."""
    if len(matrix) < 2:
        raise ValueError("need at least two items")
    n_raters = sum(matrix[0])
    if n_raters < 2:
        raise ValueError("need at least two raters per item")
    categories = len(matrix[0])
    for row in matrix:
        if len(row) != categories:
            raise ValueError("rows must share the category count")
        if sum(row) != n_raters:
            raise ValueError("every row must sum to the rater count")
        if any(v < 0 for v in row):
            raise ValueError("counts must be non-negative")
    n_items = len(matrix)
    p_bar = sum(
        (sum(v * v for v in row) - n_raters) / (n_raters * (n_raters - 1))
        for row in matrix) / n_items
    totals = [sum(row[j] for row in matrix) for j in range(categories)]
    p_j = [t / (n_items * n_raters) for t in totals]
    p_e = sum(p * p for p in p_j)
    if p_e == 1.0:
        raise ValueError("all ratings fall in one category; kappa undefined")
    return (p_bar - p_e) / (1.0 - p_e)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W = min(W+, W-)
    p_two_sided: float
    m: int  # pairs remaining after zero-difference discard
    mode: str  # exact | approx
    w_plus: float
    w_minus: float

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_two_sided": self.p_two_sided,
                "m": self.m, "mode": self.mode,
                "w_plus": self.w_plus, "w_minus": self.w_minus}


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j + 2) / 2  # mid-rank over the tied block, 1-based
        for pos in range(i, j + 1):
            ranks[order[pos]] = rank
        i = j + 1
    return ranks


def _exact_w_plus_distribution(doubled_ranks: list[int]) -> list[int]:
    """Counts of sign assignments per doubled W+ value (0..sum)."""
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        nxt = counts[:]
        for w in range(total - r + 1):
            if counts[w]:
                nxt[w + r] += counts[w]
        counts = nxt
    return counts


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


EXACT_CROSSOVER = 25


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float],
                         mode: str = "auto") -> WilcoxonResult:
    """Two-sided paired test. Zero differences are discarded (Wilcoxon's
    original policy); |d| is ranked with mid-ranks for ties. Exact mode
    evaluates the full sign-assignment distribution (used automatically for
    m <= 25), otherwise the normal approximation with tie and continuity
    corrections applies."""
    if mode not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(a) != len(b) or not a:
        raise ValueError("need equal-length, non-empty paired samples")
    diffs = [x - y for x, y in zip(a, b) if x - y != 0.0]
    m = len(diffs)
    if m == 0:
        raise ValueError("degenerate pairs: all differences are zero")
    ranks = _midranks([abs(d) for d in diffs])
    w_plus = sum(r for d, r in zip(diffs, ranks) if d > 0)
    w_minus = sum(r for d, r in zip(diffs, ranks) if d < 0)
    statistic = min(w_plus, w_minus)

    use_exact = mode == "exact" or (mode == "auto" and m <= EXACT_CROSSOVER)
    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_w_plus_distribution(doubled)
        w2 = int(round(2 * w_plus))
        total = 2 ** m
        cdf = sum(counts[: w2 + 1])
        sf = sum(counts[w2:])
        p = min(1.0, 2.0 * min(cdf, sf) / total)
        return WilcoxonResult(statistic=statistic, p_two_sided=p, m=m,
                              mode="exact", w_plus=w_plus, w_minus=w_minus)

    mean = m * (m + 1) / 4.0
    tie_term = 0.0
    seen: dict[float, int] = {}
    for d in diffs:
        seen[abs(d)] = seen.get(abs(d), 0) + 1
    for count in seen.values():
        tie_term += count ** 3 - count
    variance = m * (m + 1) * (2 * m + 1) / 24.0 - tie_term / 48.0
    if variance <= 0:
        raise ValueError("zero variance; all |differences| are tied to one value")
    z = (statistic - mean + 0.5) / math.sqrt(variance)
    p = min(1.0, 2.0 * _normal_cdf(z))
    return WilcoxonResult(statistic=statistic, p_two_sided=p, m=m,
                          mode="approx", w_plus=w_plus, w_minus=w_minus)


# ---------------------------------------------------------------------------
# Evaluation suites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoldStandard:
    """Graded relevance per query: query_id -> (nlr text, screen_id -> grade)."""

    queries: dict[str, tuple[str, dict[str, int]]]

    @classmethod
    def from_dict(cls, data: dict) -> "GoldStandard":
        queries: dict[str, tuple[str, dict[str, int]]] = {}
        raw = data.get("queries", data)
        for qid, entry in raw.items():
            grades = {str(sid): int(g) for sid, g in entry["relevance"].items()}
            if any(g < 0 for g in grades.values()):
                raise ValueError(f"query {qid}: grades must be non-negative")
            queries[str(qid)] = (str(entry.get("text", "")), grades)
        return cls(queries=queries)

    @classmethod
    def load(cls, path: str | Path) -> "GoldStandard":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class MetricReport:
    metrics: dict[str, float] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        for value in self.metrics.values():
            if not math.isfinite(value):
                raise ValueError("metric values must be finite")
        return {"metrics": self.metrics, "params": self.params,
                "counts": self.counts}


DEFAULT_KS = (3, 5, 7, 10)


def eval_ranking_suite(gold: GoldStandard, runs: Mapping[str, Sequence[str]],
                       ks: Sequence[int] = DEFAULT_KS) -> MetricReport:
    """AP, MRR and P@k/HITS@k/NDCG@k averaged over queries. Queries in the
    runs but absent from the gold standard are skipped with a warning, as
    are gold entries without a positive grade."""
    per_query: dict[str, list[float]] = {"AP": [], "MRR": []}
    for k in ks:
        per_query[f"P@{k}"] = []
        per_query[f"H@{k}"] = []
        per_query[f"N@{k}"] = []
    skipped_missing = 0
    skipped_degenerate = 0
    for qid, ranking in runs.items():
        if qid not in gold.queries:
            logger.warning("query %r missing from gold standard, skipped", qid)
            skipped_missing += 1
            continue
        _, grades = gold.queries[qid]
        relevant = {sid for sid, g in grades.items() if g > 0}
        if not relevant:
            logger.warning("query %r has no positive grade, skipped", qid)
            skipped_degenerate += 1
            continue
        ranking = list(ranking)
        per_query["AP"].append(average_precision(ranking, relevant))
        per_query["MRR"].append(reciprocal_rank(ranking, relevant))
        for k in ks:
            per_query[f"P@{k}"].append(precision_at_k(ranking, relevant, k))
            per_query[f"H@{k}"].append(hits_at_k(ranking, relevant, k))
            per_query[f"N@{k}"].append(ndcg_at_k(ranking, grades, k))
    evaluated = len(per_query["AP"])
    if evaluated == 0:
        raise ValueError("no evaluable queries")
    metrics = {name: sum(values) / evaluated
               for name, values in per_query.items()}
    return MetricReport(metrics=metrics, params={"ks": list(ks)},
                        counts={"evaluated": evaluated,
                                "skipped_missing_gold": skipped_missing,
                                "skipped_no_relevant": skipped_degenerate})


def load_runs(path: str | Path) -> dict[str, list[str]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    raw = data.get("runs", data)
    return {str(qid): [str(s) for s in ranking] for qid, ranking in raw.items()}


def load_score_file(path: str | Path) -> dict[str, float]:
    """Line-JSON {item_id, value} score files for paired comparisons."""
    scores: dict[str, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        scores[str(record["item_id"])] = float(record["value"])
    return scores


def compare_paired(a: Mapping[str, float], b: Mapping[str, float],
                   mode: str = "auto") -> WilcoxonResult:
    shared = sorted(set(a) & set(b))
    if not shared:
        raise ValueError("no shared item ids between the two score sets")
    dropped = (len(a) - len(shared)) + (len(b) - len(shared))
    if dropped:
        logger.warning("%d unmatched items dropped from the comparison", dropped)
    return wilcoxon_signed_rank([a[i] for i in shared], [b[i] for i in shared],
                                mode=mode)
