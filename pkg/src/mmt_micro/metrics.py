"""Corpus BLEU, approximate-randomization significance, grounded-token
accuracy, and multi-run score reports."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigError
from .tensor import Rng

log = logging.getLogger(__name__)

MAX_ORDER = 4
SMOOTH_EPS = 1e-9


def _tokens(sentence) -> list[str]:
    if isinstance(sentence, str):
        return sentence.split()
    return list(sentence)


@dataclass
class BleuStats:
    """Per-sentence sufficient statistics; corpus stats are their sum."""

    correct: np.ndarray  # clipped n-gram matches, n = 1..4
    total: np.ndarray    # candidate n-gram counts, n = 1..4
    hyp_len: int
    ref_len: int

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            correct=self.correct + other.correct,
            total=self.total + other.total,
            hyp_len=self.hyp_len + other.hyp_len,
            ref_len=self.ref_len + other.ref_len,
        )

    @classmethod
    def zero(cls) -> "BleuStats":
        return cls(np.zeros(MAX_ORDER, dtype=np.int64), np.zeros(MAX_ORDER, dtype=np.int64), 0, 0)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp, ref) -> BleuStats:
    hyp, ref = _tokens(hyp), _tokens(ref)
    correct = np.zeros(MAX_ORDER, dtype=np.int64)
    total = np.zeros(MAX_ORDER, dtype=np.int64)
    for n in range(1, MAX_ORDER + 1):
        hyp_grams = _ngrams(hyp, n)
        ref_grams = _ngrams(ref, n)
        total[n - 1] = max(len(hyp) - n + 1, 0)
        correct[n - 1] = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
    return BleuStats(correct=correct, total=total, hyp_len=len(hyp), ref_len=len(ref))


def bleu_from_stats(stats: BleuStats, smooth_eps: float = SMOOTH_EPS) -> float:
    """4-gram BLEU in [0, 100]: geometric mean of modified precisions times
    the brevity penalty. Zero counts contribute ``smooth_eps`` precision."""
    if stats.hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(MAX_ORDER):
        if stats.correct[n] > 0 and stats.total[n] > 0:
            p = stats.correct[n] / stats.total[n]
        else:
            p = smooth_eps
        log_sum += math.log(p)
    if stats.hyp_len < stats.ref_len:
        bp = math.exp(1.0 - stats.ref_len / stats.hyp_len)
    else:
        bp = 1.0
    return 100.0 * bp * math.exp(log_sum / MAX_ORDER)


def corpus_stats(hyps, refs) -> BleuStats:
    if len(hyps) != len(refs):
        raise AlignmentError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ConfigError("BLEU over an empty corpus")
    acc = BleuStats.zero()
    for h, r in zip(hyps, refs):
        acc = acc + sentence_stats(h, r)
    return acc


def bleu_corpus(hyps, refs) -> float:
    """Corpus BLEU over aligned hypothesis/reference token lists or strings."""
    return bleu_from_stats(corpus_stats(hyps, refs))


def _stats_rows(hyps, refs) -> np.ndarray:
    """Per-sentence sufficient stats as rows: correct(4), total(4),
    hyp_len, ref_len."""
    rows = np.zeros((len(refs), 10), dtype=np.float64)
    for i, (h, r) in enumerate(zip(hyps, refs)):
        s = sentence_stats(h, r)
        rows[i, :4] = s.correct
        rows[i, 4:8] = s.total
        rows[i, 8] = s.hyp_len
        rows[i, 9] = s.ref_len
    return rows


def _bleu_rows(summed: np.ndarray, smooth_eps: float = SMOOTH_EPS) -> np.ndarray:
    """Vectorized corpus BLEU over rows of summed sufficient statistics."""
    correct, total = summed[:, :4], summed[:, 4:8]
    hyp_len, ref_len = summed[:, 8], summed[:, 9]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where((correct > 0) & (total > 0), correct / np.maximum(total, 1), smooth_eps)
        bp = np.where(hyp_len < ref_len, np.exp(1.0 - ref_len / np.maximum(hyp_len, 1)), 1.0)
    score = 100.0 * bp * np.exp(np.log(p).sum(axis=1) / MAX_ORDER)
    return np.where(hyp_len == 0, 0.0, score)


def approx_randomization(
    hyps_a,
    hyps_b,
    refs,
    trials: int = 10000,
    rng: Rng | None = None,
) -> float:
    """Two-sided approximate-randomization p-value on the corpus BLEU gap.

    Each trial swaps the two systems' outputs per sentence with probability
    one half and recomputes the score difference; the p-value is the
    add-one-corrected fraction of trials at least as extreme as observed.
    """
    if trials < 100:
        raise ConfigError(f"need at least 100 trials, got {trials}")
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise AlignmentError(
            f"system/reference sizes disagree: {len(hyps_a)}, {len(hyps_b)}, {len(refs)}"
        )
    if rng is None:
        rng = Rng(0)

    stats_a = _stats_rows(hyps_a, refs)
    stats_b = _stats_rows(hyps_b, refs)
    observed = abs(
        float(_bleu_rows(stats_a.sum(axis=0)[None])[0])
        - float(_bleu_rows(stats_b.sum(axis=0)[None])[0])
    )

    n = len(refs)
    deltas = np.empty(trials)
    chunk = max(1, min(trials, 64_000_000 // max(n, 1) // 8))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        flips = rng.uniform((m, n)) < 0.5
        keep = ~flips
        side_a = flips @ stats_b + keep @ stats_a
        side_b = flips @ stats_a + keep @ stats_b
        deltas[done : done + m] = _bleu_rows(side_a) - _bleu_rows(side_b)
        done += m
    hits = int((np.abs(deltas) >= observed - 1e-12).sum())
    return (hits + 1) / (trials + 1)


def grounding_accuracy(hyps, refs, keywords) -> float:
    """Fraction of sentences whose hypothesis contains the reference's
    marked keyword (references carry exactly one keyword each)."""
    keywords = set(keywords)
    if len(hyps) != len(refs):
        raise AlignmentError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    hits = 0
    counted = 0
    for h, r in zip(hyps, refs):
        marked = [t for t in _tokens(r) if t in keywords]
        if len(marked) != 1:
            raise ConfigError(f"reference must contain exactly one keyword, got {marked}")
        counted += 1
        hits += marked[0] in set(_tokens(h))
    return hits / counted


@dataclass
class SystemScore:
    name: str
    scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        if len(self.scores) < 2:
            return 0.0
        return float(np.std(self.scores, ddof=1))


@dataclass
class EvalReport:
    """Per-system seed scores with mean and sample standard deviation."""

    systems: list[SystemScore]
    pairwise_p: dict[tuple[str, str], float] = field(default_factory=dict)

    def row(self, name: str) -> SystemScore:
        for s in self.systems:
            if s.name == name:
                return s
        raise KeyError(name)


def report_runs(scores_by_system: dict[str, list[float]]) -> EvalReport:
    systems = []
    for name, scores in scores_by_system.items():
        if not scores:
            raise ConfigError(f"system {name!r} has no scores")
        if len(scores) == 1:
            log.warning("system %s has a single seed; std reported as 0.0", name)
        systems.append(SystemScore(name=name, scores=list(scores)))
    return EvalReport(systems=systems)


def format_report(report: EvalReport) -> str:
    width = max(len(s.name) for s in report.systems)
    lines = [f"{'system'.ljust(width)}  seeds  bleu"]
    for s in report.systems:
        lines.append(f"{s.name.ljust(width)}  {len(s.scores):>5}  {s.mean:.1f} ± {s.std:.1f}")
    if report.pairwise_p:
        lines.append("")
        for (a, b), p in report.pairwise_p.items():
            lines.append(f"p({a} vs {b}) = {p:.4f}")
    return "\n".join(lines)


def report_tsv(report: EvalReport) -> str:
    lines = ["system\tseeds\tmean\tstd\tscores"]
    for s in report.systems:
        joined = ",".join(f"{v:.4f}" for v in s.scores)
        lines.append(f"{s.name}\t{len(s.scores)}\t{s.mean:.4f}\t{s.std:.4f}\t{joined}")
    for (a, b), p in report.pairwise_p.items():
        lines.append(f"# p\t{a}\t{b}\t{p:.6f}")
    return "\n".join(lines) + "\n"
