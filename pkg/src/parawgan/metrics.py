"""Automatic paraphrase evaluation: BLEU-4, ROUGE-1/2, METEOR-lite.

All scores live on a 0..100 scale and are computed per sentence on
content tokens. ``evaluate_set`` applies the average/best protocol over K
sampled paraphrases per input.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

METRIC_NAMES = ("BLEU-4", "ROUGE-1", "ROUGE-2", "METEOR-lite")

METEOR_RECALL_WEIGHT = 9.0
METEOR_PENALTY_WEIGHT = 0.5
METEOR_PENALTY_EXPONENT = 3

_STEM_SUFFIXES = ("ing", "ies", "ed", "es", "ly", "s")


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypothesis, references):
    """Sentence BLEU with clipped 1..4-gram precisions and brevity penalty.

    When any n-gram match count is zero, orders n >= 2 are smoothed by
    adding 1 to both numerator and denominator; unigram precision is never
    smoothed, so zero unigram overlap scores 0.
    """
    if not hypothesis:
        log.warning("bleu4 called with an empty hypothesis")
        return 0.0
    matches, totals = [], []
    for n in range(1, 5):
        hyp_counts = _ngram_counts(hypothesis, n)
        best = Counter()
        for ref in references:
            for gram, count in _ngram_counts(ref, n).items():
                best[gram] = max(best[gram], count)
        matches.append(sum(min(c, best[g]) for g, c in hyp_counts.items()))
        totals.append(sum(hyp_counts.values()))
    if matches[0] == 0:
        return 0.0
    smooth = any(m == 0 for m in matches)
    log_sum = 0.0
    for n in range(4):
        if smooth and n >= 1:
            p = (matches[n] + 1) / (totals[n] + 1)
        else:
            p = matches[n] / totals[n]
        log_sum += math.log(p) / 4.0
    c = len(hypothesis)
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_sum)


def rouge_n(hypothesis, reference, n):
    """F1 of clipped n-gram overlap, n in {1, 2}."""
    if n not in (1, 2):
        raise ValueError("rouge_n supports n = 1 or 2")
    hyp_counts = _ngram_counts(hypothesis, n)
    ref_counts = _ngram_counts(reference, n)
    overlap = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    hyp_total = sum(hyp_counts.values())
    ref_total = sum(ref_counts.values())
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    if p + r == 0.0:
        return 0.0
    return 100.0 * 2.0 * p * r / (p + r)


def stem(token):
    """First-match suffix strip (ing|ies|ed|es|ly|s) keeping stems >= 3 chars."""
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def _align(hypothesis, reference, synonym_table):
    """Unigram alignment in priority order exact -> stem -> synonym.

    Each stage greedily pairs unmatched hypothesis tokens left-to-right
    with the first unmatched reference token it can still claim.
    """
    syn = synonym_table or {}

    def exact(h, r):
        return h == r

    def stems(h, r):
        return stem(h) == stem(r)

    def synonyms(h, r):
        return r in syn.get(h, ()) or h in syn.get(r, ())

    hyp_free = [True] * len(hypothesis)
    ref_free = [True] * len(reference)
    alignment = []
    for match in (exact, stems, synonyms):
        for hi, h_tok in enumerate(hypothesis):
            if not hyp_free[hi]:
                continue
            for ri, r_tok in enumerate(reference):
                if ref_free[ri] and match(h_tok, r_tok):
                    alignment.append((hi, ri))
                    hyp_free[hi] = False
                    ref_free[ri] = False
                    break
    return sorted(alignment)


def meteor_lite(hypothesis, reference, synonym_table=None):
    """Reduced METEOR: harmonic mean of unigram P/R with a chunk penalty.

    score = F_mean * (1 - 0.5 * (chunks / matches)^3) with
    F_mean = 10PR / (R + 9P). Synonymy comes from an optional user table
    rather than a lexical database.
    """
    if not hypothesis or not reference:
        return 0.0
    alignment = _align(hypothesis, reference, synonym_table)
    m = len(alignment)
    if m == 0:
        return 0.0
    p = m / len(hypothesis)
    r = m / len(reference)
    f_mean = (METEOR_RECALL_WEIGHT + 1.0) * p * r / (r + METEOR_RECALL_WEIGHT * p)
    chunks = 1
    for (h0, r0), (h1, r1) in zip(alignment, alignment[1:]):
        if h1 != h0 + 1 or r1 != r0 + 1:
            chunks += 1
    penalty = METEOR_PENALTY_WEIGHT * (chunks / m) ** METEOR_PENALTY_EXPONENT
    return 100.0 * f_mean * (1.0 - penalty)


def score_all(hypothesis, reference, synonym_table=None):
    return {
        "BLEU-4": bleu4(hypothesis, [reference]),
        "ROUGE-1": rouge_n(hypothesis, reference, 1),
        "ROUGE-2": rouge_n(hypothesis, reference, 2),
        "METEOR-lite": meteor_lite(hypothesis, reference, synonym_table),
    }


@dataclass
class EvalReport:
    average: dict
    best: dict
    samples: list = field(default_factory=list)
    distinct_ratio: float = 0.0


def evaluate_set(readout, test_pairs, k, synonym_table=None):
    """Average/best protocol over K sampled paraphrases per input.

    ``readout(input_tokens)`` must return K token lists. Per metric the
    report carries the mean over all samples (average) and the mean of
    per-input maxima (best), plus the fraction of inputs with at least two
    distinct samples.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not test_pairs:
        raise ValueError("empty test set")
    all_scores = {name: [] for name in METRIC_NAMES}
    best_scores = {name: [] for name in METRIC_NAMES}
    samples_out = []
    distinct = 0
    for input_tokens, reference in test_pairs:
        samples = readout(input_tokens)
        if len(samples) != k:
            raise ValueError(f"readout returned {len(samples)} samples, expected {k}")
        samples_out.append(samples)
        if len({tuple(s) for s in samples}) >= 2:
            distinct += 1
        per_input = {name: [] for name in METRIC_NAMES}
        for sample in samples:
            for name, value in score_all(sample, reference, synonym_table).items():
                per_input[name].append(value)
        for name in METRIC_NAMES:
            all_scores[name].extend(per_input[name])
            best_scores[name].append(max(per_input[name]))
    return EvalReport(
        average={n: sum(v) / len(v) for n, v in all_scores.items()},
        best={n: sum(v) / len(v) for n, v in best_scores.items()},
        samples=samples_out,
        distinct_ratio=distinct / len(test_pairs),
    )


def load_synonym_table(path):
    """Read lines "token <TAB> synonym1,synonym2,..." into a lookup table."""
    table = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns")
            table[cols[0]] = {s for s in cols[1].split(",") if s}
    return table


def format_report(report, k, seed):
    """Render an EvalReport as TSV with a free-text provenance header."""
    lines = [
        f"# paraphrase evaluation: K={k} samples per input, seed={seed}",
        "# METEOR-lite deviations: suffix-strip stemmer and optional synonym table "
        "replace WordNet synonymy; BLEU-4 uses add-1 smoothing on n>=2 when counts vanish",
        f"# distinct-sample ratio: {report.distinct_ratio:.4f}",
        "metric\taverage\tbest",
    ]
    for name in METRIC_NAMES:
        lines.append(f"{name}\t{report.average[name]:.4f}\t{report.best[name]:.4f}")
    return "\n".join(lines) + "\n"
