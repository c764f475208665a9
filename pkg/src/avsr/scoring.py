"""Word error rate via minimum edit distance, plus per-word precision/recall.

The aligner runs unit-cost dynamic programming between reference and
hypothesis word sequences and backtraces with a fixed preference
(match > substitution > deletion > insertion) so per-word operation counts
are deterministic. Per-word measures treat a word's hypothesis-side errors
(substitutions producing it, insertions of it) as false positives and its
reference-side errors (substitutions consuming it, deletions of it) as false
negatives: summed with matches these recover the hypothesis and reference
word counts exactly, which every evaluation run asserts.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

_PUNCT = re.compile(r"[^a-z0-9' ]+")


def normalize_words(text: str) -> list[str]:
    """Lowercase, strip punctuation, whitespace-tokenize."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass
class EditOps:
    """Operation counts from minimum-cost alignments (mergeable)."""

    matches: Counter = field(default_factory=Counter)  # word -> n_m
    substitutions: Counter = field(default_factory=Counter)  # (ref word, hyp word) -> n_s
    deletions: Counter = field(default_factory=Counter)  # ref word -> n_d
    insertions: Counter = field(default_factory=Counter)  # hyp word -> n_i
    ref_words: int = 0
    hyp_words: int = 0

    @property
    def s(self) -> int:
        return sum(self.substitutions.values())

    @property
    def d(self) -> int:
        return sum(self.deletions.values())

    @property
    def i(self) -> int:
        return sum(self.insertions.values())

    @property
    def n(self) -> int:
        return self.ref_words

    @property
    def distance(self) -> int:
        return self.s + self.d + self.i

    def merge(self, other: "EditOps") -> "EditOps":
        self.matches.update(other.matches)
        self.substitutions.update(other.substitutions)
        self.deletions.update(other.deletions)
        self.insertions.update(other.insertions)
        self.ref_words += other.ref_words
        self.hyp_words += other.hyp_words
        return self


def align(reference, hypothesis) -> EditOps:
    """Minimum edit distance with per-word operation counts.

    Accepts raw strings (normalized and tokenized) or pre-split word lists.
    """
    ref = normalize_words(reference) if isinstance(reference, str) else list(reference)
    hyp = normalize_words(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    if not ref:
        raise DataError("WER is undefined for an empty reference")

    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)

    ops = EditOps(ref_words=n, hyp_words=m)
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i - 1][j - 1] == here:
            ops.matches[ref[i - 1]] += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i - 1][j - 1] + 1 == here:
            ops.substitutions[(ref[i - 1], hyp[j - 1])] += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1][j] + 1 == here:
            ops.deletions[ref[i - 1]] += 1
            i -= 1
        else:
            ops.insertions[hyp[j - 1]] += 1
            j -= 1
    return ops


def wer(ops: EditOps) -> float:
    """100 * (S+D+I)/N; may exceed 100."""
    if ops.n < 1:
        raise DataError("WER is undefined for an empty reference")
    return 100.0 * ops.distance / ops.n


def wer_percent(ops: EditOps) -> int:
    """Integer display form (truncated, matching the worked examples)."""
    return int(wer(ops))


@dataclass
class WordMeasures:
    word: str
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        return None if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        return None if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)


def per_word_prf(ops: EditOps) -> dict[str, WordMeasures]:
    """Per-word TP/FP/FN and derived measures over an aggregated alignment.

    TP(w) counts matches; FP(w) counts hypothesis-side errors on w
    (substitutions producing w plus insertions of w); FN(w) counts
    reference-side errors (substitutions consuming w plus deletions of w).
    Undefined measures stay None rather than collapsing to zero.
    """
    words = set(ops.matches) | set(ops.deletions) | set(ops.insertions)
    for r, h in ops.substitutions:
        words.add(r)
        words.add(h)
    out = {}
    for w in sorted(words):
        tp = ops.matches[w]
        fp = sum(c for (r, h), c in ops.substitutions.items() if h == w) + ops.insertions[w]
        fn = sum(c for (r, h), c in ops.substitutions.items() if r == w) + ops.deletions[w]
        out[w] = WordMeasures(word=w, tp=tp, fp=fp, fn=fn)
    return out


def check_count_identities(ops: EditOps, measures: dict[str, WordMeasures]) -> None:
    """Sum TP + sum FP must equal the hypothesis word count; sum TP + sum FN
    the reference word count. Raises on violation."""
    tp = sum(m.tp for m in measures.values())
    fp = sum(m.fp for m in measures.values())
    fn = sum(m.fn for m in measures.values())
    if tp + fp != ops.hyp_words:
        raise DataError(f"count identity violated: TP+FP={tp + fp} != hypothesis words {ops.hyp_words}")
    if tp + fn != ops.ref_words:
        raise DataError(f"count identity violated: TP+FN={tp + fn} != reference words {ops.ref_words}")


# ---------------------------------------------------------------------------
# file interfaces: tab-separated (id, text) pairs; delimited measure tables
# ---------------------------------------------------------------------------


def read_transcripts(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: expected tab-separated id and text")
            uid, text = line.split("\t", 1)
            if uid in out:
                raise DataError(f"{path}:{lineno}: duplicate id {uid!r}")
            out[uid] = text
    return out


def write_word_measures(path, measures: dict[str, WordMeasures]) -> None:
    def fmt(x):
        return "undefined" if x is None else f"{x:.6f}"

    with open(path, "w", encoding="utf-8") as f:
        f.write("word\ttp\tfp\tfn\tprecision\trecall\tf1\n")
        for w in sorted(measures):
            m = measures[w]
            f.write(f"{w}\t{m.tp}\t{m.fp}\t{m.fn}\t{fmt(m.precision)}\t{fmt(m.recall)}\t{fmt(m.f1)}\n")
