"""Case-sensitive ROUGE for summaries and alignment-based F1 for
capitalization and punctuation restoration."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .corpus import SCORED_CLASSES, PunctClass, analyze_punctuated, split_sentences


class ScoringError(ValueError):
    pass


class RougeLVariant(str, enum.Enum):
    SUMMARY = "summary-level-union-lcs"
    SENTENCE = "sentence-level-lcs"


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    empty_reference: bool = False

    @classmethod
    def from_counts(cls, overlap: float, n_candidate: int, n_reference: int) -> "PRF":
        p = overlap / n_candidate if n_candidate else 0.0
        r = overlap / n_reference if n_reference else 0.0
        return cls(p, r, f1(p, r), empty_reference=n_reference == 0)


def f1(p: float, r: float) -> float:
    if p + r == 0:
        return 0.0
    # the clamp absorbs rounding when p == r
    return min(2 * p * r / (p + r), max(p, r))


def _tokens(text: str, what: str) -> list[str]:
    toks = text.split()
    if any("_" in t.strip("_") for t in toks):
        raise ScoringError(f"{what} contains word-segmentation underscores; detokenize first")
    return toks


# ---------------------------------------------------------------- ROUGE

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> PRF:
    if n < 1:
        raise ValueError("n must be positive")
    cand = _ngrams(_tokens(candidate, "candidate"), n)
    ref = _ngrams(_tokens(reference, "reference"), n)
    overlap = sum((cand & ref).values())
    return PRF.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_table(a: Sequence[str], b: Sequence[str]) -> list[list[int]]:
    m, n = len(a), len(b)
    t = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        ai, row, prev = a[i - 1], t[i], t[i - 1]
        for j in range(1, n + 1):
            row[j] = prev[j - 1] + 1 if ai == b[j - 1] else max(prev[j], row[j - 1])
    return t


def lcs_positions(ref: Sequence[str], cand: Sequence[str]) -> list[int]:
    """Indices into ``ref`` of one longest common subsequence (deterministic backtrack)."""
    t = lcs_table(ref, cand)
    i, j = len(ref), len(cand)
    out = []
    while i > 0 and j > 0:
        if ref[i - 1] == cand[j - 1]:
            out.append(i - 1)
            i -= 1
            j -= 1
        elif t[i - 1][j] >= t[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out[::-1]


def rouge_l(candidate: str, reference: str, variant: RougeLVariant | str = RougeLVariant.SUMMARY) -> PRF:
    """ROUGE-L. The summary-level variant unions, for each reference sentence,
    the LCS hits against every candidate sentence, clipped by token counts."""
    variant = RougeLVariant(variant)
    cand_all = _tokens(candidate, "candidate")
    ref_all = _tokens(reference, "reference")
    if variant is RougeLVariant.SENTENCE:
        return PRF.from_counts(lcs_table(ref_all, cand_all)[-1][-1], len(cand_all), len(ref_all))

    ref_sents = [s.split() for s in split_sentences(reference)]
    cand_sents = [s.split() for s in split_sentences(candidate)]
    cand_budget = Counter(cand_all)
    ref_budget = Counter(ref_all)
    hits = 0
    for r in ref_sents:
        union: set[int] = set()
        for c in cand_sents:
            union.update(lcs_positions(r, c))
        for i in sorted(union):
            tok = r[i]
            if cand_budget[tok] > 0 and ref_budget[tok] > 0:
                hits += 1
                cand_budget[tok] -= 1
                ref_budget[tok] -= 1
    return PRF.from_counts(hits, len(cand_all), len(ref_all))


@dataclass
class RougeReport:
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF
    n: int
    variant: str
    empty_references: int = 0

    def as_json(self) -> dict:
        def pct(s: PRF) -> dict:
            return {k: round(100 * getattr(s, k), 2) for k in ("precision", "recall", "f1")}

        return {
            "rouge1": pct(self.rouge1),
            "rouge2": pct(self.rouge2),
            "rougeL": pct(self.rougeL),
            "n": self.n,
            "rougeL_variant": self.variant,
            "empty_references": self.empty_references,
            "case_sensitive": True,
        }


def corpus_rouge(
    candidates: Sequence[str],
    references: Sequence[str],
    variant: RougeLVariant | str = RougeLVariant.SUMMARY,
) -> RougeReport:
    """Average per-example P/R/F1 over the corpus."""
    if len(candidates) != len(references):
        raise ScoringError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ScoringError("nothing to score")
    variant = RougeLVariant(variant)
    acc = {"rouge1": [], "rouge2": [], "rougeL": []}
    empty = 0
    for c, r in zip(candidates, references):
        if not r.split():
            empty += 1
        acc["rouge1"].append(rouge_n(c, r, 1))
        acc["rouge2"].append(rouge_n(c, r, 2))
        acc["rougeL"].append(rouge_l(c, r, variant))

    def mean(scores: list[PRF]) -> PRF:
        k = len(scores)
        return PRF(
            sum(s.precision for s in scores) / k,
            sum(s.recall for s in scores) / k,
            sum(s.f1 for s in scores) / k,
        )

    return RougeReport(mean(acc["rouge1"]), mean(acc["rouge2"]), mean(acc["rougeL"]), len(candidates), variant.value, empty)


# ---------------------------------------------------------------- alignment

class Op(str, enum.Enum):
    MATCH = "match"
    SUB = "sub"
    INS = "ins"  # token only in the hypothesis
    DEL = "del"  # token only in the reference


@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[int | None, int | None, Op], ...]

    @property
    def cost(self) -> int:
        return sum(op is not Op.MATCH for _, _, op in self.pairs)


def align_tokens(hypothesis: Sequence[str], reference: Sequence[str]) -> Alignment:
    """Minimum-edit-distance alignment of (already normalized) token lists.

    On equal cost the backtrace prefers match/substitution, then deletion,
    then insertion.
    """
    m, n = len(hypothesis), len(reference)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            sub = d[i - 1][j - 1] + (hypothesis[i - 1] != reference[j - 1])
            d[i][j] = min(sub, d[i - 1][j] + 1, d[i][j - 1] + 1)
    pairs = []
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (hypothesis[i - 1] != reference[j - 1]):
            op = Op.MATCH if hypothesis[i - 1] == reference[j - 1] else Op.SUB
            pairs.append((i - 1, j - 1, op))
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            pairs.append((None, j - 1, Op.DEL))
            j -= 1
        else:
            pairs.append((i - 1, None, Op.INS))
            i -= 1
    return Alignment(tuple(reversed(pairs)))


def _analyze(text: str, what: str) -> tuple[list[str], list]:
    _tokens(text, what)
    return analyze_punctuated(text)


def _align_texts(hyp: str, ref: str):
    hyp_words, hyp_marks = _analyze(hyp, "hypothesis")
    ref_words, ref_marks = _analyze(ref, "reference")
    alignment = align_tokens([w.lower() for w in hyp_words], [w.lower() for w in ref_words])
    return hyp_words, hyp_marks, ref_words, ref_marks, alignment


# ---------------------------------------------------------------- capitalization

def _is_capitalized(word: str) -> bool:
    return word != word.lower()


def _casing(word: str) -> tuple[bool, ...]:
    return tuple(c.isupper() for c in word)


def capitalization_counts(hyp: str, ref: str) -> tuple[int, int, int]:
    hyp_words, _, ref_words, _, alignment = _align_texts(hyp, ref)
    tp = fp = fn = 0
    for hi, ri, _ in alignment.pairs:
        h = hyp_words[hi] if hi is not None else None
        r = ref_words[ri] if ri is not None else None
        if r is not None and _is_capitalized(r):
            if h is not None and _casing(h) == _casing(r):
                tp += 1
            else:
                fn += 1
        elif h is not None and _is_capitalized(h):
            fp += 1
    return tp, fp, fn


def capitalization_f1(hypotheses: Sequence[str], references: Sequence[str]) -> PRF:
    """Micro-averaged F1 over per-token capitalization events."""
    if len(hypotheses) != len(references):
        raise ScoringError("hypotheses and references differ in length")
    if not references:
        raise ScoringError("nothing to score")
    tp = fp = fn = 0
    for h, r in zip(hypotheses, references):
        a, b, c = capitalization_counts(h, r)
        tp, fp, fn = tp + a, fp + b, fn + c
    return _prf(tp, fp, fn)


def _prf(tp: int, fp: int, fn: int) -> PRF:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return PRF(p, r, f1(p, r))


# ---------------------------------------------------------------- punctuation

@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def prf(self) -> PRF:
        return _prf(self.tp, self.fp, self.fn)


def _slot_counters(n_words: int, marks) -> list[Counter]:
    # index -1 marks (before the first token) share slot 0's position on the
    # left edge; they are kept separately as an extra slot
    slots = [Counter() for _ in range(n_words + 1)]
    for idx, _, cls in marks:
        if cls is not PunctClass.NONE:
            slots[idx + 1][cls] += 1
    return slots


def punctuation_counts(hyp: str, ref: str) -> dict[PunctClass, ClassCounts]:
    hyp_words, hyp_marks, ref_words, ref_marks, alignment = _align_texts(hyp, ref)
    hs = _slot_counters(len(hyp_words), hyp_marks)
    rs = _slot_counters(len(ref_words), ref_marks)
    counts = {c: ClassCounts() for c in SCORED_CLASSES}
    pairs = [(-1, -1)] + [(hi, ri) for hi, ri, _ in alignment.pairs]
    for hi, ri in pairs:
        h = hs[hi + 1] if hi is not None else Counter()
        r = rs[ri + 1] if ri is not None else Counter()
        for c in SCORED_CLASSES:
            both = min(h[c], r[c])
            counts[c].tp += both
            counts[c].fp += h[c] - both
            counts[c].fn += r[c] - both
    return counts


@dataclass
class RestorationReport:
    capitalization: PRF
    per_class: dict[str, PRF]
    overall: PRF
    counts: dict[str, dict] = field(default_factory=dict)

    def as_json(self) -> dict:
        def pct(s: PRF) -> dict:
            return {k: round(100 * getattr(s, k), 2) for k in ("precision", "recall", "f1")}

        return {
            "capitalization": pct(self.capitalization),
            "punctuation": {name: pct(s) for name, s in self.per_class.items()},
            "overall": pct(self.overall),
            "counts": self.counts,
            "alignment": "min-edit-distance over lowercased unpunctuated tokens",
        }


def punctuation_f1(hypotheses: Sequence[str], references: Sequence[str]) -> tuple[dict[str, PRF], PRF, dict]:
    """Per-class and micro-averaged Overall F1 for Comma, Period and Question."""
    if len(hypotheses) != len(references):
        raise ScoringError("hypotheses and references differ in length")
    totals = {c: ClassCounts() for c in SCORED_CLASSES}
    for h, r in zip(hypotheses, references):
        for c, cnt in punctuation_counts(h, r).items():
            totals[c].tp += cnt.tp
            totals[c].fp += cnt.fp
            totals[c].fn += cnt.fn
    per_class = {c.value: totals[c].prf() for c in SCORED_CLASSES}
    overall = _prf(
        sum(t.tp for t in totals.values()),
        sum(t.fp for t in totals.values()),
        sum(t.fn for t in totals.values()),
    )
    return per_class, overall, {c.value: asdict(totals[c]) for c in SCORED_CLASSES}


def restoration_report(hypotheses: Sequence[str], references: Sequence[str]) -> RestorationReport:
    per_class, overall, counts = punctuation_f1(hypotheses, references)
    return RestorationReport(capitalization_f1(hypotheses, references), per_class, overall, counts)
