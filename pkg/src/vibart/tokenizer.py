"""Byte-pair-encoding subword vocabulary with an end-of-word marker.

Words are whitespace-delimited. Each word is split into characters and its
last symbol carries the ``</w>`` marker, so decoding only needs to know where
a marker sits to put the spaces back. In word mode the underscore joining
syllables is an ordinary character.
"""

from __future__ import annotations

import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import TextGranularity

EOW = "</w>"
BOS, PAD, EOS, UNK, MASK = "<s>", "<pad>", "</s>", "<unk>", "<mask>"
SPECIALS = (BOS, PAD, EOS, UNK, MASK)
BOS_ID, PAD_ID, EOS_ID, UNK_ID, MASK_ID = range(5)

FORMAT_VERSION = 1
_MERGES_HEADER = "#merges"


class VocabularyError(ValueError):
    pass


class CorpusTooSmall(VocabularyError):
    def __init__(self, achieved: int, target: int):
        super().__init__(f"corpus supports only {achieved} tokens, {target} requested")
        self.achieved = achieved
        self.target = target


def _normalize(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).split()


@dataclass(frozen=True, eq=False)
class Vocabulary:
    tokens: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    granularity: TextGranularity = TextGranularity.SYLLABLE
    index: dict = field(init=False, repr=False)
    ranks: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:5]) != SPECIALS:
            raise VocabularyError("the first five tokens must be the special tokens")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "ranks", {pair: r for r, pair in enumerate(self.merges)})
        object.__setattr__(self, "_segment", lru_cache(maxsize=65536)(self._segment_word))

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.tokens, self.merges, self.granularity) == (
            other.tokens,
            other.merges,
            other.granularity,
        )

    @property
    def alphabet(self) -> set[str]:
        return {t for t in self.tokens[5:] if len(t) == 1}

    def _segment_word(self, word: str) -> tuple[str, ...]:
        symbols = list(word[:-1]) + [word[-1] + EOW]
        ranks = self.ranks
        while len(symbols) > 1:
            best, best_rank = -1, len(ranks)
            for i in range(len(symbols) - 1):
                r = ranks.get((symbols[i], symbols[i + 1]), best_rank)
                if r < best_rank:
                    best, best_rank = i, r
            if best < 0:
                break
            pair = (symbols[best], symbols[best + 1])
            merged, i = [], 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(symbols)

    def segment(self, text: str) -> list[str]:
        out = []
        for word in _normalize(text):
            out.extend(self._segment(word))
        return out

    # -------- io

    def save(self, path: str | Path) -> None:
        lines = [f"#bpe-vocab\tversion={FORMAT_VERSION}\tgranularity={self.granularity.value}"]
        lines += [f"{tok}\t{i}" for i, tok in enumerate(self.tokens)]
        lines.append(_MERGES_HEADER)
        lines += [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        header = lines[0].split("\t")
        if header[0] != "#bpe-vocab":
            raise VocabularyError(f"{path}: not a vocabulary file")
        meta = dict(item.split("=", 1) for item in header[1:])
        if int(meta.get("version", -1)) != FORMAT_VERSION:
            raise VocabularyError(f"{path}: unsupported version {meta.get('version')}")
        tokens: list[str] = []
        merges: list[tuple[str, str]] = []
        in_merges = False
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            if line == _MERGES_HEADER:
                in_merges = True
                continue
            if in_merges:
                a, b = line.split(" ")
                merges.append((a, b))
            else:
                tok, idx = line.rsplit("\t", 1)
                if int(idx) != len(tokens):
                    raise VocabularyError(f"{path}:{lineno}: ids must be dense and ordered")
                tokens.append(tok)
        return cls(tuple(tokens), tuple(merges), TextGranularity(meta["granularity"]))


def train_bpe(
    corpus: Iterable[str],
    target_size: int,
    granularity: TextGranularity | str = TextGranularity.SYLLABLE,
) -> Vocabulary:
    """Learn merges until the vocabulary holds ``target_size`` tokens.

    The base inventory holds every observed character both bare and with the
    end-of-word marker, so any string over the training characters encodes
    without ``<unk>``. The most frequent adjacent pair is merged next; ties go
    to the lexicographically smallest pair.
    """
    granularity = TextGranularity(granularity)
    word_freq: Counter[str] = Counter()
    for line in corpus:
        word_freq.update(_normalize(line))

    chars = sorted({c for w in word_freq for c in w})
    base = []
    for c in chars:
        base += [c, c + EOW]
    tokens = list(SPECIALS) + base
    if target_size < len(tokens):
        raise VocabularyError(
            f"target_size {target_size} is below the base inventory of {len(tokens)}"
        )

    words = [list(w[:-1]) + [w[-1] + EOW] for w in word_freq]
    freqs = list(word_freq.values())
    pair_counts: Counter[tuple[str, str]] = Counter()
    where: defaultdict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)

    known = set(tokens)
    merges: list[tuple[str, str]] = []
    while len(tokens) < target_size:
        candidates = [(-n, p) for p, n in pair_counts.items() if n > 0 and p[0] + p[1] not in SPECIALS]
        if not candidates:
            raise CorpusTooSmall(len(tokens), target_size)
        _, pair = min(candidates)
        merged_tok = pair[0] + pair[1]
        merges.append(pair)
        if merged_tok not in known:
            tokens.append(merged_tok)
            known.add(merged_tok)
        for wi in list(where[pair]):
            syms = words[wi]
            f = freqs[wi]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
            new, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == pair:
                    new.append(merged_tok)
                    i += 2
                else:
                    new.append(syms[i])
                    i += 1
            words[wi] = new
            for p in zip(new, new[1:]):
                pair_counts[p] += f
                where[p].add(wi)
        del pair_counts[pair]
        where.pop(pair, None)
    return Vocabulary(tuple(tokens), tuple(merges), granularity)


def encode(text: str, vocab: Vocabulary, add_bos_eos: bool = False) -> list[int]:
    index = vocab.index
    ids = [index.get(sym, UNK_ID) for sym in vocab.segment(text)]
    if add_bos_eos:
        ids = [BOS_ID] + ids + [EOS_ID]
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    n = len(vocab)
    pieces: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise VocabularyError(f"token id {i} out of range for vocabulary of {n}")
        if i == MASK_ID:
            if pieces and not pieces[-1].endswith(" "):
                pieces.append(" ")
            pieces.append(MASK + " ")
        elif i >= 5:
            tok = vocab.tokens[i]
            pieces.append(tok[: -len(EOW)] + " " if tok.endswith(EOW) else tok)
    return "".join(pieces).strip()
