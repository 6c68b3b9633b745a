"""Dataset ingestion, text conventions, split deduplication and
restoration-pair synthesis.

Vietnamese whitespace separates syllables. Word-segmented text joins the
syllables of a multi-syllable word with underscores ("nghiên_cứu_viên"); this
module never segments words itself, it only converts between the two forms.
"""

from __future__ import annotations

import enum
import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(ValueError):
    """Raised for unreadable or schema-violating dataset files."""


class TextGranularity(str, enum.Enum):
    SYLLABLE = "syllable"
    WORD = "word"


class Schema(str, enum.Enum):
    SUMMARIZATION = "summarization"
    RESTORATION = "restoration"
    PLAIN_LINES = "plain"


class PunctClass(str, enum.Enum):
    NONE = "none"
    COMMA = "comma"
    PERIOD = "period"
    QUESTION = "question"


SCORED_CLASSES = (PunctClass.COMMA, PunctClass.PERIOD, PunctClass.QUESTION)

# Dashes only count as Comma when they stand alone between spaces.
DASHES = frozenset("-–")
CLASS_MAP = {
    ",": PunctClass.COMMA,
    ":": PunctClass.COMMA,
    ".": PunctClass.PERIOD,
    "!": PunctClass.PERIOD,
    ";": PunctClass.PERIOD,
    "?": PunctClass.QUESTION,
}


@dataclass(frozen=True)
class SummarizationExample:
    guid: str
    article: str
    abstract: str

    def __post_init__(self) -> None:
        if not self.article.strip():
            raise DatasetError(f"example {self.guid!r}: empty article")
        if not self.abstract.strip():
            raise DatasetError(f"example {self.guid!r}: empty abstract")


@dataclass(frozen=True)
class RestorationPair:
    """A lowercase, unpunctuated input and its true-case punctuated target.

    ``slots`` has one class per input token: the first scored mark that
    follows the token. ``marks`` lists every punctuation character removed
    from the target as ``(token_index, char, class)``; marks before the first
    token use index -1. ``caps`` flags each token that carries uppercase.
    """

    input: str
    target: str
    slots: tuple[tuple[int, PunctClass], ...] = ()
    caps: tuple[tuple[int, bool], ...] = ()
    marks: tuple[tuple[int, str, PunctClass], ...] = field(default=(), repr=False)


# ---------------------------------------------------------------- loading

_REQUIRED = {
    Schema.SUMMARIZATION: ("guid", "article", "abstract"),
    Schema.RESTORATION: ("input", "target"),
}


def load_dataset(path: str | Path, schema: Schema | str) -> list:
    """Parse a UTF-8 JSONL (or plain-lines) file into records, in file order.

    Malformed lines raise :class:`DatasetError` naming the 1-based line number.
    Blank lines are only tolerated at the very end of the file.
    """
    schema = Schema(schema)
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path}: no such file")
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()

    if schema is Schema.PLAIN_LINES:
        return [line.rstrip("\r") for line in lines]

    records = []
    for lineno, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetError(f"{path}:{lineno}: expected a JSON object")
        for name in _REQUIRED[schema]:
            if name not in obj:
                raise DatasetError(f"{path}:{lineno}: missing required field {name!r}")
            if not isinstance(obj[name], str):
                raise DatasetError(f"{path}:{lineno}: field {name!r} must be a string")
        try:
            if schema is Schema.SUMMARIZATION:
                records.append(SummarizationExample(obj["guid"], obj["article"], obj["abstract"]))
            else:
                records.append(synthesize_restoration_pair(obj["target"], given_input=obj["input"]))
        except DatasetError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return records


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------- dedup

def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def detect_duplicate_key(example: SummarizationExample) -> str:
    return normalize_whitespace(unicodedata.normalize("NFC", example.article))


def _unique(examples: Sequence[SummarizationExample]) -> tuple[list, set]:
    seen: set[str] = set()
    kept = []
    for ex in examples:
        key = detect_duplicate_key(ex)
        if key not in seen:
            seen.add(key)
            kept.append(ex)
    return kept, seen


def deduplicate_splits(train, valid, test):
    """Remove duplicate articles within and across splits.

    1. drop within-split repeats (first occurrence wins);
    2. drop train articles that also occur in valid or test;
    3. drop valid articles that also occur in test.
    """
    train, train_keys = _unique(train)
    valid, valid_keys = _unique(valid)
    test, test_keys = _unique(test)
    held_out = valid_keys | test_keys
    train = [ex for ex in train if detect_duplicate_key(ex) not in held_out]
    valid = [ex for ex in valid if detect_duplicate_key(ex) not in test_keys]
    return train, valid, test


# ---------------------------------------------------------------- sentences

ABBREVIATIONS = frozenset(
    [chr(c) + "." for c in range(ord("A"), ord("Z") + 1)]
    + ["Đ.", "TP.", "Tp.", "TS.", "ThS.", "PGS.", "GS.", "BS.", "Mr.", "Mrs.", "Ms.", "Dr.", "St.", "v.v."]
)
_TERMINATORS = ".!?;"
_CLOSERS = "\"'”’)]»"


def _ends_sentence(token: str, nxt: str) -> bool:
    core = token.rstrip(_CLOSERS)
    if not core or core[-1] not in _TERMINATORS:
        return False
    if core[-1] == "." and core in ABBREVIATIONS:
        return False
    head = nxt.lstrip("\"'“‘([«")
    return bool(head) and (head[0].isupper() or head[0].isdigit())


def split_sentences(text: str) -> list[str]:
    tokens = text.split()
    if not tokens:
        return []
    sentences, current = [], []
    for i, tok in enumerate(tokens):
        current.append(tok)
        if i + 1 < len(tokens) and _ends_sentence(tok, tokens[i + 1]):
            sentences.append(" ".join(current))
            current = []
    sentences.append(" ".join(current))
    return sentences


# ---------------------------------------------------------------- word mode

_INNER_UNDERSCORES = re.compile(r"(?<=[^\s_])_+(?=[^\s_])")


def detokenize_words(text: str) -> str:
    """Turn word-segmented text back into syllable text."""
    return _INNER_UNDERSCORES.sub(" ", text)


def join_words(text: str, lexicon: Iterable[str]) -> str:
    """Underscore-join the multi-syllable entries of ``lexicon`` found in ``text``.

    Longest match first, case-insensitive, left to right. This is a lexicon
    lookup used to build word-mode fixtures, not a statistical segmenter.
    """
    entries = {}
    longest = 1
    for entry in lexicon:
        sylls = tuple(s.lower() for s in entry.replace("_", " ").split())
        if len(sylls) > 1:
            entries[sylls] = True
            longest = max(longest, len(sylls))
    tokens = text.split()
    out, i = [], 0
    while i < len(tokens):
        for n in range(min(longest, len(tokens) - i), 1, -1):
            window = tokens[i : i + n]
            if tuple(t.lower() for t in window) in entries:
                out.append("_".join(window))
                i += n
                break
        else:
            out.append(tokens[i])
            i += 1
    return " ".join(out)


# ---------------------------------------------------------------- restoration

def is_punctuation(ch: str) -> bool:
    # "_" joins syllables in word mode and is never treated as punctuation.
    return ch != "_" and unicodedata.category(ch).startswith("P")


def _retained(chunk: str, i: int) -> bool:
    """Whether punctuation ``chunk[i]`` belongs to a number or a hyphenated word."""
    prev = chunk[i - 1] if i > 0 else ""
    nxt = chunk[i + 1] if i + 1 < len(chunk) else ""
    if prev.isdigit() and nxt.isdigit():
        return True
    if chunk[i] == "%" and prev.isdigit():
        return True
    if chunk[i] in DASHES and prev.isalnum() and nxt.isalnum():
        return True
    return False


def _classify(ch: str, standalone: bool) -> PunctClass:
    if ch in DASHES:
        return PunctClass.COMMA if standalone else PunctClass.NONE
    return CLASS_MAP.get(ch, PunctClass.NONE)


def analyze_punctuated(text: str) -> tuple[list[str], list[tuple[int, str, PunctClass]]]:
    """Split punctuated text into stripped word tokens and removed marks.

    Each removed punctuation character is attached to the last word token
    emitted before it (index -1 when no word precedes it).
    """
    words: list[str] = []
    marks: list[tuple[int, str, PunctClass]] = []
    for chunk in text.split():
        standalone = all(c in DASHES for c in chunk)
        kept: list[str] = []
        pending: list[tuple[str, PunctClass]] = []
        for i, ch in enumerate(chunk):
            if is_punctuation(ch) and not _retained(chunk, i):
                cls = _classify(ch, standalone)
                if kept:
                    pending.append((ch, cls))
                else:
                    marks.append((len(words) - 1, ch, cls))
            else:
                if pending:
                    # mark inside a token (e.g. "a.b"): still belongs to this token
                    marks.extend((len(words), c, k) for c, k in pending)
                    pending = []
                kept.append(ch)
        if kept:
            words.append("".join(kept))
            marks.extend((len(words) - 1, c, k) for c, k in pending)
    return words, marks


def strip_punctuation(text: str) -> str:
    return " ".join(analyze_punctuated(text)[0])


def synthesize_restoration_pair(text: str, given_input: str | None = None) -> RestorationPair:
    """Simulate an ASR transcript from well-formatted text.

    The transcript is lowercased and has every punctuation mark removed,
    except marks inside numbers ("3,5", "1.000", "50%") and intra-word hyphens.
    When ``given_input`` is supplied (loading a stored pair) it must equal the
    derived transcript.
    """
    text = unicodedata.normalize("NFC", text)
    words, marks = analyze_punctuated(text)
    transcript = " ".join(words).lower()
    if given_input is not None and normalize_whitespace(
        unicodedata.normalize("NFC", given_input)
    ) != transcript:
        raise DatasetError("input is not the lowercased, unpunctuated target")
    first: dict[int, PunctClass] = {}
    for idx, _, cls in marks:
        if idx >= 0 and cls is not PunctClass.NONE:
            first.setdefault(idx, cls)
    slots = tuple((i, first.get(i, PunctClass.NONE)) for i in range(len(words)))
    caps = tuple((i, w != w.lower()) for i, w in enumerate(words))
    return RestorationPair(transcript, text, slots, caps, tuple(marks))
