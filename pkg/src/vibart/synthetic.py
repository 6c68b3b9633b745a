"""Template-generated Vietnamese-like text for smoke runs and tests.

Punctuation and casing follow the templates deterministically, so a small
model can learn to restore them; ``LEXICON`` lists the multi-syllable words
used to build word-segmented variants.
"""

from __future__ import annotations

import random

SUBJECTS = ["chúng tôi", "công ty", "sinh viên", "giáo viên", "học sinh", "nhà hàng", "người dân"]
NAMES = ["Hà Nội", "Golden Gate", "Đà Nẵng", "Việt Nam", "Sài Gòn", "Nguyễn Văn An", "Huế"]
ORGS = ["Sở Kế hoạch và Đầu tư", "Bộ Y tế", "Ngân hàng Nhà nước", "Tổng cục Thống kê"]
VERBS = ["đã mở", "đã đóng cửa", "sẽ xây", "cần mua", "muốn bán", "vừa thuê"]
OBJECTS = ["chi nhánh", "cửa hàng", "văn phòng", "nhà máy", "trường học", "bệnh viện"]
NUMBERS = ["bảy", "hai", "ba", "mười", "năm"]
YEARS = ["2015", "2019", "2020", "2021"]

LEXICON = sorted(
    {w for w in SUBJECTS + NAMES + OBJECTS + VERBS if " " in w}
    | {"tuy nhiên", "đóng cửa", "kế hoạch", "đầu tư", "ngân hàng", "thống kê", "y tế", "nhà nước"}
)


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def sentence(rng: random.Random) -> str:
    kind = rng.randrange(5)
    subj = rng.choice(SUBJECTS + NAMES)
    verb, obj = rng.choice(VERBS), rng.choice(OBJECTS)
    if kind == 0:
        return _cap(f"{subj} {verb} {rng.choice(NUMBERS)} {obj} ở {rng.choice(NAMES)}.")
    if kind == 1:
        return f"Theo {rng.choice(ORGS)}, {subj} {verb} {obj} vào năm {rng.choice(YEARS)}."
    if kind == 2:
        return _cap(f"{subj} có {verb} {obj} không?")
    if kind == 3:
        return f"Tuy nhiên, {subj} {verb} {obj}."
    a, b = rng.sample(OBJECTS, 2)
    return _cap(f"{subj} {verb}: {a} và {b}!")


def paragraph(rng: random.Random, n_sentences: int) -> str:
    return " ".join(sentence(rng) for _ in range(n_sentences))


def restoration_texts(n: int, seed: int = 0, max_sentences: int = 2) -> list[str]:
    rng = random.Random(seed)
    return [paragraph(rng, rng.randint(1, max_sentences)) for _ in range(n)]


def documents(n: int, seed: int = 0, sentences: tuple[int, int] = (3, 6)) -> list[str]:
    rng = random.Random(seed)
    return [paragraph(rng, rng.randint(*sentences)) for _ in range(n)]


def summarization_rows(n: int, seed: int = 0) -> list[dict]:
    """Articles of a few sentences whose abstract is their first sentence."""
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        sents = [sentence(rng) for _ in range(rng.randint(2, 4))]
        rows.append({"guid": f"doc{i:05d}", "article": " ".join(sents), "abstract": sents[0]})
    return rows
