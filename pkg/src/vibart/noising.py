"""Denoising corruption: sentence permutation inside fixed-size token blocks,
followed by Poisson-length span infilling with a single ``<mask>`` per span."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import BOS_ID, EOS_ID, MASK_ID


@dataclass(frozen=True)
class NoiseConfig:
    poisson_lambda: float = 3.5
    mask_fraction: float = 0.30
    block_size: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.poisson_lambda > 0:
            raise ValueError("poisson_lambda must be positive")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must lie in [0, 1]")
        if self.block_size < 2:
            raise ValueError("block_size must be at least 2")


@dataclass(frozen=True)
class Block:
    """Consecutive sentences packed into one block; ``lengths`` keeps the boundaries."""

    tokens: tuple[int, ...]
    lengths: tuple[int, ...]

    @property
    def sentences(self) -> list[tuple[int, ...]]:
        out, start = [], 0
        for n in self.lengths:
            out.append(self.tokens[start : start + n])
            start += n
        return out

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class DenoisingExample:
    source: list[int]
    target: list[int]


@dataclass(frozen=True)
class SpanPlan:
    """Where infilling acts: ``spans`` are (start, length) with length >= 1,
    ``insertions`` are gap indices (gap g sits before token g)."""

    spans: tuple[tuple[int, int], ...] = ()
    insertions: tuple[int, ...] = ()

    @property
    def masked_tokens(self) -> int:
        return sum(n for _, n in self.spans)


# ---------------------------------------------------------------- poisson

@lru_cache(maxsize=32)
def poisson_cdf_table(lam: float, tail: float = 1e-18) -> np.ndarray:
    """Cumulative Poisson probabilities up to the point where the tail is negligible."""
    pmf = [math.exp(-lam)]
    cdf = [pmf[0]]
    k = 0
    while k < lam or pmf[-1] > tail:
        k += 1
        pmf.append(pmf[-1] * lam / k)
        cdf.append(cdf[-1] + pmf[-1])
    table = np.asarray(cdf)
    table[-1] = 1.0
    table.flags.writeable = False
    return table


def sample_poisson(lam: float, rng: np.random.Generator, size: int | None = None):
    """Exact inverse-CDF Poisson sampling."""
    table = poisson_cdf_table(lam)
    u = rng.random(size)
    k = np.searchsorted(table, u, side="right")
    return int(k) if size is None else k.astype(np.int64)


# ---------------------------------------------------------------- blocks

def build_blocks(documents: Iterable[Sequence[Sequence[int]]], block_size: int) -> list[Block]:
    """Greedily pack consecutive sentences of each document into blocks.

    A sentence that would overflow the current block opens a new one; a
    sentence longer than ``block_size`` is truncated. Blocks never span
    documents.
    """
    blocks = []
    for doc in documents:
        tokens: list[int] = []
        lengths: list[int] = []
        for sent in doc:
            sent = list(sent)[:block_size]
            if not sent:
                continue
            if tokens and len(tokens) + len(sent) > block_size:
                blocks.append(Block(tuple(tokens), tuple(lengths)))
                tokens, lengths = [], []
            tokens.extend(sent)
            lengths.append(len(sent))
        if tokens:
            blocks.append(Block(tuple(tokens), tuple(lengths)))
    return blocks


def permute_sentences(block: Block, rng: np.random.Generator) -> Block:
    order = list(range(len(block.lengths)))
    for i in range(len(order) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    sentences = block.sentences
    tokens = tuple(t for k in order for t in sentences[k])
    return Block(tokens, tuple(block.lengths[k] for k in order))


# ---------------------------------------------------------------- infilling

_MAX_REJECTIONS = 100


def plan_spans(n_tokens: int, config: NoiseConfig, rng: np.random.Generator) -> SpanPlan:
    """Sample non-overlapping spans until ``ceil(mask_fraction * n)`` tokens are covered.

    Zero-length draws insert a mask at a gap that no span covers; later spans
    never swallow such a gap.
    """
    budget = math.ceil(config.mask_fraction * n_tokens - 1e-9)
    covered = np.zeros(n_tokens, dtype=bool)
    # barrier[g]: a mask was inserted at gap g (before token g)
    barrier = np.zeros(n_tokens + 1, dtype=bool)
    spans: list[tuple[int, int]] = []
    insertions: list[int] = []
    done = 0
    while done < budget:
        length = sample_poisson(config.poisson_lambda, rng)
        if length == 0:
            while True:
                gap = int(rng.integers(0, n_tokens + 1))
                inside = 0 < gap < n_tokens and covered[gap - 1] and covered[gap]
                if not inside:
                    break
            insertions.append(gap)
            barrier[gap] = True
            continue
        length = min(length, budget - done)
        free = np.flatnonzero(~covered)
        for _ in range(_MAX_REJECTIONS):
            start = int(free[rng.integers(0, len(free))])
            end = start + length
            if end <= n_tokens and not covered[start:end].any() and not barrier[start + 1 : end].any():
                break
        else:
            # no clean fit: keep the last start and clip at the first obstacle
            end = start + 1
            while end < min(n_tokens, start + length) and not covered[end] and not barrier[end]:
                end += 1
        covered[start:end] = True
        spans.append((start, end - start))
        done += end - start
    return SpanPlan(tuple(sorted(spans)), tuple(sorted(insertions)))


def apply_spans(tokens: Sequence[int], plan: SpanPlan, mask_id: int = MASK_ID) -> list[int]:
    """Replace each span with one mask and insert a mask at every insertion gap."""
    span_at = dict(plan.spans)
    gaps: dict[int, int] = {}
    for g in plan.insertions:
        gaps[g] = gaps.get(g, 0) + 1
    out: list[int] = []
    i, n = 0, len(tokens)
    while i <= n:
        out.extend([mask_id] * gaps.get(i, 0))
        if i == n:
            break
        if i in span_at:
            out.append(mask_id)
            i += span_at[i]
        else:
            out.append(tokens[i])
            i += 1
    return out


def text_infilling(tokens: Sequence[int], config: NoiseConfig, rng: np.random.Generator) -> list[int]:
    if config.mask_fraction == 0 or not tokens:
        return list(tokens)
    return apply_spans(tokens, plan_spans(len(tokens), config, rng))


def make_denoising_example(block: Block, config: NoiseConfig, rng: np.random.Generator) -> DenoisingExample:
    permuted = permute_sentences(block, rng)
    noised = text_infilling(permuted.tokens, config, rng)
    return DenoisingExample(
        source=[BOS_ID, *noised, EOS_ID],
        target=[BOS_ID, *block.tokens, EOS_ID],
    )


def noise_corpus(blocks: Sequence[Block], config: NoiseConfig, seed: int | None = None) -> list[DenoisingExample]:
    """Noise every block with its own RNG stream spawned from one seed."""
    root = np.random.SeedSequence(config.seed if seed is None else seed)
    streams = root.spawn(len(blocks))
    return [
        make_denoising_example(b, config, np.random.default_rng(s)) for b, s in zip(blocks, streams)
    ]
