"""Greedy and beam-search generation.

Both decoders start from ``<s>`` and never emit ``<s>``, ``<pad>`` or
``<mask>`` unless ``banned_ids`` says otherwise. Ties are broken towards the
lower token id (and, in beam search, the earlier beam).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from . import model as M
from .tokenizer import BOS_ID, EOS_ID, MASK_ID, PAD_ID

DEFAULT_BANNED = (BOS_ID, PAD_ID, MASK_ID)


@dataclass(frozen=True)
class Hypothesis:
    """``ids`` starts with ``<s>``; ``score`` is the summed log-probability of
    the generated tokens."""

    ids: tuple[int, ...]
    score: float
    finished: bool

    @property
    def generated(self) -> tuple[int, ...]:
        return self.ids[1:]

    def normalized(self, length_penalty: float) -> float:
        return self.score / max(len(self.generated), 1) ** length_penalty


def _log_probs(params, config, memory, pad, prefixes: list[tuple[int, ...]], banned) -> torch.Tensor:
    tgt = torch.tensor(prefixes, dtype=torch.long)
    n = len(prefixes)
    logits = M.decode_states(
        params, config, memory.expand(n, -1, -1), pad.expand(n, -1), tgt
    )[:, -1, :]
    logp = torch.log_softmax(logits.double(), dim=-1)
    if banned:
        logp[:, list(banned)] = float("-inf")
    return logp


def _encode(params, config, source_ids):
    src = torch.as_tensor([list(source_ids)], dtype=torch.long)
    return M.encode_source(params, config, src)


@torch.no_grad()
def greedy_decode(
    params: M.Params,
    config: M.ModelConfig,
    source_ids: Sequence[int],
    max_length: int,
    banned_ids: Sequence[int] = DEFAULT_BANNED,
) -> Hypothesis:
    if max_length < 1:
        raise ValueError("max_length must be at least 1")
    memory, pad = _encode(params, config, source_ids)
    ids = (BOS_ID,)
    score = 0.0
    for _ in range(max_length):
        logp = _log_probs(params, config, memory, pad, [ids], banned_ids)[0]
        tok = int(torch.argmax(logp))  # first maximum, i.e. the lowest id on ties
        score += float(logp[tok])
        ids += (tok,)
        if tok == EOS_ID:
            break
    return Hypothesis(ids, score, True)


@torch.no_grad()
def beam_search(
    params: M.Params,
    config: M.ModelConfig,
    source_ids: Sequence[int],
    beam_size: int = 4,
    max_length: int = 256,
    length_penalty: float = 1.0,
    banned_ids: Sequence[int] = DEFAULT_BANNED,
) -> Hypothesis:
    """Keep the ``beam_size`` best extensions per step over the full vocabulary.

    Extensions that emit ``</s>`` or reach ``max_length`` are set aside as
    finished; the search stops when no live hypothesis remains. The result is
    the finished hypothesis maximising ``score / length ** length_penalty``.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    if max_length < 1:
        raise ValueError("max_length must be at least 1")
    memory, pad = _encode(params, config, source_ids)
    live = [Hypothesis((BOS_ID,), 0.0, False)]
    finished: list[Hypothesis] = []
    vocab = config.vocab_size
    for step in range(1, max_length + 1):
        logp = _log_probs(params, config, memory, pad, [h.ids for h in live], banned_ids)
        totals = torch.tensor([h.score for h in live], dtype=torch.float64)[:, None] + logp
        flat = totals.reshape(-1)
        allowed = int(torch.isfinite(flat).sum())
        order = torch.sort(flat, descending=True, stable=True).indices[: min(beam_size, allowed)]
        live_next = []
        for idx in order.tolist():
            b, tok = divmod(idx, vocab)
            hyp = Hypothesis(live[b].ids + (tok,), float(flat[idx]), False)
            if tok == EOS_ID or step == max_length:
                finished.append(Hypothesis(hyp.ids, hyp.score, True))
            else:
                live_next.append(hyp)
        live = live_next
        if not live:
            break
    pool = finished or [Hypothesis(h.ids, h.score, True) for h in live]
    best = pool[0]
    for h in pool[1:]:
        if h.normalized(length_penalty) > best.normalized(length_penalty):
            best = h
    return best
