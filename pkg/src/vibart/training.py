"""Optimization: warmup/decay schedule, Adam, padding-aware token batching,
and the denoising pre-training and fine-tuning loops."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from . import model as M
from .noising import Block, NoiseConfig, noise_corpus

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 1e-4
    warmup_fraction: float = 0.1
    total_epochs: int = 15
    max_tokens_per_batch: int = 4096
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-6
    grad_clip: float | None = 1.0
    update_freq: int = 1
    label_smoothing: float = 0.0
    evals_per_epoch: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.peak_lr > 0:
            raise ValueError("peak_lr must be positive")
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie strictly between 0 and 1")
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be non-negative")
        if self.update_freq < 1:
            raise ValueError("update_freq must be at least 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")


class Selection(str, enum.Enum):
    BEST_ROUGE_L = "rougeL"
    LOWEST_LOSS = "loss"


@dataclass
class OptimizerState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: M.Params) -> "OptimizerState":
        return cls(
            {k: torch.zeros_like(t) for k, t in params.items()},
            {k: torch.zeros_like(t) for k, t in params.items()},
        )


# ---------------------------------------------------------------- schedule

def lr_at(step: int, total_steps: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear warmup from 0 to ``peak_lr``, then linear decay to 0 at ``total_steps``."""
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    remaining = total_steps - warmup_steps
    if remaining <= 0:
        return peak_lr
    return peak_lr * max(0.0, (total_steps - step) / remaining)


def warmup_steps_for(total_steps: int, warmup_fraction: float) -> int:
    return max(1, round(total_steps * warmup_fraction))


# ---------------------------------------------------------------- adam

def adam_step(params: M.Params, grads: M.Params, state: OptimizerState, lr: float, config: TrainConfig):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            bad = int((~torch.isfinite(g)).sum())
            raise FloatingPointError(
                f"non-finite gradient for {name} ({bad} entries) at update {state.step + 1}"
            )
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - lr * m_hat / (v_hat.sqrt() + eps)
        new_m[name], new_v[name] = m, v
    return new_params, OptimizerState(new_m, new_v, t)


def clip_grad_norm(grads: M.Params, max_norm: float | None) -> tuple[M.Params, float]:
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if max_norm is None or total <= max_norm or total == 0:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


# ---------------------------------------------------------------- batching

def batch_by_tokens(
    examples: Sequence,
    max_tokens: int,
    seed: int | None = None,
) -> list[list[int]]:
    """Group example indices so that ``n_seqs * longest(source, target) <= max_tokens``.

    ``examples`` items expose ``source`` and ``target`` sequences. Examples are
    sorted by source length (stable) and packed greedily; the batch order is
    shuffled when ``seed`` is given.
    """
    src = [len(e.source) for e in examples]
    tgt = [len(e.target) for e in examples]
    for i in range(len(examples)):
        if max(src[i], tgt[i]) > max_tokens:
            raise ValueError(
                f"example {i} has {max(src[i], tgt[i])} tokens, over the budget of {max_tokens}"
            )
    order = sorted(range(len(examples)), key=lambda i: src[i])
    batches: list[list[int]] = []
    current: list[int] = []
    width = 0
    for i in order:
        w = max(width, src[i], tgt[i])
        if current and (len(current) + 1) * w > max_tokens:
            batches.append(current)
            current, w = [], max(src[i], tgt[i])
        current.append(i)
        width = w
    if current:
        batches.append(current)
    if seed is not None:
        perm = np.random.default_rng(seed).permutation(len(batches))
        batches = [batches[k] for k in perm]
    return batches


def collate(examples: Sequence, indices: Sequence[int]):
    return (
        M.pad_batch([examples[i].source for i in indices]),
        M.pad_batch([examples[i].target for i in indices]),
    )


# ---------------------------------------------------------------- loops

@dataclass
class Trainer:
    """Owns the parameters and optimizer state and applies updates."""

    params: M.Params
    model_config: M.ModelConfig
    config: TrainConfig
    total_updates: int
    state: OptimizerState = None
    log_path: Path | None = None
    history: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.state is None:
            self.state = OptimizerState.zeros_like(self.params)
        self.warmup = warmup_steps_for(self.total_updates, self.config.warmup_fraction)

    def lr(self) -> float:
        return lr_at(self.state.step + 1, self.total_updates, self.warmup, self.config.peak_lr)

    def update(self, batches: Sequence[tuple[torch.Tensor, torch.Tensor]], epoch: int) -> float:
        """Accumulate gradients over ``batches`` (fixed order) and apply one update."""
        total_tokens = sum(int(t[:, 1:].ne(M.PAD_ID).sum()) for _, t in batches)
        acc: M.Params | None = None
        loss_sum = 0.0
        for src, tgt in batches:
            n = int(tgt[:, 1:].ne(M.PAD_ID).sum())
            value, grads = M.gradients(
                self.params, self.model_config, (src, tgt), training=True, label_smoothing=self.config.label_smoothing
            )
            w = n / max(total_tokens, 1)
            loss_sum += value * w
            if acc is None:
                acc = {k: g * w for k, g in grads.items()}
            else:
                for k, g in grads.items():
                    acc[k] += g * w
        acc, _ = clip_grad_norm(acc, self.config.grad_clip)
        lr = self.lr()
        self.params, self.state = adam_step(self.params, acc, self.state, lr, self.config)
        record = {"update": self.state.step, "epoch": epoch, "lr": lr, "loss": loss_sum}
        self.history.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
        return loss_sum


def _groups(batches: list, size: int) -> list[list]:
    return [batches[i : i + size] for i in range(0, len(batches), size)]


def _set_seed(seed: int) -> None:
    torch.manual_seed(seed)


@dataclass
class PretrainResult:
    params: M.Params
    epoch_losses: list[float]
    history: list[dict]


def pretrain(
    blocks: Sequence[Block],
    model_config: M.ModelConfig,
    noise_config: NoiseConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    init: M.Params | None = None,
) -> PretrainResult:
    """Denoising pre-training; blocks are re-noised every epoch from an epoch seed."""
    if not blocks:
        raise ValueError("pre-training corpus is empty")
    params = init if init is not None else M.init_params(model_config, train_config.seed)
    if train_config.total_epochs == 0:
        return PretrainResult(params, [], [])
    _set_seed(train_config.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train_log.jsonl").write_text("")

    epoch_seeds = np.random.SeedSequence(train_config.seed).spawn(train_config.total_epochs)
    first = noise_corpus(blocks, noise_config, seed=_seed_int(epoch_seeds[0]))
    n_batches = len(batch_by_tokens(first, train_config.max_tokens_per_batch))
    updates_per_epoch = math.ceil(n_batches / train_config.update_freq)
    trainer = Trainer(
        params, model_config, train_config, updates_per_epoch * train_config.total_epochs,
        log_path=out_dir / "train_log.jsonl" if out_dir is not None else None,
    )
    epoch_losses = []
    for epoch in range(train_config.total_epochs):
        examples = first if epoch == 0 else noise_corpus(blocks, noise_config, seed=_seed_int(epoch_seeds[epoch]))
        batches = batch_by_tokens(examples, train_config.max_tokens_per_batch, seed=_seed_int(epoch_seeds[epoch]) + 1)
        losses = []
        for group in _groups(batches, train_config.update_freq):
            losses.append(trainer.update([collate(examples, b) for b in group], epoch + 1))
        epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d mean loss %.4f", epoch + 1, epoch_losses[-1])
        if out_dir is not None:
            M.save_checkpoint(
                out_dir / f"checkpoint_epoch{epoch + 1}.bin", trainer.params, model_config,
                {"epoch": epoch + 1, "task": "denoising"},
            )
    if out_dir is not None:
        M.save_checkpoint(out_dir / "checkpoint_last.bin", trainer.params, model_config, {"epoch": train_config.total_epochs})
    return PretrainResult(trainer.params, epoch_losses, trainer.history)


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


# ---------------------------------------------------------------- fine-tuning

@dataclass(frozen=True)
class Pair:
    source: list[int]
    target: list[int]


def eval_points(updates_per_epoch: int, evals_per_epoch: int = 4) -> list[int]:
    """1-based update counts within an epoch at which to evaluate: ceil(k*U/E)."""
    points = sorted({math.ceil(k * updates_per_epoch / evals_per_epoch) for k in range(1, evals_per_epoch + 1)})
    return [p for p in points if p >= 1]


def validation_loss(params: M.Params, model_config: M.ModelConfig, pairs: Sequence[Pair], max_tokens: int) -> float:
    """Token-weighted mean loss over ``pairs`` (dropout off)."""
    total, count = 0.0, 0
    with torch.no_grad():
        for b in batch_by_tokens(pairs, max_tokens):
            src, tgt = collate(pairs, b)
            n = int(tgt[:, 1:].ne(M.PAD_ID).sum())
            total += float(M.batch_loss(params, model_config, src, tgt)) * n
            count += n
    return total / max(count, 1)


@dataclass
class Evaluation:
    lr: float
    epoch: int
    update: int
    score: float


@dataclass
class FinetuneResult:
    params: M.Params
    best: Evaluation
    report: dict[float, list[Evaluation]]

    def report_json(self) -> dict:
        return {
            "best": asdict(self.best),
            "per_lr": {str(lr): [asdict(e) for e in evs] for lr, evs in self.report.items()},
        }


Evaluator = Callable[[M.Params], float]


def finetune(
    train: Sequence[Pair],
    valid: Sequence[Pair],
    start: M.Params,
    model_config: M.ModelConfig,
    train_config: TrainConfig,
    grid: Iterable[float],
    selection: Selection | str,
    evaluator: Evaluator | None = None,
    out_dir: str | Path | None = None,
) -> FinetuneResult:
    """Grid-search the initial learning rate and keep the best checkpoint.

    Every run starts from ``start`` and is evaluated at ``evals_per_epoch``
    evenly spaced update counts per epoch. ``BEST_ROUGE_L`` maximises the
    evaluator's score (it must be supplied); ``LOWEST_LOSS`` minimises the
    validation loss unless a custom evaluator is given.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("learning-rate grid is empty")
    selection = Selection(selection)
    if evaluator is None:
        if selection is Selection.BEST_ROUGE_L:
            raise ValueError("ROUGE-L selection needs an evaluator")
        evaluator = lambda p: validation_loss(p, model_config, valid, train_config.max_tokens_per_batch)
    better = (lambda a, b: a > b) if selection is Selection.BEST_ROUGE_L else (lambda a, b: a < b)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    n_batches = len(batch_by_tokens(train, train_config.max_tokens_per_batch))
    updates_per_epoch = math.ceil(n_batches / train_config.update_freq)
    points = set(eval_points(updates_per_epoch, train_config.evals_per_epoch))

    best_params, best, report = None, None, {}
    for lr in grid:
        cfg = replace(train_config, peak_lr=lr)
        _set_seed(cfg.seed)
        trainer = Trainer(
            {k: v.clone() for k, v in start.items()}, model_config, cfg,
            max(1, updates_per_epoch * cfg.total_epochs),
            log_path=out_dir / f"train_log_lr{lr:g}.jsonl" if out_dir is not None else None,
        )
        if trainer.log_path is not None:
            trainer.log_path.write_text("")
        evals = report.setdefault(lr, [])
        for epoch in range(1, cfg.total_epochs + 1):
            batches = batch_by_tokens(train, cfg.max_tokens_per_batch, seed=cfg.seed * 1000 + epoch)
            for u, group in enumerate(_groups(batches, cfg.update_freq), start=1):
                trainer.update([collate(train, b) for b in group], epoch)
                if u in points:
                    score = float(evaluator(trainer.params))
                    ev = Evaluation(lr, epoch, trainer.state.step, score)
                    evals.append(ev)
                    log.info("lr %g epoch %d update %d score %.4f", lr, epoch, ev.update, score)
                    if best is None or better(score, best.score):
                        best, best_params = ev, {k: v.clone() for k, v in trainer.params.items()}
    if best is None:
        # zero epochs: the starting point is the only candidate
        score = float(evaluator(start))
        best, best_params = Evaluation(grid[0], 0, 0, score), {k: v.clone() for k, v in start.items()}
        report[grid[0]].append(best)
    if out_dir is not None:
        M.save_checkpoint(out_dir / "checkpoint_best.bin", best_params, model_config, {"best": asdict(best)})
    return FinetuneResult(best_params, best, report)
