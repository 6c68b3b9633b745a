"""``vibart`` command line: corpus preparation, tokenizer, noising, training,
generation and scoring.

Exit status is 0 on success, 1 on a domain error (message on stderr) and 2 on
a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

import torch

from . import __version__
from . import corpus as C
from . import decoding as D
from . import evaluation as E
from . import model as M
from . import noising as N
from . import tokenizer as T
from . import training as TR

log = logging.getLogger("vibart")

DOMAIN_ERRORS = (
    C.DatasetError,
    T.VocabularyError,
    E.ScoringError,
    ValueError,
    OSError,
    FloatingPointError,
)


# ---------------------------------------------------------------- helpers

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text!r}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


class Run:
    """Collects what a subcommand did and writes its manifest atomically."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.config: dict = {}
        self.inputs: list[str] = []

    def manifest(self, output: str | Path) -> None:
        output = Path(output)
        target = output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")
        flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items() if k != "func"}
        record = {
            "subcommand": self.args.command_name,
            "flags": flags,
            "config": self.config,
            "seed": self.args.seed,
            "inputs": self.inputs,
            "output": str(output),
            "version": __version__,
            "started": self.started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(json.dumps(record, indent=2, ensure_ascii=False, default=str) + "\n", encoding="utf-8")
        os.replace(tmp, target)


def _read_lines(path: str | None) -> list[str]:
    if path is None or path == "-":
        return sys.stdin.read().splitlines()
    return C.load_dataset(path, C.Schema.PLAIN_LINES)


def _write_text(path: str | None, lines: Sequence[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(C.load_dataset(path, C.Schema.PLAIN_LINES), start=1):
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise C.DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return rows


def _load_config(path: str) -> tuple[dict, Path]:
    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8")), p.parent
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON config ({exc.msg})") from None


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _dataclass_from(cls, values: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**values)


def _encode_documents(lines: Sequence[str], vocab: T.Vocabulary) -> list[list[list[int]]]:
    return [[T.encode(s, vocab) for s in C.split_sentences(line)] for line in lines if line.strip()]


def _model_config(choice: dict | str, vocab_size: int) -> M.ModelConfig:
    if isinstance(choice, str):
        return M.ModelConfig.preset(choice, vocab_size)
    choice = dict(choice)
    preset = choice.pop("preset", "tiny")
    return M.ModelConfig.preset(preset, vocab_size, **choice)


def _surface(ids: Sequence[int], vocab: T.Vocabulary) -> str:
    text = T.decode(ids, vocab)
    if vocab.granularity is C.TextGranularity.WORD:
        text = C.detokenize_words(text)
    return text


# ---------------------------------------------------------------- corpus

def cmd_corpus_dedup(args, run: Run) -> int:
    splits = [C.load_dataset(p, C.Schema.SUMMARIZATION) for p in (args.train, args.valid, args.test)]
    run.inputs = [args.train, args.valid, args.test]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = C.deduplicate_splits(*splits)
    counts = {}
    for name, split in zip(("train", "valid", "test"), result):
        C.write_jsonl(out / f"{name}.jsonl", (asdict(ex) for ex in split))
        counts[name] = len(split)
    run.config = {"counts_before": [len(s) for s in splits], "counts_after": counts}
    print(json.dumps(counts))
    run.manifest(out)
    return 0


def cmd_corpus_synth(args, run: Run) -> int:
    lines = [line for line in _read_lines(args.input) if line.strip()]
    run.inputs = [args.input]
    rows = []
    for line in lines:
        pair = C.synthesize_restoration_pair(line)
        rows.append({"input": pair.input, "target": pair.target})
    C.write_jsonl(args.out, rows)
    run.manifest(args.out)
    return 0


# ---------------------------------------------------------------- tokenizer

def cmd_tokenizer_train(args, run: Run) -> int:
    lines = _read_lines(args.input)
    run.inputs = [args.input]
    vocab = T.train_bpe(lines, args.size, args.mode)
    vocab.save(args.out)
    run.config = {"size": len(vocab), "merges": len(vocab.merges), "mode": args.mode}
    run.manifest(args.out)
    return 0


def cmd_tokenizer_encode(args, run: Run) -> int:
    vocab = T.Vocabulary.load(args.vocab)
    lines = _read_lines(args.input)
    out = [" ".join(map(str, T.encode(line, vocab, not args.no_bos_eos))) for line in lines]
    _write_text(args.out, out)
    if args.out not in (None, "-"):
        run.manifest(args.out)
    return 0


def cmd_tokenizer_decode(args, run: Run) -> int:
    vocab = T.Vocabulary.load(args.vocab)
    lines = _read_lines(args.input)
    out = [T.decode([int(x) for x in line.split()], vocab) for line in lines]
    _write_text(args.out, out)
    if args.out not in (None, "-"):
        run.manifest(args.out)
    return 0


# ---------------------------------------------------------------- noising

def cmd_noise(args, run: Run) -> int:
    vocab = T.Vocabulary.load(args.vocab)
    config = N.NoiseConfig(args.poisson_lambda, args.mask_fraction, args.block, args.seed)
    blocks = N.build_blocks(_encode_documents(_read_lines(args.input), vocab), config.block_size)
    examples = N.noise_corpus(blocks, config)
    C.write_jsonl(args.out, ({"source": ex.source, "target": ex.target} for ex in examples))
    run.inputs = [args.vocab, args.input]
    run.config = asdict(config)
    run.manifest(args.out)
    return 0


# ---------------------------------------------------------------- training

def cmd_pretrain(args, run: Run) -> int:
    cfg, base = _load_config(args.config)
    vocab = T.Vocabulary.load(_resolve(base, cfg["vocab"]))
    lines = _read_lines(str(_resolve(base, cfg["corpus"])))
    seed = args.seed if args.seed_given else cfg.get("seed", args.seed)
    noise_cfg = dict(cfg.get("noise", {}))
    noise_cfg["seed"] = seed
    noise = _dataclass_from(N.NoiseConfig, noise_cfg, "noise")
    train_cfg = dict(cfg.get("train", {}))
    train_cfg["seed"] = seed
    if args.epochs is not None:
        train_cfg["total_epochs"] = args.epochs
    if args.lr is not None:
        train_cfg["peak_lr"] = args.lr
    train = _dataclass_from(TR.TrainConfig, train_cfg, "train")
    model_cfg = _model_config(cfg.get("model", "tiny"), len(vocab))
    out = Path(args.out or _resolve(base, cfg.get("out", "pretrain_out")))
    blocks = N.build_blocks(_encode_documents(lines, vocab), noise.block_size)
    if not blocks:
        raise ValueError("pre-training corpus is empty")
    result = TR.pretrain(blocks, model_cfg, noise, train, out_dir=out)
    if train.total_epochs == 0:
        out.mkdir(parents=True, exist_ok=True)
        M.save_checkpoint(out / "checkpoint_last.bin", result.params, model_cfg, {"epoch": 0})
    run.inputs = [str(_resolve(base, cfg["vocab"])), str(_resolve(base, cfg["corpus"]))]
    run.config = {"model": asdict(model_cfg), "noise": asdict(noise), "train": asdict(train), "epoch_losses": result.epoch_losses}
    run.manifest(out)
    return 0


def _task_pairs(rows, task: str, vocab: T.Vocabulary) -> tuple[list[TR.Pair], list[str], list[str]]:
    pairs, sources, refs = [], [], []
    for r in rows:
        if task == "summarization":
            src, tgt = r.article, r.abstract
        else:
            src, tgt = r.input, r.target
        pairs.append(TR.Pair(T.encode(src, vocab, True), T.encode(tgt, vocab, True)))
        sources.append(src)
        refs.append(C.detokenize_words(tgt))
    return pairs, sources, refs


def _generate_all(params, config, vocab, sources_ids, beam: int, max_len: int | None) -> list[str]:
    out = []
    for ids in sources_ids:
        limit = max_len if max_len is not None else len(ids) + 50
        hyp = D.beam_search(params, config, ids, beam_size=beam, max_length=limit)
        out.append(_surface(hyp.ids, vocab))
    return out


def cmd_finetune(args, run: Run) -> int:
    cfg, base = _load_config(args.config)
    vocab = T.Vocabulary.load(_resolve(base, cfg["vocab"]))
    task = cfg.get("task", "summarization")
    if task not in ("summarization", "restoration"):
        raise ValueError(f"unknown task {task!r}")
    schema = C.Schema.SUMMARIZATION if task == "summarization" else C.Schema.RESTORATION
    train_rows = C.load_dataset(_resolve(base, cfg["train"]), schema)
    valid_rows = C.load_dataset(_resolve(base, cfg["valid"]), schema)
    train_pairs, _, _ = _task_pairs(train_rows, task, vocab)
    valid_pairs, _, valid_refs = _task_pairs(valid_rows, task, vocab)

    params, model_cfg, _ = M.load_checkpoint(args.init)
    if model_cfg.vocab_size != len(vocab):
        raise ValueError(f"checkpoint vocab size {model_cfg.vocab_size} != vocabulary size {len(vocab)}")
    model_cfg = M.ModelConfig(**{**asdict(model_cfg), **cfg.get("model", {})})
    seed = args.seed if args.seed_given else cfg.get("seed", args.seed)
    train_cfg = dict(cfg.get("train_config", {}))
    train_cfg.setdefault("total_epochs", 20)
    train_cfg["seed"] = seed
    if args.epochs is not None:
        train_cfg["total_epochs"] = args.epochs
    train = _dataclass_from(TR.TrainConfig, train_cfg, "train_config")
    grid = cfg.get("grid", [1e-5, 2e-5, 3e-5, 5e-5])
    beam = int(cfg.get("beam", 4))
    max_len = cfg.get("max_len", 256 if task == "summarization" else None)
    eval_cfg = M.ModelConfig(**{**asdict(model_cfg), "dropout": 0.0})

    def rouge_l_on_valid(p):
        hyps = _generate_all(p, eval_cfg, vocab, [v.source for v in valid_pairs], beam, max_len)
        return E.corpus_rouge(hyps, valid_refs).rougeL.f1

    evaluator = rouge_l_on_valid if args.select == "rougeL" else None

    out = Path(args.out or _resolve(base, cfg.get("out", "finetune_out")))
    result = TR.finetune(train_pairs, valid_pairs, params, model_cfg, train, grid, args.select, evaluator, out)
    (out / "report.json").write_text(json.dumps(result.report_json(), indent=2) + "\n", encoding="utf-8")
    run.inputs = [args.init, str(_resolve(base, cfg["train"])), str(_resolve(base, cfg["valid"]))]
    run.config = {"task": task, "grid": grid, "select": args.select, "train": asdict(train), "best": asdict(result.best)}
    run.manifest(out)
    return 0


# ---------------------------------------------------------------- generation

_SOURCE_FIELDS = ("article", "input", "source", "text")


def cmd_generate(args, run: Run) -> int:
    params, config, _ = M.load_checkpoint(args.ckpt)
    config = M.ModelConfig(**{**asdict(config), "dropout": 0.0})
    vocab = T.Vocabulary.load(args.vocab)
    if config.vocab_size != len(vocab):
        raise ValueError(f"checkpoint vocab size {config.vocab_size} != vocabulary size {len(vocab)}")
    rows = _read_jsonl(args.input)
    out_rows = []
    for i, row in enumerate(rows):
        field = next((f for f in _SOURCE_FIELDS if f in row), None)
        if field is None:
            raise C.DatasetError(f"{args.input}:{i + 1}: no source field (one of {_SOURCE_FIELDS})")
        ids = T.encode(row[field], vocab, True)[: config.max_positions]
        limit = args.max_len if args.max_len is not None else len(ids) + 50
        if args.beam == 1:
            hyp = D.greedy_decode(params, config, ids, limit)
        else:
            hyp = D.beam_search(params, config, ids, args.beam, limit, args.length_penalty)
        out_rows.append({"guid": str(row.get("guid", i)), "output": _surface(hyp.ids, vocab)})
    C.write_jsonl(args.out, out_rows)
    run.inputs = [args.ckpt, args.vocab, args.input]
    run.config = {"beam": args.beam, "max_len": args.max_len, "length_penalty": args.length_penalty}
    run.manifest(args.out)
    return 0


# ---------------------------------------------------------------- scoring

_HYP_FIELDS = ("output", "target", "abstract", "text")
_REF_FIELDS = ("abstract", "target", "output", "text")


def _read_texts(path: str, prefer: Sequence[str]) -> list[str]:
    if str(path).endswith(".jsonl"):
        rows = _read_jsonl(path)
        out = []
        for i, row in enumerate(rows):
            field = next((f for f in prefer if f in row), None)
            if field is None:
                raise C.DatasetError(f"{path}:{i + 1}: no text field (one of {tuple(prefer)})")
            out.append(row[field])
        return out
    return C.load_dataset(path, C.Schema.PLAIN_LINES)


def _emit(args, run: Run, result: dict) -> None:
    text = json.dumps(result, indent=2, ensure_ascii=False)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        run.manifest(args.out)


def cmd_score_rouge(args, run: Run) -> int:
    hyps = _read_texts(args.hyp, _HYP_FIELDS)
    refs = _read_texts(args.ref, _REF_FIELDS)
    run.inputs = [args.hyp, args.ref]
    _emit(args, run, E.corpus_rouge(hyps, refs, args.variant).as_json())
    return 0


def cmd_score_restoration(args, run: Run) -> int:
    hyps = _read_texts(args.hyp, _HYP_FIELDS)
    refs = _read_texts(args.ref, ("target",) + _REF_FIELDS)
    run.inputs = [args.hyp, args.ref]
    _emit(args, run, E.restoration_report(hyps, refs).as_json())
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_non_negative_int, default=None, help="root random seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=None, help="intra-op threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vibart", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=argparse.ArgumentParser)

    def leaf(group, name, func, help_text):
        p = group.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    corpus = sub.add_parser("corpus", help="dataset preparation").add_subparsers(
        dest="corpus_command", required=True, metavar="ACTION", parser_class=argparse.ArgumentParser
    )
    p = leaf(corpus, "dedup", cmd_corpus_dedup, "remove duplicate articles within and across splits")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p = leaf(corpus, "synth-restoration", cmd_corpus_synth, "build lowercase/unpunctuated restoration pairs")
    p.add_argument("--in", dest="input", required=True, help="plain text, one punctuated text per line")
    p.add_argument("--out", required=True)

    tok = sub.add_parser("tokenizer", help="BPE vocabulary").add_subparsers(
        dest="tokenizer_command", required=True, metavar="ACTION", parser_class=argparse.ArgumentParser
    )
    p = leaf(tok, "train", cmd_tokenizer_train, "learn a BPE vocabulary")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--size", type=_positive_int, required=True)
    p.add_argument("--mode", choices=[g.value for g in C.TextGranularity], default="syllable")
    p.add_argument("--out", required=True)
    p = leaf(tok, "encode", cmd_tokenizer_encode, "text lines to id lines")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--no-bos-eos", action="store_true")
    p = leaf(tok, "decode", cmd_tokenizer_decode, "id lines to text lines")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="input")
    p.add_argument("--out")

    p = leaf(sub, "noise", cmd_noise, "build denoising examples from a plain-lines corpus")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--lambda", dest="poisson_lambda", type=_positive_float, default=3.5)
    p.add_argument("--mask-fraction", type=_fraction, default=0.3)
    p.add_argument("--block", type=_positive_int, default=512)
    p.add_argument("--out", required=True)

    p = leaf(sub, "pretrain", cmd_pretrain, "denoising pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--epochs", type=_non_negative_int)
    p.add_argument("--lr", type=_positive_float)

    p = leaf(sub, "finetune", cmd_finetune, "fine-tune with a learning-rate grid")
    p.add_argument("--config", required=True)
    p.add_argument("--init", required=True, help="starting checkpoint")
    p.add_argument("--select", choices=[s.value for s in TR.Selection], default="rougeL")
    p.add_argument("--out")
    p.add_argument("--epochs", type=_non_negative_int)

    p = leaf(sub, "generate", cmd_generate, "decode a JSONL file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--beam", type=_positive_int, default=4)
    p.add_argument("--max-len", type=_positive_int)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--out", required=True)

    score = sub.add_parser("score", help="metrics").add_subparsers(
        dest="score_command", required=True, metavar="METRIC", parser_class=argparse.ArgumentParser
    )
    p = leaf(score, "rouge", cmd_score_rouge, "ROUGE-1/2/L")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--variant", choices=[v.value for v in E.RougeLVariant], default=E.RougeLVariant.SUMMARY.value)
    p.add_argument("--out")
    p = leaf(score, "restoration", cmd_score_restoration, "capitalization and punctuation F1")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out")
    return parser


def _command_name(args) -> str:
    parts = [args.command]
    for attr in ("corpus_command", "tokenizer_command", "score_command"):
        if getattr(args, attr, None):
            parts.append(getattr(args, attr))
    return " ".join(parts)


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    args.command_name = _command_name(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(args.threads or 1)
    run = Run(args)
    try:
        return args.func(args, run)
    except KeyError as exc:
        print(f"vibart {args.command_name}: error: missing key {exc}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        print(f"vibart {args.command_name}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
