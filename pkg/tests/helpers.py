"""Corpora and oracles shared by the training, decoding and acceptance tests."""

import itertools

import numpy as np
import torch

from vibart import corpus, model, noising, synthetic, tokenizer, training


def text_blocks(n_docs=200, vocab_size=300, block_size=64, seed=0):
    docs = synthetic.documents(n_docs, seed=seed, sentences=(2, 4))
    vocab = tokenizer.train_bpe(docs, vocab_size, corpus.TextGranularity.SYLLABLE)
    tokenized = [
        [tokenizer.encode(s, vocab, add_bos_eos=False) for s in corpus.split_sentences(d)] for d in docs
    ]
    return vocab, noising.build_blocks(tokenized, block_size)


def copy_blocks(n=200, vocab_size=40, lengths=(6, 13), seed=0):
    """One random-token sentence per block, so permutation is the identity."""
    rng = np.random.default_rng(seed)
    docs = [[rng.integers(5, vocab_size, rng.integers(*lengths)).tolist()] for _ in range(n)]
    return noising.build_blocks(docs, lengths[1])


def all_sequences(vocab_size, max_length, banned=()):
    """Every output a decoder may produce: ends in </s>, or runs to the cap."""
    allowed = [t for t in range(vocab_size) if t not in banned]
    for n in range(1, max_length + 1):
        for seq in itertools.product(allowed, repeat=n):
            if tokenizer.EOS_ID in seq[:-1]:
                continue
            if n < max_length and seq[-1] != tokenizer.EOS_ID:
                continue
            yield seq


def sequence_score(params, config, source, seq):
    """Summed log-probability of ``seq`` from one teacher-forced forward pass."""
    prefix = torch.tensor([[tokenizer.BOS_ID, *seq[:-1]]])
    logits = model.forward(params, config, torch.tensor([list(source)]), prefix)
    logp = torch.log_softmax(logits.double(), dim=-1)[0]
    return float(sum(logp[t, tok] for t, tok in enumerate(seq)))


def exhaustive_best(params, config, source, max_length, banned=()):
    scored = [(sequence_score(params, config, source, s), s) for s in all_sequences(config.vocab_size, max_length, banned)]
    return max(scored, key=lambda x: x[0])


def teacher_forced_accuracy(params, config, examples):
    src, tgt = training.collate(examples, range(len(examples)))
    with torch.no_grad():
        pred = model.forward(params, config, src, tgt[:, :-1]).argmax(-1)
    gold = tgt[:, 1:]
    keep = gold.ne(model.PAD_ID)
    return float((pred.eq(gold) & keep).sum() / keep.sum())


def train_copy_model(epochs=30):
    blocks = copy_blocks()
    config = model.ModelConfig.preset("tiny", 40, max_positions=32, dropout=0.0)
    noise = noising.NoiseConfig(mask_fraction=0.0, block_size=16)
    train = training.TrainConfig(peak_lr=3e-3, total_epochs=epochs, max_tokens_per_batch=512)
    result = training.pretrain(blocks, config, noise, train)
    return result.params, config, noising.noise_corpus(blocks, noise)


def perturbed(params, name, flat_index, delta):
    q = dict(params)
    t = params[name].clone().reshape(-1)
    t[flat_index] += delta
    q[name] = t.reshape(params[name].shape)
    return q


def finite_difference_check(config, params, batch, n_coords=30, step=1e-3, seed=0):
    _, grads = model.gradients(params, config, batch)
    names = list(params)
    sizes = np.array([params[n].numel() for n in names], dtype=float)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        k = int(rng.integers(params[name].numel()))
        plus = float(model.batch_loss(perturbed(params, name, k, step), config, *batch))
        minus = float(model.batch_loss(perturbed(params, name, k, -step), config, *batch))
        numeric = (plus - minus) / (2 * step)
        analytic = float(grads[name].reshape(-1)[k])
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return worst
