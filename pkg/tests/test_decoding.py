import pytest
import torch

from vibart import decoding as D, model as M
from vibart.tokenizer import BOS_ID, EOS_ID, MASK_ID, PAD_ID
from helpers import all_sequences, exhaustive_best, sequence_score, train_copy_model


def small_model(vocab, seed, sharpen=1.0):
    config = M.ModelConfig.preset("tiny", vocab, dropout=0.0, max_positions=16)
    params = M.init_params(config, seed=seed)
    params["embed_tokens.weight"] = params["embed_tokens.weight"] * sharpen
    return config, params


def random_source(vocab, seed, n=6):
    g = torch.Generator().manual_seed(seed)
    return [BOS_ID, *torch.randint(3, vocab, (n,), generator=g).tolist(), EOS_ID]


def test_beam_one_is_greedy():
    config, params = small_model(30, 0, sharpen=20.0)
    for i in range(100):
        src = random_source(30, i)
        g = D.greedy_decode(params, config, src, 12)
        b = D.beam_search(params, config, src, beam_size=1, max_length=12, length_penalty=0.0)
        assert b.ids == g.ids
        assert abs(b.score - g.score) < 1e-9


@pytest.mark.parametrize("sharpen", [1.0, 30.0])
def test_beam_matches_exhaustive_enumeration(sharpen):
    for seed in range(5):
        config, params = small_model(5, seed, sharpen)
        src = [BOS_ID, 3, 4, 3, EOS_ID]
        best_score, best_seq = exhaustive_best(params, config, src, 3)
        hyp = D.beam_search(params, config, src, beam_size=125, max_length=3, length_penalty=0.0, banned_ids=())
        assert hyp.generated == best_seq
        assert abs(hyp.score - best_score) < 1e-9


def test_enumeration_with_default_bans():
    config, params = small_model(8, 3, 30.0)
    src = [BOS_ID, 5, 6, 7, EOS_ID]
    best_score, best_seq = exhaustive_best(params, config, src, 3, D.DEFAULT_BANNED)
    hyp = D.beam_search(params, config, src, beam_size=125, max_length=3, length_penalty=0.0)
    assert hyp.generated == best_seq


def test_oracle_sequence_count():
    # length-3 sequences without an early </s>, plus the shorter ones that end in </s>
    assert len(list(all_sequences(5, 3))) == 4 * 4 * 5 + 4 + 1


def test_length_penalty_selects_normalized_best():
    config, params = small_model(6, 2, 30.0)
    src = [BOS_ID, 3, 4, 5, EOS_ID]
    for penalty in (0.5, 1.0, 2.0):
        scored = [(sequence_score(params, config, src, s), s) for s in all_sequences(6, 3)]
        best = max(scored, key=lambda x: x[0] / len(x[1]) ** penalty)[1]
        assert D.beam_search(params, config, src, 216, 3, penalty, banned_ids=()).generated == best


def test_beam_dominates_greedy_and_is_monotone():
    # empirical on enumerable instances, not a theorem for beam search in general
    for seed in range(10):
        config, params = small_model(6, seed, 30.0)
        src = random_source(6, seed, 4)
        greedy = D.greedy_decode(params, config, src, 4, banned_ids=())
        previous = -float("inf")
        for beam in range(1, 8):
            hyp = D.beam_search(params, config, src, beam, 4, 0.0, banned_ids=())
            assert hyp.score >= greedy.score - 1e-9
            assert hyp.score >= previous - 1e-9
            previous = hyp.score


def test_deterministic():
    config, params = small_model(30, 1, 10.0)
    src = random_source(30, 7)
    runs = [D.beam_search(params, config, src, 4, 10) for _ in range(2)]
    assert runs[0] == runs[1]


def test_hypothesis_invariants():
    config, params = small_model(30, 4, 10.0)
    for i in range(20):
        src = random_source(30, i)
        for hyp in (D.greedy_decode(params, config, src, 8), D.beam_search(params, config, src, 4, 8)):
            assert hyp.ids[0] == BOS_ID and hyp.finished
            assert not {PAD_ID, MASK_ID, BOS_ID} & set(hyp.generated)
            assert hyp.generated[-1] == EOS_ID or len(hyp.generated) == 8
            assert EOS_ID not in hyp.generated[:-1]
            assert hyp.score <= 0


def test_max_length_one():
    config, params = small_model(30, 0)
    assert len(D.greedy_decode(params, config, [BOS_ID, 5, EOS_ID], 1).generated) == 1
    assert len(D.beam_search(params, config, [BOS_ID, 5, EOS_ID], 4, 1).generated) == 1


def test_argument_errors():
    config, params = small_model(30, 0)
    with pytest.raises(ValueError):
        D.beam_search(params, config, [BOS_ID, EOS_ID], 0, 5)
    with pytest.raises(ValueError):
        D.greedy_decode(params, config, [BOS_ID, EOS_ID], 0)


def test_ties_pick_lowest_id():
    config, params = small_model(10, 0)
    # zeroing the output embeddings and biases gives identical logits everywhere
    params = {k: torch.zeros_like(v) if k.startswith("embed_tokens") else v for k, v in params.items()}
    assert D.greedy_decode(params, config, [BOS_ID, 5, EOS_ID], 3).generated == (EOS_ID,)
    assert D.greedy_decode(params, config, [BOS_ID, 5, EOS_ID], 3, banned_ids=()).generated == (BOS_ID,) * 3
    assert D.beam_search(params, config, [BOS_ID, 5, EOS_ID], 3, 3).generated == (EOS_ID,)


def test_copy_model_decodes_its_source():
    params, config, examples = train_copy_model()
    for e in examples[:20]:
        out = D.greedy_decode(params, config, e.source, len(e.source) + 5)
        assert list(out.ids) == e.target
