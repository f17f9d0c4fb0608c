import numpy as np
import pytest

from simpledyg.experiment import DataConfig, prepare
from simpledyg.generate import (
    GenerationError,
    RankedPrediction,
    first_position_ranking,
    format_predictions,
    generate,
    generate_batch,
    multi_step,
    multi_step_batch,
    predict_step,
    predict_steps,
    stop_ids_for,
)
from simpledyg.graph import ConfigError
from simpledyg.model import ModelConfig, forward, init_model
from simpledyg.synth import SynthSpec, gen_cyclic
from simpledyg.tokens import CANONICAL, TokenVariant, encode_instance
from simpledyg.train import TrainConfig, make_instances, train, training_sequences


def greedy_reference(params, prefix, cap, stops):
    ids = list(prefix)
    out = []
    while len(out) < cap and len(ids) < params.config.context_length:
        tok = int(np.argmax(forward(ids, params)[-1]))
        out.append(tok)
        ids.append(tok)
        if tok in stops:
            return out, True
    return out, False


@pytest.fixture(scope="module")
def untrained():
    return init_model(ModelConfig(vocab_size=17, layers=2, heads=2, d_model=16, context_length=40, seed=4, init_std=0.5))


@pytest.fixture(scope="module")
def cyclic():
    sg = gen_cyclic(SynthSpec(num_egos=4, neighbors=2, period=2, T=8, seed=0, extra_steps=3))
    prep = prepare(sg.graph, DataConfig(T=8, extra_steps=3))
    seqs = training_sequences(prep.index, prep.vocab, prep.train_steps, CANONICAL)
    instances = make_instances(seqs, prep.vocab, 1024)
    cfg = ModelConfig(vocab_size=len(prep.vocab), layers=2, heads=2, d_model=32, context_length=64, seed=0)
    res = train(instances, init_model(cfg), TrainConfig(lr=3e-3, max_epochs=120, batch_size=8, warmup_steps=20),
                prep.vocab.pad_id)
    return sg, prep, res.params


@pytest.mark.parametrize("cap", [1, 3, 20])
def test_cached_decoding_matches_full_recompute(untrained, cap):
    for prefix in ([1, 2, 3], [5], [7, 7, 0, 16, 3, 2]):
        got = generate(untrained, prefix, cap, [4])
        assert got == greedy_reference(untrained, prefix, cap, {4})


def test_batch_rows_match_single_generation(untrained):
    prefixes = [[1, 2, 3], [9], [2, 2, 2, 2, 2, 2, 2]]
    batch = generate_batch(untrained, prefixes, 10, [4, 5])
    for pre, (toks, probs, halted) in zip(prefixes, batch):
        assert (toks, halted) == generate(untrained, pre, 10, [4, 5])
        assert len(probs) == len(toks) and all(0.0 < p <= 1.0 for p in probs)


def test_cap_one(untrained):
    toks, halted = generate(untrained, [1, 2], 1, [4])
    assert len(toks) == 1 and halted == (toks[0] == 4)


def test_stops_at_context_limit(untrained):
    toks, halted = generate(untrained, list(range(1, 4)) * 12, 64, [])
    assert len(toks) == 40 - 36 and not halted


def test_rejects_bad_requests(untrained):
    with pytest.raises(GenerationError):
        generate(untrained, [1] * 40, 5, [4])
    with pytest.raises(GenerationError):
        generate(untrained, [1], 0, [4])
    with pytest.raises(GenerationError):
        generate(untrained, [], 5, [4])


def test_golden_generation(untrained):
    assert generate(untrained, [3, 1, 4, 1, 5], 8, [0]) == ([1, 1, 13, 13, 13, 13, 13, 13], False)


def test_stop_ids_follow_variant(cyclic):
    _, prep, _ = cyclic
    v = prep.vocab
    assert stop_ids_for(v, CANONICAL) == [v["<|endoftext|>"], v["<|endofpred|>"]]
    assert stop_ids_for(v, TokenVariant.parse("same", "distinct"))[1] == v["<|endofhist|>"]
    assert stop_ids_for(v, TokenVariant.parse("none", "distinct")) == [v["<|endoftext|>"]]


def test_trained_model_reproduces_planted_neighbors(cyclic):
    sg, prep, params = cyclic
    for ego in sg.egos:
        pred = predict_step(params, prep.vocab, prep.index, ego, 6)
        assert pred.halted
        assert pred.nodes[0] in sg.truth[(ego, 6)]
        assert set(pred.nodes) == sg.truth[(ego, 6)]


def test_memorized_instance_is_reproduced(cyclic):
    sg, prep, params = cyclic
    seq = encode_instance(prep.vocab, prep.index.history("u1", 5), "u1", 5)
    toks, halted = generate(params, seq.prefix_ids(), 64, stop_ids_for(prep.vocab, CANONICAL))
    assert halted
    assert tuple(toks) == seq.target_ids[2:]


def test_untrained_prediction_is_well_formed(untrained, cyclic):
    _, prep, params = cyclic
    cfg = params.config
    fresh = init_model(ModelConfig(vocab_size=cfg.vocab_size, layers=1, heads=2, d_model=8, context_length=64))
    pred = predict_step(fresh, prep.vocab, prep.index, "u0", 8, cap=5)
    assert len(pred.nodes) <= 5 and len(set(pred.nodes)) == len(pred.nodes)
    assert all(prep.vocab.is_node(prep.vocab[n]) for n in pred.nodes)
    assert len(pred.scores) == len(pred.nodes)


def test_unseen_ego_still_gets_a_prediction(cyclic):
    _, prep, params = cyclic
    # neighbor node with an empty history at step 1 only: the inductive path is the same code
    pred = predict_step(params, prep.vocab, prep.index, "u3n1", 2)
    assert isinstance(pred, RankedPrediction) and pred.ego == "u3n1"


def test_single_step_rollout_equals_predict_step(cyclic):
    sg, prep, params = cyclic
    for ego in sg.egos:
        (roll,) = multi_step(params, prep.vocab, prep.index, ego, 8, 1)
        assert roll == predict_step(params, prep.vocab, prep.index, ego, 8)


def test_rollout_conditions_on_generated_nodes(cyclic, monkeypatch):
    sg, prep, params = cyclic
    from simpledyg import generate as gen

    seen = []
    original = gen.generate_batch

    def spy(p, prefixes, cap, stops):
        seen.append([list(x) for x in prefixes])
        return original(p, prefixes, cap, stops)

    monkeypatch.setattr(gen, "generate_batch", spy)
    rolls = multi_step_batch(params, prep.vocab, prep.index, ["u0"], 8, 3)
    v = prep.vocab
    first = rolls[0][0]
    second_prefix = v.decode(seen[1][0])
    cut = second_prefix.index("<|time8|>")
    assert second_prefix[cut + 1: cut + 1 + len(first.nodes)] == first.nodes
    assert second_prefix[-2:] == ["<|pred|>", "<|time9|>"]
    assert [r.step for r in rolls[0]] == [8, 9, 10]


def test_rollout_beyond_reserved_tokens(cyclic):
    _, prep, params = cyclic
    with pytest.raises(ConfigError):
        multi_step(params, prep.vocab, prep.index, "u0", 9, 4)


def test_first_position_ranking_is_sorted(cyclic):
    _, prep, params = cyclic
    seq = encode_instance(prep.vocab, prep.index.history("u0", 5), "u0", 6)
    ((nodes, scores),) = first_position_ranking(params, prep.vocab, [seq.prefix_ids()], k=5)
    assert scores == sorted(scores, reverse=True) and len(nodes) == 5
    preds = predict_steps(params, prep.vocab, prep.index, ["u0"], 6, rank="first_position")
    assert preds[0].nodes[:5] == nodes


def test_prediction_dump_format():
    p = RankedPrediction("a", 3, ["b", "c"], [0.5, 0.25], True)
    assert format_predictions([p]) == "a\t3\tb:0.5,c:0.25\t1\n"
