"""Tests for the multi-input encoder-decoder, training loop, and checkpoints."""

import dataclasses
import struct

import numpy as np
import pytest

from lemname.chop import ChopConfig
from lemname.corpus import (
    BOS_ID,
    DatasetSplit,
    generate_synthetic_corpus,
    load_directory,
    ordered_records,
)
from lemname.model import (
    ALL_STREAMS,
    INPUT_CONFIGS,
    CorruptCheckpoint,
    EmptyInput,
    EmptyTrainingSet,
    LemmaNameModel,
    ModelConfig,
    Suggestion,
    TrainingConfig,
    VersionMismatch,
    load_checkpoint,
    save_checkpoint,
    train,
)
from lemname.subtok import DEFAULT_LEXICON

from gradcheck import finite_difference_check


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    generate_synthetic_corpus(root, seed=7, n_docs=5, lemmas_per_doc=4)
    documents = load_directory(root)
    # 5 documents floor to an empty validation slice, so split by hand.
    doc_ids = sorted(documents)
    split = DatasetSplit(train=tuple(doc_ids[:3]), validation=(doc_ids[3],), test=(doc_ids[4],))
    return documents, split


def small_config(**overrides):
    base = dict(
        inputs=INPUT_CONFIGS["stmt+ckt"],
        embed_dim=8,
        hidden_dim=12,
        max_input_len=96,
        max_output_len=8,
        beam_width=3,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def trained(tiny_corpus):
    documents, split = tiny_corpus
    config = small_config(embed_dim=16, hidden_dim=24)
    hyper = TrainingConfig(epochs=70, batch_size=8, seed=0, learning_rate=5e-3)
    checkpoint, metrics = train(documents, split, config, hyper)
    return checkpoint, metrics, documents, split


# ----------------------------------------------------------- config validation


def test_config_rejects_duplicate_streams():
    with pytest.raises(ValueError):
        ModelConfig(inputs=("statement", "statement"))


def test_config_rejects_unknown_stream():
    with pytest.raises(ValueError):
        ModelConfig(inputs=("statement", "proof_script"))


def test_config_rejects_empty_inputs():
    with pytest.raises(ValueError):
        ModelConfig(inputs=())


def test_config_rejects_copy_without_attention():
    with pytest.raises(ValueError):
        ModelConfig(use_attention=False, use_copy=True)


def test_config_allows_plain_decoder():
    config = ModelConfig(use_attention=False, use_copy=False)
    assert not config.use_attention


def test_config_rejects_odd_hidden_for_bidirectional():
    with pytest.raises(ValueError):
        ModelConfig(hidden_dim=13, bidirectional=True)


@pytest.mark.parametrize("field_name", ["embed_dim", "hidden_dim", "max_input_len", "max_output_len", "beam_width"])
def test_config_rejects_nonpositive_dims(field_name):
    with pytest.raises(ValueError):
        ModelConfig(**{field_name: 0})


def test_config_round_trips_through_dict():
    config = small_config(bidirectional=False, use_copy=False, use_attention=False)
    assert ModelConfig.from_dict(config.to_dict()) == config


def test_input_configs_cover_expected_combinations():
    assert set(INPUT_CONFIGS) == {"stmt", "stmt+cst", "stmt+ckt", "cst+ckt", "stmt+cst+ckt"}
    for streams in INPUT_CONFIGS.values():
        assert all(s in ALL_STREAMS for s in streams)


def test_training_config_rejects_negative_epochs():
    with pytest.raises(ValueError):
        TrainingConfig(epochs=-1)


# ------------------------------------------------------------------- training


def test_training_loss_decreases(tiny_corpus):
    documents, split = tiny_corpus
    hyper = TrainingConfig(epochs=5, batch_size=8, seed=0, learning_rate=3e-3)
    _, metrics = train(documents, split, small_config(), hyper)
    losses = [m.train_loss for m in metrics]
    assert losses[-1] < losses[0]
    increases = sum(b > a for a, b in zip(losses, losses[1:]))
    assert increases <= 1
    assert [m.epoch for m in metrics] == [1, 2, 3, 4, 5]


def test_training_is_deterministic(tiny_corpus):
    documents, split = tiny_corpus
    hyper = TrainingConfig(epochs=2, batch_size=8, seed=3)
    first, _ = train(documents, split, small_config(), hyper)
    second, _ = train(documents, split, small_config(), hyper)
    assert sorted(first.parameter_state) == sorted(second.parameter_state)
    for name, value in first.parameter_state.items():
        assert np.array_equal(value, second.parameter_state[name])


def test_training_seed_changes_parameters(tiny_corpus):
    documents, split = tiny_corpus
    first, _ = train(documents, split, small_config(), TrainingConfig(epochs=1, seed=0))
    second, _ = train(documents, split, small_config(), TrainingConfig(epochs=1, seed=1))
    assert any(
        not np.array_equal(value, second.parameter_state[name])
        for name, value in first.parameter_state.items()
    )


def test_zero_epochs_returns_initial_parameters(tiny_corpus):
    documents, split = tiny_corpus
    config = small_config()
    checkpoint, metrics = train(documents, split, config, TrainingConfig(epochs=0, seed=5))
    assert metrics == []
    fresh = LemmaNameModel(config, checkpoint.chop_config, checkpoint.lexicon, checkpoint.vocabularies, seed=5)
    for name, value in checkpoint.parameter_state.items():
        assert np.array_equal(value, fresh.parameters[name].data)


def test_empty_training_set_raises(tiny_corpus):
    documents, _ = tiny_corpus
    doc_ids = sorted(documents)
    empty_train = DatasetSplit(train=(), validation=(doc_ids[0],), test=(doc_ids[1],))
    with pytest.raises(EmptyTrainingSet):
        train(documents, empty_train, small_config(), TrainingConfig(epochs=1))


def test_loss_requires_records(trained):
    checkpoint, _, _, _ = trained
    model = checkpoint.to_model()
    with pytest.raises(EmptyTrainingSet):
        model.loss([])


# ----------------------------------------------------------------- model core


def test_model_requires_all_vocabularies(trained):
    checkpoint, _, _, _ = trained
    partial = dict(checkpoint.vocabularies)
    del partial["output"]
    with pytest.raises(ValueError):
        LemmaNameModel(checkpoint.config, checkpoint.chop_config, checkpoint.lexicon, partial)


def test_stream_texts_respects_max_input_len(trained):
    checkpoint, _, documents, split = trained
    record = ordered_records(documents, split.train)[0]
    config = dataclasses.replace(checkpoint.config, max_input_len=5)
    model = LemmaNameModel(config, checkpoint.chop_config, checkpoint.lexicon, checkpoint.vocabularies)
    texts = model.stream_texts(record)
    assert all(len(seq) <= 5 for seq in texts.values())


def test_empty_stream_raises(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    record = ordered_records(documents, split.train)[0]
    gutted = dataclasses.replace(record, statement_tokens=())
    with pytest.raises(EmptyInput) as err:
        model.stream_texts(gutted)
    assert err.value.stream == "statement"


def test_loss_is_finite_scalar(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    records = ordered_records(documents, split.train)[:4]
    loss = model.loss(records)
    assert loss.shape == ()
    assert np.isfinite(loss.data)
    assert float(loss.data) >= 0.0


def test_statement_only_model_ignores_trees(tiny_corpus):
    documents, split = tiny_corpus
    hyper = TrainingConfig(epochs=1, batch_size=8, seed=0)
    config = small_config(inputs=INPUT_CONFIGS["stmt"])
    checkpoint, _ = train(documents, split, config, hyper)
    model = checkpoint.to_model()
    record = ordered_records(documents, split.train)[0]
    mangled = dataclasses.replace(record, kernel_tree=("Mangled",), syntax_tree=("Other",))
    assert float(model.loss([record]).data) == float(model.loss([mangled]).data)
    assert model.suggest(record, k=2) == model.suggest(mangled, k=2)


def test_batch_padding_matches_single_encoding(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    records = ordered_records(documents, split.train)
    lengths = {len(model.stream_texts(r)["statement"]) for r in records[:4]}
    assert len(lengths) > 1, "fixture should mix statement lengths"
    batched = model._encode_batch(records[:4])
    for i, record in enumerate(records[:4]):
        single = model._encode_batch([record])
        for stream_index in range(len(model.config.inputs)):
            np.testing.assert_allclose(
                batched.finals[stream_index].data[i],
                single.finals[stream_index].data[0],
                atol=1e-12,
            )


# ------------------------------------------------------------------- decoding


def test_decode_distribution_sums_to_one(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    for record in ordered_records(documents, split.validation)[:3]:
        source = model.encode(record)
        state = model.combine(source)
        previous = BOS_ID
        for _ in range(4):
            state, dist = model.decode_step(state, previous, source)
            assert dist.probabilities.shape == (len(dist.texts),)
            assert np.all(dist.probabilities >= 0.0)
            assert abs(dist.probabilities.sum() - 1.0) < 1e-10
            previous = int(np.argmax(dist.probabilities[: len(model.vocabularies["output"])]))


def test_extended_texts_cover_out_of_vocabulary_sources(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    record = ordered_records(documents, split.test)[0]
    source = model.encode(record)
    out_vocab = model.vocabularies["output"]
    base = len(out_vocab)
    assert source.oov_texts == tuple(
        dict.fromkeys(t for t in source.source_texts if t not in out_vocab)
    )
    for position, text in enumerate(source.source_texts):
        ext_id = source.source_ext_ids[position]
        if text in out_vocab:
            assert out_vocab.decode(int(ext_id)) == text
        else:
            assert source.oov_texts[ext_id - base] == text


def test_beam_width_one_matches_greedy(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    records = ordered_records(documents, split.train)[:6]
    greedy = model.greedy_names(records)
    for record, expected in zip(records, greedy):
        suggestions = model.suggest(record, k=1)
        assert suggestions, "beam search returned nothing"
        assert suggestions[0].name == expected


def test_suggestions_are_ranked_and_unique(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    for record in ordered_records(documents, split.validation):
        suggestions = model.suggest(record, k=4)
        assert 1 <= len(suggestions) <= 4
        names = [s.name for s in suggestions]
        assert len(set(names)) == len(names)
        scores = [s.score for s in suggestions]
        assert scores == sorted(scores, reverse=True)
        for suggestion in suggestions:
            assert isinstance(suggestion, Suggestion)
            assert "".join(suggestion.sub_tokens) == suggestion.name
            assert suggestion.score <= 0.0


def test_suggest_rejects_nonpositive_k(trained):
    checkpoint, _, documents, split = trained
    model = checkpoint.to_model()
    record = ordered_records(documents, split.train)[0]
    with pytest.raises(ValueError):
        model.suggest(record, k=0)


def test_greedy_names_empty_input(trained):
    checkpoint, _, _, _ = trained
    assert checkpoint.to_model().greedy_names([]) == []


def test_trained_model_overfits_training_set(trained):
    checkpoint, metrics, documents, split = trained
    model = checkpoint.to_model()
    records = ordered_records(documents, split.train)
    names = model.greedy_names(records)
    top1 = sum(n == r.name for n, r in zip(names, records)) / len(records)
    assert top1 >= 0.75
    assert metrics[-1].train_loss < metrics[0].train_loss / 2


# ------------------------------------------------------------------ gradcheck


def test_end_to_end_gradients(tiny_corpus):
    documents, split = tiny_corpus
    records = ordered_records(documents, split.train)[:2]
    config = small_config(embed_dim=6, hidden_dim=8)
    hyper = TrainingConfig(epochs=0, seed=2)
    checkpoint, _ = train(documents, split, config, hyper)
    model = checkpoint.to_model()
    rng = np.random.default_rng(11)
    finite_difference_check(model.parameters, lambda: model.loss(records), rng, n_coords=15)


def test_end_to_end_gradients_without_copy(tiny_corpus):
    documents, split = tiny_corpus
    records = ordered_records(documents, split.train)[:2]
    config = small_config(embed_dim=6, hidden_dim=8, use_copy=False, use_attention=False, bidirectional=False)
    checkpoint, _ = train(documents, split, config, TrainingConfig(epochs=0, seed=2))
    model = checkpoint.to_model()
    rng = np.random.default_rng(13)
    finite_difference_check(model.parameters, lambda: model.loss(records), rng, n_coords=12)


# ----------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_is_byte_identical(trained, tmp_path):
    checkpoint, _, _, _ = trained
    first = tmp_path / "first.ckpt"
    second = tmp_path / "second.ckpt"
    save_checkpoint(first, checkpoint)
    save_checkpoint(second, load_checkpoint(first))
    assert first.read_bytes() == second.read_bytes()


def test_checkpoint_restores_model_behaviour(trained, tmp_path):
    checkpoint, _, documents, split = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    restored = load_checkpoint(path).to_model()
    original = checkpoint.to_model()
    records = ordered_records(documents, split.validation)[:3]
    assert restored.greedy_names(records) == original.greedy_names(records)
    assert float(restored.loss(records).data) == float(original.loss(records).data)
    assert restored.vocabularies == checkpoint.vocabularies
    assert restored.config == checkpoint.config


def test_checkpoint_bad_magic(trained, tmp_path):
    checkpoint, _, _, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(trained, tmp_path):
    checkpoint, _, _, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch) as err:
        load_checkpoint(path)
    assert err.value.found == 99


def test_checkpoint_truncation(trained, tmp_path):
    checkpoint, _, _, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 9])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_checkpoint_trailing_garbage(trained, tmp_path):
    checkpoint, _, _, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    path.write_bytes(path.read_bytes() + b"\x00" * 8)
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_checkpoint_digest_tamper(trained, tmp_path):
    checkpoint, _, _, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    data = path.read_bytes()
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header = data[16 : 16 + header_len]
    swapped = header.replace(b'"beam_width":3', b'"beam_width":4')
    assert swapped != header, "fixture should hit the beam_width field"
    path.write_bytes(data[:16] + swapped + data[16 + header_len :])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_checkpoint_preserves_chop_and_lexicon(trained, tmp_path):
    checkpoint, _, _, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    restored = load_checkpoint(path)
    assert restored.chop_config == ChopConfig()
    assert restored.lexicon == DEFAULT_LEXICON
