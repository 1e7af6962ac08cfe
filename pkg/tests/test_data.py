import logging

import numpy as np
import pytest

from lib import data
from lib.config import ConfigError, SynthSpec
from lib.ctc import collapse, is_feasible
from lib.data import CorpusFormatError, Utterance


def small_spec(**changes) -> SynthSpec:
    spec = SynthSpec(vocab_size=4, feature_dim=6, label_len_min=1, label_len_max=5, num_utterances=40, seed=3)
    for key, value in changes.items():
        setattr(spec, key, value)
    return spec


def assert_same_corpus(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.id == y.id
        assert x.label == y.label
        assert np.array_equal(x.features, y.features)


def test_generation_is_deterministic():
    assert_same_corpus(data.generate(small_spec()), data.generate(small_spec()))


def test_seed_changes_content_not_count():
    a = data.generate(small_spec())
    b = data.generate(small_spec(seed=4))
    assert len(a) == len(b) == 40
    assert [u.label for u in a] != [u.label for u in b]


def test_splits_are_independent():
    train = data.generate(small_spec(split="train"))
    test = data.generate(small_spec(split="test"))
    assert train[0].id == "train-00000"
    assert test[0].id == "test-00000"
    assert [u.label for u in train] != [u.label for u in test]


def test_every_utterance_is_feasible():
    corpus, report = data.generate_with_report(small_spec(frame_drop_rate=0.5, num_utterances=100))
    assert report.utterances == 100
    assert report.frames == sum(u.frames for u in corpus)
    for utt in corpus:
        assert utt.frames >= 1
        assert is_feasible(utt.frames, utt.label)
        assert all(1 <= k <= 4 for k in utt.label)


def test_noiseless_frames_decode_to_the_label():
    spec = small_spec(noise_sigma=0.0, frame_drop_rate=0.0, spurious_frame_rate=0.0, confusion_rate=0.0)
    means = data.class_means(spec)
    for utt in data.generate(spec):
        dist = ((utt.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        assert collapse(np.argmin(dist, axis=1)) == utt.label


def test_class_means():
    means = data.class_means(small_spec(class_separation=3.0))
    assert means.shape == (5, 6)
    assert np.all(means[0] == 0.0)
    assert np.allclose(np.linalg.norm(means[1:], axis=1), 3.0)


def test_infeasible_draws_are_regenerated(caplog):
    spec = small_spec(
        frame_drop_rate=1.0,
        frames_per_token_min=1,
        frames_per_token_max=1,
        label_len_min=1,
        label_len_max=1,
        num_utterances=200,
    )
    with caplog.at_level(logging.WARNING, logger="lib.data"):
        corpus, report = data.generate_with_report(spec)
    assert len(corpus) == 200
    assert report.rejected > 0
    assert "rejected and regenerated" in caplog.text
    assert all(u.frames >= 1 for u in corpus)


def test_frame_drop_shortens_utterances():
    # one-sided z test on mean frame counts, alpha = 0.01
    lengths = [
        np.array([u.frames for u in data.generate(small_spec(frame_drop_rate=rate, num_utterances=1000))])
        for rate in (0.0, 0.2, 0.4)
    ]
    for longer, shorter in zip(lengths, lengths[1:]):
        se = np.sqrt(longer.var() / len(longer) + shorter.var() / len(shorter))
        assert (longer.mean() - shorter.mean()) / se > 2.326


def test_invalid_vocabulary():
    with pytest.raises(ConfigError, match="vocab_size"):
        data.generate(small_spec(vocab_size=0))


def test_empty_split():
    assert data.generate(small_spec(num_utterances=0)) == []


def test_corpus_file_round_trip(tmp_path):
    corpus = data.generate(small_spec())
    path = tmp_path / "train.corpus"
    data.save_corpus(path, corpus)
    assert_same_corpus(data.load_corpus(path), corpus)


def test_empty_corpus_file(tmp_path):
    path = tmp_path / "empty.corpus"
    data.save_corpus(path, [])
    assert data.load_corpus(path) == []


def _corpus_bytes(tmp_path, corpus) -> bytes:
    path = tmp_path / "c.corpus"
    data.save_corpus(path, corpus)
    return path.read_bytes()


def test_bad_magic(tmp_path):
    raw = _corpus_bytes(tmp_path, data.generate(small_spec(num_utterances=2)))
    with pytest.raises(CorpusFormatError) as e:
        data.parse_corpus(b"XXXX" + raw[4:])
    assert e.value.offset == 0
    assert "offset 0" in str(e.value)


def test_truncated_file(tmp_path):
    raw = _corpus_bytes(tmp_path, data.generate(small_spec(num_utterances=2)))
    with pytest.raises(CorpusFormatError, match="truncated"):
        data.parse_corpus(raw[:-3])


def test_trailing_bytes(tmp_path):
    raw = _corpus_bytes(tmp_path, data.generate(small_spec(num_utterances=2)))
    with pytest.raises(CorpusFormatError, match="trailing"):
        data.parse_corpus(raw + b"\x00")


def test_feature_dimension_mismatch(tmp_path):
    corpus = [
        Utterance("a", np.zeros((3, 4)), (1,)),
        Utterance("b", np.zeros((3, 5)), (2,)),
    ]
    with pytest.raises(CorpusFormatError, match="dimension"):
        data.parse_corpus(_corpus_bytes(tmp_path, corpus))


def test_non_token_label(tmp_path):
    corpus = [Utterance("a", np.zeros((3, 4)), (1, 0))]
    with pytest.raises(CorpusFormatError, match="non-token"):
        data.parse_corpus(_corpus_bytes(tmp_path, corpus))


def test_label_file_round_trip(tmp_path):
    items = [("a", (1, 2, 3)), ("b", ())]
    path = tmp_path / "hyp.txt"
    data.write_labels(path, items)
    assert path.read_text() == "a 1 2 3\nb\n"
    assert data.read_labels(path) == items


def test_label_file_rejects_words(tmp_path):
    path = tmp_path / "hyp.txt"
    path.write_text("a 1 two\n")
    with pytest.raises(CorpusFormatError):
        data.read_labels(path)
