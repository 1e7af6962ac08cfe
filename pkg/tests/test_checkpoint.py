import struct

import numpy as np
import pytest

from lib.checkpoint import (
    average_parameters,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from lib.data import CorpusFormatError
from lib.encoder import SelfCondEncoder


def test_save_load_save_is_byte_identical(tmp_path, tiny_cfg):
    model = SelfCondEncoder(tiny_cfg.encoder, seed=4)
    first = tmp_path / "a.ckpt"
    save_checkpoint(first, tiny_cfg, model)
    cfg, loaded = load_checkpoint(first)
    second = tmp_path / "b.ckpt"
    save_checkpoint(second, cfg, loaded)

    assert first.read_bytes() == second.read_bytes()
    assert cfg == tiny_cfg


def test_loaded_model_decodes_the_same(tmp_path, tiny_cfg, utterance):
    model = SelfCondEncoder(tiny_cfg.encoder, seed=4)
    save_checkpoint(tmp_path / "m.ckpt", tiny_cfg, model)
    _, loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert np.array_equal(loaded.forward(utterance.features).final.values, model.forward(utterance.features).final.values)


def test_wrong_magic(tiny_cfg):
    raw = encode_checkpoint(tiny_cfg, [("w", np.ones((2, 2)))])
    with pytest.raises(CorpusFormatError) as e:
        decode_checkpoint(b"CTCA" + raw[4:])
    assert e.value.offset == 0


def test_truncated_checkpoint(tiny_cfg):
    raw = encode_checkpoint(tiny_cfg, [("w", np.ones((2, 2)))])
    with pytest.raises(CorpusFormatError, match="truncated"):
        decode_checkpoint(raw[:-1])


def test_corrupt_tensor_name_reports_offset(tiny_cfg):
    raw = bytearray(encode_checkpoint(tiny_cfg, [("w", np.ones(2))]))
    (config_len,) = struct.unpack("<I", raw[6:10])
    name_at = 10 + config_len + 4 + 4
    raw[name_at] = 0xFF
    with pytest.raises(CorpusFormatError, match="UTF-8") as e:
        decode_checkpoint(bytes(raw))
    assert e.value.offset == name_at


def test_scalar_and_vector_tensors(tiny_cfg):
    named = [("s", np.array(2.5)), ("v", np.arange(3.0))]
    _, decoded = decode_checkpoint(encode_checkpoint(tiny_cfg, named))
    assert [n for n, _ in decoded] == ["s", "v"]
    assert decoded[0][1] == 2.5
    assert decoded[1][1].tolist() == [0.0, 1.0, 2.0]


def test_average_of_one_state_is_itself():
    state = {"w": np.arange(4.0).reshape(2, 2)}
    assert np.array_equal(average_parameters([state])["w"], state["w"])


def test_average_of_identical_states():
    state = {"w": np.array([1.5, -2.0])}
    assert np.array_equal(average_parameters([state, state, state])["w"], state["w"])


def test_average_is_elementwise_mean():
    avg = average_parameters([{"w": np.array([0.0, 2.0])}, {"w": np.array([1.0, 4.0])}])
    assert avg["w"].tolist() == [0.5, 3.0]


def test_average_rejects_mismatched_states():
    with pytest.raises(ValueError):
        average_parameters([{"w": np.zeros(2)}, {"v": np.zeros(2)}])
    with pytest.raises(ValueError):
        average_parameters([{"w": np.zeros(2)}, {"w": np.zeros(3)}])
    with pytest.raises(ValueError):
        average_parameters([])
