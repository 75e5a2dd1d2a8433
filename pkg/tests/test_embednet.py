import struct

import numpy as np
import pytest

from contrasbi import ndmath as nd
from contrasbi.embednet import (
    CheckpointFormatError,
    CheckpointVersionError,
    Network,
    NetworkSpec,
    RatioModel,
    build_model,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)
from contrasbi.losses import loss_sym


def _model(seed=0):
    model = build_model(5, 3, hidden_width=16, n_blocks=2, embed_dim=4, tau=0.3, seed=seed)
    model.metadata = {"note": "unit"}
    return model


def test_outputs_are_unit_rows():
    x = np.random.default_rng(0).normal(size=(50, 5)) * 10
    out = _model().encoder.forward(x)
    assert out.shape == (50, 4)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


def test_same_seed_same_weights():
    a, b = _model(3), _model(3)
    for name in a.encoder.params:
        assert np.array_equal(a.encoder.params[name], b.encoder.params[name])
    assert not np.array_equal(_model(4).encoder.params["W_in"], a.encoder.params["W_in"])


def test_batch_rows_are_independent():
    x = np.random.default_rng(1).normal(size=(7, 5))
    net = _model().encoder
    full = net.forward(x)
    for i in range(len(x)):
        np.testing.assert_allclose(net.forward(x[i]), full[i : i + 1], rtol=0, atol=1e-14)


def test_wrong_input_width():
    with pytest.raises(nd.DimensionError):
        _model().encoder.forward(np.zeros((2, 4)))


def test_invalid_specs():
    with pytest.raises(ValueError):
        NetworkSpec(3, embed_dim=1)
    with pytest.raises(ValueError):
        NetworkSpec(0)


def test_standardization_is_applied():
    net = _model().encoder
    x = np.random.default_rng(2).normal(loc=100.0, scale=50.0, size=(200, 5))
    before = net.forward(x)
    net.set_standardization(x)
    np.testing.assert_allclose(net.params["in_shift"], x.mean(axis=0, keepdims=True))
    assert not np.allclose(before, net.forward(x))


def test_forward_counters():
    net = _model().emulator
    net.forward(np.ones((4, 3)))
    net.forward(np.ones((2, 3)))
    assert (net.calls, net.rows) == (2, 6)


def test_every_trainable_parameter_gets_gradient():
    model = _model()
    rng = np.random.default_rng(5)
    tape = nd.Tape()
    enc = model.encoder.bind(tape, "enc.")
    emu = model.emulator.bind(tape, "emu.")
    f = model.encoder.forward(rng.normal(size=(8, 5)), enc)
    g = model.emulator.forward(rng.normal(size=(8, 3)), emu)
    grads = tape.backward(loss_sym(f, g, model.tau))
    expected = {"enc." + n for n in model.encoder.trainable} | {"emu." + n for n in model.emulator.trainable}
    assert set(grads) == expected
    for name, grad in grads.items():
        assert np.any(grad != 0), name


def test_frozen_inputs_are_not_registered():
    tape = nd.Tape()
    _model().encoder.bind(tape, "enc.")
    assert "enc.in_shift" not in tape.params and "enc.in_scale" not in tape.params


def test_checkpoint_round_trip(tmp_path):
    model = _model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.tau == model.tau and back.metadata == model.metadata
    assert back.encoder.spec == model.encoder.spec
    for head, other in ((model.encoder, back.encoder), (model.emulator, back.emulator)):
        for name in head.params:
            assert np.array_equal(head.params[name], other.params[name])
    x = np.random.default_rng(0).normal(size=(3, 5))
    assert np.array_equal(model.encoder.forward(x), back.encoder.forward(x))


@pytest.mark.parametrize("cut", [3, 20, 100, -5, -1])
def test_truncated_checkpoint(cut):
    raw = checkpoint_bytes(_model())
    with pytest.raises(CheckpointFormatError):
        checkpoint_from_bytes(raw[:cut])


def test_corrupted_checkpoint():
    raw = bytearray(checkpoint_bytes(_model()))
    raw[len(raw) // 2] ^= 0xFF
    with pytest.raises(CheckpointFormatError):
        checkpoint_from_bytes(bytes(raw))


def test_checkpoint_version_mismatch():
    raw = bytearray(checkpoint_bytes(_model()))
    raw[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError):
        checkpoint_from_bytes(bytes(raw))


def test_bad_magic():
    with pytest.raises(CheckpointFormatError):
        checkpoint_from_bytes(b"NOPE" + bytes(100))


def test_network_rejects_mismatched_params():
    spec = NetworkSpec(2, 4, 1, 2)
    net = Network.initialize(spec, np.random.default_rng(0))
    params = dict(net.params)
    params["W_in"] = np.zeros((3, 4))
    with pytest.raises(nd.DimensionError):
        Network(spec, params)


def test_ratio_model_needs_positive_temperature():
    m = _model()
    with pytest.raises(ValueError):
        RatioModel(m.encoder, m.emulator, 0.0)
