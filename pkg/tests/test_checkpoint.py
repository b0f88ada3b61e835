import json
import struct

import numpy as np
import pytest

from freqdet.checkpoint import load_checkpoint, load_detector, save_checkpoint
from freqdet.errors import ContractError
from freqdet.model import ModelConfig, init_detector_params, named_params
from freqdet.tensor import Tensor

SMALL = dict(c_int=4, classifier_widths=(4, 8), input_size=16)


def test_round_trip_bitwise(tmp_path):
    cfg = ModelConfig(seed=3, **SMALL)
    params = init_detector_params(cfg)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, named_params(params), cfg)
    arrays, loaded_cfg = load_checkpoint(path)
    assert loaded_cfg == cfg
    for name, t in named_params(params):
        assert arrays[name].tobytes() == t.data.tobytes()


def test_container_layout(tmp_path):
    path = tmp_path / "two.ckpt"
    a = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    b = Tensor(np.array([7.0], dtype=np.float32))
    save_checkpoint(path, [("a", a), ("b", b)])
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    index = json.loads(raw[8:8 + hlen])
    assert index["a"] == {"shape": [2, 3], "offset": 0, "dtype": "f32"}
    assert index["b"] == {"shape": [1], "offset": 24, "dtype": "f32"}
    payload = raw[8 + hlen:]
    assert len(payload) == 28
    vals = np.frombuffer(payload, dtype="<f4")
    np.testing.assert_array_equal(vals, [0, 1, 2, 3, 4, 5, 7])


def test_config_sidecar_written(tmp_path):
    cfg = ModelConfig(seed=1, **SMALL)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, named_params(init_detector_params(cfg)), cfg)
    side = tmp_path / "m.ckpt.config.json"
    assert side.exists()
    blob = json.loads(side.read_text())
    assert blob["lambda"] == 0.4 and blob["input_size"] == 16
    assert blob["seed"] == 1


def test_load_detector_restores_forward(tmp_path):
    from freqdet.model import detector_probs

    cfg = ModelConfig(seed=4, **SMALL)
    params = init_detector_params(cfg)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, named_params(params), cfg)
    restored, restored_cfg = load_detector(path)
    x = Tensor(np.random.default_rng(0).random((2, 3, 16, 16)).astype(np.float32))
    a = detector_probs(x, params, cfg).data
    b = detector_probs(x, restored, restored_cfg).data
    assert a.tobytes() == b.tobytes()


def test_missing_sidecar_rejected(tmp_path):
    cfg = ModelConfig(seed=5, **SMALL)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, named_params(init_detector_params(cfg)), cfg)
    (tmp_path / "m.ckpt.config.json").unlink()
    with pytest.raises(ContractError):
        load_detector(path)


def test_missing_parameter_rejected(tmp_path):
    cfg = ModelConfig(seed=6, **SMALL)
    plist = named_params(init_detector_params(cfg))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, plist[:-1], cfg)
    with pytest.raises(ContractError, match="missing parameter"):
        load_detector(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    path.write_bytes(b"\x01\x02")
    with pytest.raises(ContractError):
        load_checkpoint(path)
