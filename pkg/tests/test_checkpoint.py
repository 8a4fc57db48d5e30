import json

import numpy as np
import pytest

from dualmar.checkpoint import load_model, save_model, sidecar
from dualmar.errors import ConfigurationError, TensorFormatError
from dualmar.io import read_named, write_named
from dualmar.models import PUNet, UNet, UNetConfig

CFG = UNetConfig(depth=2, base_channels=3, mode="residual", output_scale=0.0123)


@pytest.mark.parametrize("cls", [UNet, PUNet])
def test_round_trip_is_bitwise(tmp_path, cls, rng):
    net = cls(CFG, seed=4)
    for k in net.params:
        net.params[k] += rng.standard_normal(net.params[k].shape).astype(net.dtype)
    path = tmp_path / "m.mtsr"
    save_model(path, net, {"seed": 4})
    back = load_model(path)
    assert type(back) is cls and back.config == net.config
    assert back.config.output_scale == 0.0123
    for k, v in net.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    meta = json.loads(sidecar(path).read_text())
    assert meta["parameter_count"] == net.parameter_count() and meta["seed"] == 4


def test_missing_manifest(tmp_path):
    path = tmp_path / "m.mtsr"
    save_model(path, UNet(CFG))
    sidecar(path).unlink()
    with pytest.raises(ConfigurationError):
        load_model(path)


def test_tampered_tensors_are_rejected(tmp_path):
    path = tmp_path / "m.mtsr"
    save_model(path, UNet(CFG))
    tensors = read_named(path)
    name = next(iter(tensors))
    write_named(path, {**tensors, name: np.zeros((1, 2, 3), np.float32)})
    with pytest.raises(TensorFormatError):
        load_model(path)
    tensors.pop(name)
    write_named(path, tensors)
    with pytest.raises(TensorFormatError):
        load_model(path)
