import json

import numpy as np
import pytest

from stackalign.checkpoint import load_params, save_params
from stackalign.nn import Mlp


def test_round_trip_preserves_values_and_shapes(tmp_path):
    rng = np.random.default_rng(0)
    mlp = Mlp([3, 5, 2], rng)
    params = mlp.parameters("enc")
    path = tmp_path / "ck.json"
    save_params(path, params)
    loaded = load_params(path)
    assert set(loaded) == set(params)
    for k, p in params.items():
        assert loaded[k].shape == p.data.shape
        assert np.array_equal(loaded[k], p.data)


def test_save_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    params = Mlp([4, 4], rng).parameters("m")
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_params(p1, params)
    save_params(p2, params)
    assert p1.read_bytes() == p2.read_bytes()


def test_version_and_shape_validation(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format_version": 99, "params": {}}))
    with pytest.raises(ValueError, match="format_version"):
        load_params(path)
    path.write_text(json.dumps({
        "format_version": 1,
        "params": {"w": {"shape": [2, 2], "values": [1.0, 2.0, 3.0]}},
    }))
    with pytest.raises(ValueError, match="w"):
        load_params(path)
