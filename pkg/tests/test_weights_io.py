import io

import numpy as np
import pytest

from cnnlab.compute_kernels import Tensor
from cnnlab.errors import WeightsError
from cnnlab.model_ir import parse_model
from cnnlab.weights_io import (
    generate_weights,
    load_tensor_data,
    load_weights,
    save_tensor,
    save_weights,
)

SMALL = """
{"name": "small", "layers": [
  {"type": "conv", "input": [2, 5, 5], "kernel": [3, 2, 3, 3], "stride": 1, "pad": [1, 1, 1, 1]},
  {"type": "pool", "input": [3, 5, 5], "pool": "max", "window": [2, 2], "stride": 1},
  {"type": "lrn", "input": [3, 4, 4], "local_size": 3, "alpha": 0.1, "beta": 0.75},
  {"type": "fc", "input": [3, 4, 4], "out": 7, "mode": "softmax"}
]}
"""


@pytest.fixture
def small_model():
    return parse_model(SMALL)


def test_round_trip(small_model):
    weights = generate_weights(small_model, seed=5)
    buf = io.BytesIO()
    save_weights(buf, small_model, weights)
    buf.seek(0)
    loaded = load_weights(buf, small_model)
    assert set(loaded) == {0, 3}
    assert np.array_equal(loaded[0].kernel, weights[0].kernel)
    assert np.array_equal(loaded[0].bias, weights[0].bias)
    assert np.array_equal(loaded[3].matrix, weights[3].matrix)
    assert np.array_equal(loaded[3].bias, weights[3].bias)


def test_generation_is_deterministic(small_model):
    a = generate_weights(small_model, seed=9)
    b = generate_weights(small_model, seed=9)
    assert np.array_equal(a[0].kernel, b[0].kernel)
    assert np.array_equal(a[3].matrix, b[3].matrix)
    c = generate_weights(small_model, seed=10)
    assert not np.array_equal(a[0].kernel, c[0].kernel)


def test_values_within_init_range(small_model):
    weights = generate_weights(small_model, seed=1)
    for blob in weights.values():
        arrays = (
            (blob.kernel, blob.bias) if hasattr(blob, "kernel") else (blob.matrix, blob.bias)
        )
        for arr in arrays:
            assert arr.dtype == np.float32
            assert float(arr.min()) >= -0.05 and float(arr.max()) <= 0.05


def test_bad_magic(small_model):
    with pytest.raises(WeightsError, match="magic"):
        load_weights(io.BytesIO(b"NOPE" + b"\x00" * 16), small_model)


def test_truncated_payload(small_model):
    weights = generate_weights(small_model, seed=5)
    buf = io.BytesIO()
    save_weights(buf, small_model, weights)
    data = buf.getvalue()[:-10]
    with pytest.raises(WeightsError, match="truncated"):
        load_weights(io.BytesIO(data), small_model)


def test_layer_count_mismatch(small_model):
    other = parse_model('{"name": "x", "layers": [{"type": "fc", "input": 4, "out": 2}]}')
    weights = generate_weights(other, seed=0)
    buf = io.BytesIO()
    save_weights(buf, other, weights)
    buf.seek(0)
    with pytest.raises(WeightsError, match="describes 1 layers"):
        load_weights(buf, small_model)


def test_missing_blob(small_model):
    weights = generate_weights(small_model, seed=5)
    buf = io.BytesIO()
    save_weights(buf, small_model, weights)
    # Drop the trailing fc bias record: header(13) + 7 floats.
    data = buf.getvalue()[: -(13 + 7 * 4)]
    with pytest.raises(WeightsError, match="missing fc_bias"):
        load_weights(io.BytesIO(data), small_model)


def test_tensor_container_round_trip():
    t = Tensor.from_flat(np.arange(10, dtype=np.float32))
    buf = io.BytesIO()
    save_tensor(buf, t)
    buf.seek(0)
    assert np.array_equal(load_tensor_data(buf), t.flat)
