import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sprmamba.exceptions import ConfigurationError, DimensionError
from sprmamba.sampling import (SamplingConfig, longrange_index, longrange_inverse, longrange_reorder, window_index,
                               window_merge, window_partition)
from sprmamba.tensor import Tensor


def frames(length, channels=2):
    return np.arange(length * channels, dtype=np.float64).reshape(length, channels) + 1.0


def test_window_examples():
    np.testing.assert_array_equal(window_index(8, 4), [[0, 1, 2, 3], [4, 5, 6, 7]])
    windows, mask = window_partition(frames(7), 4)
    assert windows.shape == (2, 4, 2)
    np.testing.assert_array_equal(mask, [[1, 1, 1, 1], [1, 1, 1, 0]])
    np.testing.assert_array_equal(windows[1, :3], frames(7)[4:])
    np.testing.assert_array_equal(windows[1, 3], 0.0)


def test_window_larger_than_sequence():
    windows, mask = window_partition(frames(5), 16)
    assert windows.shape == (1, 16, 2) and mask.sum() == 5
    np.testing.assert_array_equal(windows[0, :5], frames(5))


def test_longrange_examples():
    np.testing.assert_array_equal(longrange_index(8, 4), [[0, 4], [1, 5], [2, 6], [3, 7]])
    subseqs, _ = longrange_reorder(frames(8), 1)
    np.testing.assert_array_equal(subseqs[0], frames(8))
    _, mask = longrange_reorder(frames(7), 4)
    np.testing.assert_array_equal(mask, [[1, 1], [1, 1], [1, 1], [1, 0]])


@given(st.integers(1, 500), st.integers(1, 64), st.integers(1, 64))
@settings(max_examples=200, deadline=None)
def test_roundtrips_exact(length, w, g):
    x = np.random.default_rng(length).standard_normal((length, 3))
    windows, wmask = window_partition(x, w)
    subseqs, gmask = longrange_reorder(x, g)
    np.testing.assert_array_equal(window_merge(windows, length), x)
    np.testing.assert_array_equal(longrange_inverse(subseqs, length), x)
    # every index is covered exactly once
    for index in (window_index(length, w), longrange_index(length, g)):
        flat = index[index >= 0]
        assert np.array_equal(np.sort(flat), np.arange(length))
    assert wmask.sum() == gmask.sum() == length


def test_tensor_roundtrip_is_differentiable():
    x = Tensor(np.random.default_rng(0).standard_normal((11, 2)), requires_grad=True)
    windows, _ = window_partition(x, 4)
    merged = window_merge(windows, 11)
    (merged * merged).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_pad_content_is_inert():
    # pads never reach the merged output, whatever they hold
    x = frames(10)
    windows, mask = window_partition(x, 4)
    windows[~mask] = 1e9
    np.testing.assert_array_equal(window_merge(windows, 10), x)
    subseqs, gmask = longrange_reorder(x, 3)
    subseqs[~gmask] = -1e9
    np.testing.assert_array_equal(longrange_inverse(subseqs, 10), x)


def test_invalid_sizes():
    with pytest.raises(ConfigurationError):
        SamplingConfig(window=0)
    with pytest.raises(ConfigurationError):
        window_index(5, 0)
    with pytest.raises(DimensionError):
        longrange_index(0, 4)
