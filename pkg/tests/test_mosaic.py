"""
Tests for temporal interlacing
"""
import numpy as np
import pytest

from engine.errors import ConfigError
from engine.mosaic import MosaicGrid, grid_for_block_size, shuffle_block, unshuffle_array, unshuffle_mosaic


@pytest.mark.parametrize("t, expected", [(5, (5, 1)), (4, (2, 2)), (1, (1, 1)), (6, (3, 2)), (9, (3, 3)), (7, (7, 1))])
def test_grid_for_block_size(t, expected):
    grid = grid_for_block_size(t)
    assert (grid.g_y, grid.g_x) == expected
    assert grid.block_size == t


def test_two_frame_example():
    f0 = np.array([[0, 1], [2, 3]])
    f1 = np.array([[4, 5], [6, 7]])

    mosaic = shuffle_block([f0, f1], MosaicGrid(2, 1))

    np.testing.assert_array_equal(mosaic.data, [[0, 1], [4, 5], [2, 3], [6, 7]])
    back = unshuffle_mosaic(mosaic)
    np.testing.assert_array_equal(back[0], f0)
    np.testing.assert_array_equal(back[1], f1)


def test_constant_frames_tile():
    frames = [np.full((3, 4), v) for v in (0.1, 0.2, 0.3, 0.4)]
    data = shuffle_block(frames, MosaicGrid(2, 2)).data
    for i in range(3):
        for j in range(4):
            np.testing.assert_array_equal(data[2 * i:2 * i + 2, 2 * j:2 * j + 2], [[0.1, 0.2], [0.3, 0.4]])


def test_single_frame_is_identity():
    frame = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(shuffle_block([frame], MosaicGrid(1, 1)).data, frame)


def test_roundtrip_random_cases():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t = int(rng.integers(1, 10))
        h, w = (int(d) for d in rng.integers(1, 17, size=2))
        grid = grid_for_block_size(t)
        frames = list(rng.random((t, h, w)))

        mosaic = shuffle_block(frames, grid)

        assert mosaic.data.size == t * h * w
        np.testing.assert_array_equal(np.sort(mosaic.data, axis=None), np.sort(np.stack(frames), axis=None))
        for a, b in zip(frames, unshuffle_mosaic(mosaic)):
            np.testing.assert_array_equal(a, b)


def test_locality():
    rng = np.random.default_rng(2)
    grid = MosaicGrid(3, 2)
    frames = list(rng.random((6, 4, 5)))
    data = shuffle_block(frames, grid).data
    i, j = 2, 3
    tile = data[i * 3:(i + 1) * 3, j * 2:(j + 1) * 2]
    np.testing.assert_array_equal(tile.reshape(-1), [f[i, j] for f in frames])


def test_unshuffle_indivisible():
    with pytest.raises(ConfigError):
        unshuffle_array(np.zeros((3, 3)), MosaicGrid(2, 1))


def test_count_mismatch():
    with pytest.raises(ConfigError):
        shuffle_block([np.zeros((2, 2))] * 3, MosaicGrid(2, 1))


def test_grid_parse():
    assert MosaicGrid.parse("5x1") == MosaicGrid(5, 1)
    assert str(MosaicGrid(2, 3)) == "2x3"
    with pytest.raises(ConfigError):
        MosaicGrid.parse("five")
    with pytest.raises(ConfigError):
        MosaicGrid(0, 1)
