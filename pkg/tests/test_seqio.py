"""
Tests for image sequence loading, writing and colour handling
"""
import numpy as np
import pytest
from PIL import Image

from engine.errors import ConfigError, SequenceIOError
from utils.seqio import (
    Frame,
    FrameSequence,
    extract_yt_slice,
    load_masks,
    load_sequence,
    quantize,
    recombine_color,
    rgb_to_luma_chroma,
    luma_chroma_to_rgb,
    write_sequence,
)


def _write_gray(path, value, size=(8, 8)):
    Image.fromarray(np.full(size, value, dtype=np.uint8)).save(path)


def test_load_constant_gray_directory(tmp_path):
    for k in range(5):
        _write_gray(tmp_path / f"f{k}.png", 128)

    seq = load_sequence(tmp_path)

    assert len(seq) == 5
    assert seq.dims == (8, 8)
    assert not seq.has_chroma
    np.testing.assert_allclose(seq.luma_stack(), 128 / 255)


def test_frames_ordered_by_filename(tmp_path):
    _write_gray(tmp_path / "b.png", 20)
    _write_gray(tmp_path / "a.png", 10)
    _write_gray(tmp_path / "c.png", 30)

    seq = load_sequence(str(tmp_path / "*.png"))

    assert [round(f.luma[0, 0] * 255) for f in seq.frames] == [10, 20, 30]


def test_red_pixel_luma():
    rgb = np.zeros((1, 1, 3))
    rgb[0, 0, 0] = 1.0
    luma, _ = rgb_to_luma_chroma(rgb)
    assert luma[0, 0] == pytest.approx(0.299, abs=1 / 255)


def test_colour_planes_invert():
    rgb = np.random.default_rng(0).random((4, 5, 3))
    luma, (cb, cr) = rgb_to_luma_chroma(rgb)
    np.testing.assert_allclose(luma_chroma_to_rgb(luma, cb, cr), rgb, atol=1e-12)


def test_empty_directory(tmp_path):
    with pytest.raises(SequenceIOError, match="no files matched"):
        load_sequence(tmp_path)


def test_mixed_dimensions_names_file(tmp_path):
    _write_gray(tmp_path / "a.png", 0)
    _write_gray(tmp_path / "b.png", 0, size=(4, 8))
    with pytest.raises(SequenceIOError, match="b.png"):
        load_sequence(tmp_path)


def test_undecodable_file(tmp_path):
    (tmp_path / "broken.png").write_bytes(b"not an image")
    with pytest.raises(SequenceIOError, match="broken.png"):
        load_sequence(tmp_path)


def test_sixteen_bit_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 4000, dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(SequenceIOError):
        load_sequence(tmp_path)


def test_quantize_endpoints():
    assert quantize(np.array([1.0, 0.5, -0.1, 1.3])).tolist() == [255, 128, 0, 255]


def test_write_then_load_gray(tmp_path):
    seq = FrameSequence.from_luma([np.full((6, 7), v) for v in (0.0, 0.25, 1.0)])
    written = write_sequence(seq, tmp_path / "out")

    assert [p.name for p in written] == ["frame_00000.png", "frame_00001.png", "frame_00002.png"]
    back = load_sequence(tmp_path / "out")
    np.testing.assert_allclose(back.luma_stack(), quantize(seq.luma_stack()) / 255)


def test_write_pgm(tmp_path):
    seq = FrameSequence.from_luma([np.full((4, 4), 0.5)])
    written = write_sequence(seq, tmp_path, fmt="pgm8")
    assert written[0].suffix == ".pgm"
    assert written[0].read_bytes().startswith(b"P5")


def test_write_unknown_format(tmp_path):
    with pytest.raises(ConfigError):
        write_sequence(FrameSequence.from_luma([np.zeros((2, 2))]), tmp_path, fmt="tiff16")


def test_colour_sequence_written_as_rgb(tmp_path):
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 2] = 200
    Image.fromarray(rgb).save(tmp_path / "c.png")

    seq = load_sequence(tmp_path)
    assert seq.has_chroma
    write_sequence(seq, tmp_path / "out")

    back = load_sequence(tmp_path / "out")
    assert back.has_chroma
    np.testing.assert_allclose(back.luma_stack(), seq.luma_stack(), atol=1 / 255)


def test_single_mask_broadcast(tmp_path):
    seq = FrameSequence.from_luma([np.zeros((8, 8))] * 10)
    _write_gray(tmp_path / "mask.png", 255)

    masks = load_masks(tmp_path / "mask.png", seq)

    assert len(masks) == 10
    assert masks.stack().all()


def test_black_mask_has_no_background(tmp_path):
    seq = FrameSequence.from_luma([np.zeros((8, 8))] * 2)
    _write_gray(tmp_path / "mask.png", 0)
    assert not load_masks(tmp_path / "mask.png", seq).stack().any()


def test_mask_threshold_is_128(tmp_path):
    seq = FrameSequence.from_luma([np.zeros((2, 4))])
    Image.fromarray(np.array([[0, 1, 127, 128], [129, 200, 254, 255]], dtype=np.uint8)).save(tmp_path / "mask.png")

    mask = load_masks(tmp_path / "mask.png", seq).stack()[0]

    np.testing.assert_array_equal(mask, [[False, False, False, True], [True, True, True, True]])


def test_mask_count_mismatch(tmp_path):
    seq = FrameSequence.from_luma([np.zeros((8, 8))] * 3)
    _write_gray(tmp_path / "m0.png", 255)
    _write_gray(tmp_path / "m1.png", 255)
    with pytest.raises(SequenceIOError, match="2 masks for 3 frames"):
        load_masks(tmp_path, seq)


def test_mask_dimension_mismatch(tmp_path):
    seq = FrameSequence.from_luma([np.zeros((8, 8))])
    _write_gray(tmp_path / "m.png", 255, size=(4, 4))
    with pytest.raises(SequenceIOError):
        load_masks(tmp_path / "m.png", seq)


def test_recombine_keeps_original_chroma():
    cb, cr = np.full((3, 3), 0.1), np.full((3, 3), -0.2)
    original = FrameSequence([Frame(np.zeros((3, 3)), (cb, cr))])
    restored = FrameSequence.from_luma([np.full((3, 3), 0.5)])

    out = recombine_color(restored, original)

    np.testing.assert_array_equal(out.frames[0].luma, 0.5)
    np.testing.assert_array_equal(out.frames[0].chroma[0], cb)
    np.testing.assert_array_equal(out.frames[0].chroma[1], cr)


def test_recombine_without_chroma():
    seq = FrameSequence.from_luma([np.zeros((3, 3))])
    with pytest.raises(ConfigError):
        recombine_color(seq, seq)


def test_recombine_length_mismatch():
    cb = np.zeros((2, 2))
    original = FrameSequence([Frame(np.zeros((2, 2)), (cb, cb))] * 2)
    with pytest.raises(ConfigError):
        recombine_color(FrameSequence.from_luma([np.zeros((2, 2))]), original)


def test_sequence_rejects_mixed_dims():
    with pytest.raises(ConfigError):
        FrameSequence.from_luma([np.zeros((2, 2)), np.zeros((3, 2))])


def test_head_limits_frames():
    seq = FrameSequence.from_luma([np.zeros((2, 2))] * 6)
    assert len(seq.head(4)) == 4
    assert len(seq.head(None)) == 6
    assert len(seq.head(10)) == 6


def test_yt_slice():
    seq = FrameSequence.from_luma([np.full((5, 4), k / 10) for k in range(3)])
    yt = extract_yt_slice(seq, 2)
    assert yt.shape == (5, 3)
    np.testing.assert_allclose(yt[0], [0.0, 0.1, 0.2])
    with pytest.raises(ConfigError):
        extract_yt_slice(seq, 4)
