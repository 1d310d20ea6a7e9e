"""
Tests for background variance, PSNR and SSIM
"""
import math

import numpy as np
import pytest

from engine.errors import ConfigError
from utils.metrics import background_variance, background_variance_with_count, evaluate_sequence, psnr, ssim
from utils.seqio import FrameSequence, MaskSequence


def _masks(n, shape, value=True):
    return MaskSequence([np.full(shape, value, dtype=bool) for _ in range(n)])


def test_static_sequence_is_zero():
    seq = FrameSequence.from_luma([np.full((6, 6), 0.37)] * 4)
    assert background_variance(seq, _masks(4, (6, 6))) == 0.0


def test_two_value_pixel():
    seq = FrameSequence.from_luma([np.zeros((1, 1)), np.full((1, 1), 2.0 / 255.0)])
    assert background_variance(seq, _masks(2, (1, 1))) == pytest.approx(1.0)


def test_average_over_pixels():
    # pixel 0 alternates 0/2 (variance 1), pixel 1 alternates 0/2*sqrt(3) (variance 3)
    a = np.array([[0.0, 0.0]])
    b = np.array([[2.0, 2.0 * math.sqrt(3.0)]]) / 255.0
    seq = FrameSequence.from_luma([a, b])
    value, count = background_variance_with_count(seq, _masks(2, (1, 2)))
    assert value == pytest.approx(2.0)
    assert count == 2


def test_pixels_seen_once_are_excluded():
    frames = [np.array([[0.0, 0.0]]), np.array([[2.0, 100.0]]) / 255.0]
    masks = MaskSequence([np.array([[True, True]]), np.array([[True, False]])])
    value, count = background_variance_with_count(FrameSequence.from_luma(frames), masks)
    assert count == 1
    assert value == pytest.approx(1.0)


def test_no_qualifying_pixels():
    seq = FrameSequence.from_luma([np.zeros((3, 3))] * 3)
    with pytest.raises(ConfigError):
        background_variance(seq, _masks(3, (3, 3), value=False))


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    frames = rng.random((5, 4, 6))
    masks = rng.random((5, 4, 6)) > 0.3
    perm = rng.permutation(24)

    def shuffled(stack):
        return stack.reshape(5, -1)[:, perm].reshape(5, 4, 6)

    original = background_variance(FrameSequence.from_luma(frames), MaskSequence(list(masks)))
    permuted = background_variance(FrameSequence.from_luma(shuffled(frames)), MaskSequence(list(shuffled(masks))))
    assert permuted == pytest.approx(original, rel=1e-12)


def test_noise_raises_variance_towards_its_level():
    rng = np.random.default_rng(3)
    sigma = 5.0
    frames = 0.5 + rng.normal(0.0, sigma / 255.0, size=(200, 16, 16))
    value = background_variance(FrameSequence.from_luma(frames), _masks(200, (16, 16)))
    assert value == pytest.approx(sigma ** 2, rel=0.15)


def test_psnr_examples():
    zeros = np.zeros((4, 4))
    assert psnr(zeros, zeros) == math.inf
    assert psnr(zeros, np.full((4, 4), 0.1)) == pytest.approx(20.0)
    assert psnr(zeros, np.ones((4, 4))) == pytest.approx(0.0)


def test_psnr_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert psnr(a, b) == psnr(b, a)


def test_ssim_identical():
    a = np.random.default_rng(2).random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0)


def test_ssim_contrast_inversion():
    a = np.tile(np.linspace(0.0, 1.0, 32), (32, 1))
    assert ssim(a, 1.0 - a) < 0.5


def test_ssim_constant_images_use_luminance_only():
    mu_x, mu_y, c1 = 0.2, 0.7, 0.01 ** 2
    expected = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    assert ssim(np.full((16, 16), mu_x), np.full((16, 16), mu_y)) == pytest.approx(expected, rel=1e-6)


def test_ssim_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a))


def test_ssim_too_small():
    with pytest.raises(ConfigError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_evaluate_sequence_with_reference():
    clean = FrameSequence.from_luma([np.full((12, 12), 0.5)] * 3)
    noisy = FrameSequence.from_luma([np.full((12, 12), 0.6)] * 3)

    report = evaluate_sequence(noisy, _masks(3, (12, 12)), clean)

    assert report.background_var == 0.0
    assert report.n_background_pixels == 144
    assert report.per_frame_psnr == pytest.approx([20.0] * 3)
    assert report.mean_psnr == pytest.approx(20.0)
    assert report.std_psnr == pytest.approx(0.0, abs=1e-9)
    assert len(report.per_frame_ssim) == 3
    assert report.as_dict()["biqi_external"] is None


def test_evaluate_sequence_small_frames_skip_ssim():
    seq = FrameSequence.from_luma([np.zeros((4, 4))] * 2)
    report = evaluate_sequence(seq, reference=FrameSequence.from_luma([np.full((4, 4), 0.1)] * 2))
    assert report.mean_ssim is None
    assert report.notes
