"""
Tests for the turbulence simulator
"""
import numpy as np
import pytest

from engine.errors import ConfigError
from utils.metrics import mean_psnr
from utils.seqio import FrameSequence
from utils.turbsim import (
    TurbulenceParams,
    distort_frame,
    random_tilt_field,
    structured_scene,
    synthesize_sequence,
)


def _magnitude(field):
    return np.sqrt(field[0] ** 2 + field[1] ** 2)


def test_zero_strength_gives_zero_field():
    field = random_tilt_field((8, 8), TurbulenceParams(tilt_strength=0.0), seed=0)
    assert field.shape == (2, 8, 8)
    assert not field.any()


def test_field_is_seeded():
    params = TurbulenceParams()
    np.testing.assert_array_equal(random_tilt_field((16, 16), params, seed=4),
                                  random_tilt_field((16, 16), params, seed=4))


def test_field_peak_equals_strength():
    field = random_tilt_field((32, 32), TurbulenceParams(tilt_strength=2.0, tilt_smoothness=3.0), seed=1)
    assert _magnitude(field).max() == pytest.approx(2.0)


def test_correlated_field_stays_bounded():
    params = TurbulenceParams(tilt_strength=1.5, tilt_smoothness=2.0, temporal_correlation=0.9)
    rng = np.random.default_rng(0)
    field = None
    for _ in range(20):
        field = random_tilt_field((16, 16), params, prev_field=field, seed=rng)
        assert _magnitude(field).max() <= 1.5 + 1e-12


def test_uncorrelated_fields_are_independent():
    params = TurbulenceParams(tilt_smoothness=2.0, temporal_correlation=0.0)
    rng = np.random.default_rng(5)
    samples = []
    field = None
    for _ in range(1000):
        field = random_tilt_field((8, 8), params, prev_field=field, seed=rng)
        samples.append(field[0, 3, 3])
    samples = np.array(samples)
    assert abs(np.corrcoef(samples[:-1], samples[1:])[0, 1]) < 0.1


def test_identity_distortion():
    image = np.random.default_rng(2).random((10, 12))
    out = distort_frame(image, np.zeros((2, 10, 12)), TurbulenceParams.none())
    np.testing.assert_array_equal(out.luma, image)


def test_constant_image_survives_tilt_and_blur():
    params = TurbulenceParams(tilt_strength=2.0, blur_sigma=1.0, noise_sigma=0.0)
    tilt = random_tilt_field((16, 16), params, seed=3)
    out = distort_frame(np.full((16, 16), 0.4), tilt, params)
    np.testing.assert_allclose(out.luma, 0.4, atol=1e-12)


def test_integer_tilt_shifts_one_pixel():
    image = np.random.default_rng(3).random((6, 7))
    tilt = np.zeros((2, 6, 7))
    tilt[0] = 1.0

    out = distort_frame(image, tilt, TurbulenceParams.none()).luma

    np.testing.assert_allclose(out[:, :-1], image[:, 1:], atol=1e-12)
    np.testing.assert_allclose(out[:, -1], image[:, -1], atol=1e-12)


def test_blur_preserves_mean():
    image = np.zeros((64, 64))
    image[24:40, 20:44] = np.random.default_rng(4).random((16, 24))
    params = TurbulenceParams(tilt_strength=0.0, blur_sigma=1.5, noise_sigma=0.0)
    out = distort_frame(image, np.zeros((2, 64, 64)), params)
    assert abs(out.luma.mean() - image.mean()) < 1e-6


def test_tilt_dims_must_match():
    with pytest.raises(ConfigError):
        distort_frame(np.zeros((4, 4)), np.zeros((2, 5, 4)), TurbulenceParams.none())


def test_all_zero_params_reproduce_clean():
    scene = structured_scene(32, 32)
    distorted, clean = synthesize_sequence(scene, 4, TurbulenceParams.none(), seed=0)
    np.testing.assert_array_equal(distorted.luma_stack(), clean.luma_stack())


def test_same_seed_bit_identical():
    scene = structured_scene(32, 32)
    a, _ = synthesize_sequence(scene, 5, TurbulenceParams(), seed=9)
    b, _ = synthesize_sequence(scene, 5, TurbulenceParams(), seed=9)
    np.testing.assert_array_equal(a.luma_stack(), b.luma_stack())


def test_tilt_lowers_fidelity():
    scene = structured_scene(48, 48)
    still = TurbulenceParams(tilt_strength=0.0, blur_sigma=0.7, noise_sigma=0.0)
    moving = TurbulenceParams(tilt_strength=2.0, blur_sigma=0.7, noise_sigma=0.0)

    d_still, clean = synthesize_sequence(scene, 20, still, seed=1)
    d_moving, _ = synthesize_sequence(scene, 20, moving, seed=1)

    assert mean_psnr(d_moving, clean) < mean_psnr(d_still, clean)


def test_moving_clean_sequence_used_as_is():
    frames = FrameSequence.from_luma([np.full((8, 8), v) for v in (0.1, 0.2, 0.3)])
    _, clean = synthesize_sequence(frames, 2, TurbulenceParams.none(), seed=0)
    np.testing.assert_array_equal(clean.luma_stack()[:, 0, 0], [0.1, 0.2])
    with pytest.raises(ConfigError):
        synthesize_sequence(frames, 4, TurbulenceParams.none(), seed=0)


def test_structured_scene_range():
    scene = structured_scene(64, 64)
    assert scene.shape == (64, 64)
    assert 0.1 <= scene.min() and scene.max() <= 0.9
    assert scene.std() > 0.1


@pytest.mark.parametrize("kwargs", [
    {"tilt_strength": -1.0},
    {"tilt_smoothness": 0.0},
    {"temporal_correlation": 1.0},
    {"noise_sigma": float("nan")},
])
def test_params_validation(kwargs):
    with pytest.raises(ConfigError):
        TurbulenceParams(**kwargs).validate()
