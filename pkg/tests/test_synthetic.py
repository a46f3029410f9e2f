import numpy as np
import pytest

from nmrf.config import SyntheticDataConfig
from nmrf.errors import StereoInputError
from nmrf.synthetic import PlanarLayer, generate_synthetic_pair, make_texture, render_scene


def _config(**overrides):
    base = dict(height=32, width=64, min_layers=1, max_layers=1, min_disparity=8.0, max_disparity=8.0, slanted=False)
    base.update(overrides)
    return SyntheticDataConfig(**base)


def test_single_fronto_parallel_layer_is_a_pure_shift():
    scene = generate_synthetic_pair(_config(), seed=4)
    assert np.all(scene.disparity == 8.0)
    assert np.allclose(scene.right[:, :56], scene.left[:, 8:], atol=1e-6)
    assert not scene.valid[:, :8].any()
    assert scene.valid[:, 8:].all()


def _two_layer_scene(seed=0):
    rng = np.random.default_rng(seed)
    textures = [make_texture(rng, 32, 100) for _ in range(2)]
    layers = [
        PlanarLayer(4.0),
        PlanarLayer(20.0, shape="rect", center=(16.0, 40.0), half_size=(40.0, 10.0)),
    ]
    return render_scene(layers, textures, 32, 64, seed=seed)


def test_occlusion_band_left_of_foreground():
    scene = _two_layer_scene()
    assert np.all(scene.disparity[:, 30:51] == 20.0)
    assert np.all(scene.disparity[:, :30] == 4.0)
    invalid_columns = [c for c in range(64) if not scene.valid[:, c].any()]
    assert invalid_columns == list(range(0, 4)) + list(range(14, 30))
    assert scene.valid[:, 30:].all()


def test_valid_pixels_are_photo_consistent():
    scene = _two_layer_scene(seed=3)
    ys, xs = np.nonzero(scene.valid)
    matched = scene.right[ys, xs - scene.disparity[ys, xs].astype(int)]
    assert np.allclose(matched, scene.left[ys, xs], atol=1e-6)


def test_generation_is_deterministic():
    config = _config(max_layers=4, max_disparity=32.0, slanted=True)
    a = generate_synthetic_pair(config, seed=11)
    b = generate_synthetic_pair(config, seed=11)
    c = generate_synthetic_pair(config, seed=12)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.disparity, b.disparity)
    assert not np.array_equal(a.left, c.left)


def test_disparity_range_respected():
    config = _config(min_layers=2, max_layers=5, min_disparity=2.0, max_disparity=40.0, slanted=True)
    for seed in range(5):
        scene = generate_synthetic_pair(config, seed=seed, z_max=64)
        assert scene.disparity.min() >= 2.0 and scene.disparity.max() <= 40.0
        assert scene.left.shape == (32, 64, 3) and scene.left.dtype == np.float32
        assert scene.left.min() >= 0.0 and scene.left.max() <= 1.0


def test_range_beyond_z_max_rejected():
    with pytest.raises(StereoInputError):
        generate_synthetic_pair(_config(max_disparity=64.0), seed=0, z_max=32)


def test_first_layer_must_cover_image():
    rng = np.random.default_rng(0)
    layer = PlanarLayer(4.0, shape="rect", center=(8.0, 8.0), half_size=(4.0, 4.0))
    with pytest.raises(StereoInputError):
        render_scene([layer], [make_texture(rng, 16, 40)], 16, 32)


def test_unknown_texture_rejected():
    with pytest.raises(StereoInputError):
        make_texture(np.random.default_rng(0), 8, 8, kind="plaid")
