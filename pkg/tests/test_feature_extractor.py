import pytest
import torch

from nmrf.errors import StereoInputError
from nmrf.feature_extractor import FeatureExtractor, pad_to_multiple


@pytest.fixture
def extractor():
    return FeatureExtractor(channels=(8, 8, 16), out_channels=16).eval()


def test_output_shapes(extractor):
    left, right = torch.rand(1, 3, 64, 128), torch.rand(1, 3, 64, 128)
    with torch.no_grad():
        pyramid = extractor(left, right)
    assert pyramid.coarse_left.shape == (1, 16, 8, 16)
    assert pyramid.fine_right.shape == (1, 16, 16, 32)


def test_padding_is_recorded(extractor):
    with torch.no_grad():
        pyramid = extractor(torch.rand(1, 3, 60, 100), torch.rand(1, 3, 60, 100))
    assert pyramid.coarse_left.shape[-2:] == (8, 13)
    record = pyramid.padding
    assert (record.padded_height, record.padded_width) == (64, 104)
    assert record.crop(torch.zeros(1, 64, 104)).shape == (1, 60, 100)


@pytest.mark.parametrize("size", [(32, 32), (33, 47), (40, 81), (71, 64)])
def test_shape_sweep(extractor, size):
    with torch.no_grad():
        pyramid = extractor(torch.rand(1, 3, *size), torch.rand(1, 3, *size))
    assert pyramid.coarse_left.shape[-2:] == (-(-size[0] // 8), -(-size[1] // 8))
    assert pyramid.fine_left.shape[-2:] == (-(-size[0] // 8) * 2, -(-size[1] // 8) * 2)


def test_identical_views_give_identical_features(extractor):
    image = torch.rand(1, 3, 32, 48)
    with torch.no_grad():
        pyramid = extractor(image, image.clone())
    assert torch.equal(pyramid.coarse_left, pyramid.coarse_right)


def test_siamese_symmetry(extractor):
    a, b = torch.rand(2, 3, 32, 40), torch.rand(2, 3, 32, 40)
    with torch.no_grad():
        forward = extractor(a, b)
        swapped = extractor(b, a)
    assert torch.allclose(forward.coarse_left, swapped.coarse_right, atol=1e-6)
    assert torch.allclose(forward.fine_right, swapped.fine_left, atol=1e-6)


def test_zero_weights_give_constant_maps(extractor):
    with torch.no_grad():
        for parameter in extractor.parameters():
            parameter.zero_()
        pyramid = extractor(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32))
    assert torch.equal(pyramid.coarse_left, torch.zeros_like(pyramid.coarse_left))


def test_uint8_images_are_scaled(extractor):
    image = torch.randint(0, 256, (1, 3, 32, 32), dtype=torch.uint8)
    with torch.no_grad():
        from_bytes = extractor(image, image)
        from_float = extractor(image.float() / 255.0, image.float() / 255.0)
    assert torch.allclose(from_bytes.coarse_left, from_float.coarse_left)


def test_shape_mismatch_rejected(extractor):
    with pytest.raises(StereoInputError, match="mismatch"):
        extractor(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 40))


def test_non_finite_rejected(extractor):
    left = torch.rand(1, 3, 32, 32)
    left[0, 0, 3, 3] = float("nan")
    with pytest.raises(StereoInputError, match="non-finite"):
        extractor(left, torch.rand(1, 3, 32, 32))


def test_too_small_rejected(extractor):
    with pytest.raises(StereoInputError):
        extractor(torch.rand(1, 3, 16, 64), torch.rand(1, 3, 16, 64))


def test_replicate_padding():
    image = torch.arange(9.0).view(1, 1, 3, 3)
    padded, record = pad_to_multiple(image, 4)
    assert padded.shape == (1, 1, 4, 4)
    assert record.pad_bottom == 1 and record.pad_right == 1
    assert torch.equal(padded[0, 0, 3, :3], image[0, 0, 2])
