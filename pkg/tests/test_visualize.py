import numpy as np
import pytest

from nmrf.errors import StereoInputError
from nmrf.segmentation import segment_image
from nmrf.visualize import colorize_disparity, colorize_error, save_png


def test_invalid_pixels_are_black():
    disparity = np.array([[1.0, np.inf], [4.0, 2.0]])
    rgb = colorize_disparity(disparity)
    assert rgb.shape == (2, 2, 3) and rgb.dtype == np.uint8
    assert rgb[0, 1].tolist() == [0, 0, 0]
    assert rgb[1, 0].sum() > rgb[0, 0].sum()


def test_error_map_saturates_at_cap():
    rgb = colorize_error(np.array([[3.0, 30.0, 0.0]]), valid=np.array([[True, True, False]]))
    assert rgb[0, 0].tolist() == rgb[0, 1].tolist()
    assert rgb[0, 2].tolist() == [0, 0, 0]


def test_save_png_creates_parents(tmp_path):
    path = save_png(tmp_path / "a" / "b.png", np.zeros((4, 4, 3), dtype=np.uint8))
    assert path.is_file()


def test_segments_cover_image():
    image = np.zeros((32, 32, 3))
    image[:, 16:] = 1.0
    labels = segment_image(image, region_size=8)
    assert labels.shape == (32, 32)
    assert labels.min() == 0
    assert not set(labels[:, :14].ravel()) & set(labels[:, 18:].ravel())


def test_segmentation_rejects_grayscale():
    with pytest.raises(StereoInputError):
        segment_image(np.zeros((8, 8)))
