import numpy as np
import pytest
import torch
from PIL import Image

from nmrf.config import SyntheticDataConfig
from nmrf.datasets import FileListDataset, SyntheticStereoDataset, aligned_crop_origin, build_dataset, collate
from nmrf.disparity_io import write_disparity
from nmrf.errors import ConfigError, StereoInputError


@pytest.fixture
def synthetic():
    config = SyntheticDataConfig(height=32, width=64, min_layers=1, max_layers=2, max_disparity=16.0, num_scenes=3)
    return SyntheticStereoDataset(config, "train", z_max=32)


def test_synthetic_samples_are_stable(synthetic):
    first = synthetic[1]
    again = SyntheticStereoDataset(synthetic.config, "train", z_max=32)[1]
    assert np.array_equal(first.left, again.left)
    assert first.modals.values.shape == (4, 8, 4)
    assert len(synthetic) == 3


def test_splits_differ(synthetic):
    evaluation = SyntheticStereoDataset(synthetic.config, "eval", z_max=32)
    assert synthetic.scene_seed(0) != evaluation.scene_seed(0)
    assert len(evaluation) == synthetic.config.eval_scenes


def test_index_out_of_range(synthetic):
    with pytest.raises(IndexError):
        synthetic[3]


def test_crop_keeps_modals_aligned(synthetic):
    full = synthetic[0]
    crop = synthetic.sample(0, crop=(32, 32), rng=np.random.default_rng(1))
    assert crop.left.shape == (32, 32, 3)
    assert crop.modals.values.shape == (4, 4, 4)
    offset = next(c for c in range(0, 33, 8) if np.array_equal(full.left[:, c : c + 32], crop.left))
    assert np.array_equal(crop.modals.values, full.modals.values[:, offset // 8 : offset // 8 + 4])


def test_crop_origin_on_grid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        top, left = aligned_crop_origin((64, 128), (32, 64), rng)
        assert top % 8 == 0 and left % 8 == 0 and top <= 32 and left <= 64
    with pytest.raises(StereoInputError):
        aligned_crop_origin((32, 32), (40, 32), rng)


def test_collate(synthetic):
    batch = collate([synthetic[0], synthetic[1]])
    assert batch["left"].shape == (2, 3, 32, 64)
    assert batch["modals"].shape == (2, 4, 8, 4)
    assert batch["modal_valid"].dtype == torch.bool


def _write_pair(directory, disparity):
    image = (np.random.default_rng(0).random((32, 32, 3)) * 255).astype(np.uint8)
    Image.fromarray(image).save(directory / "left.png")
    Image.fromarray(image).save(directory / "right.png")
    write_disparity(directory / "disp.png", disparity, valid=disparity > 0)


def test_file_list(tmp_path):
    _write_pair(tmp_path, np.full((32, 32), 6.0))
    (tmp_path / "list.txt").write_text("# left right disparity\nleft.png right.png disp.png\n")
    dataset = FileListDataset(tmp_path / "list.txt")
    sample = dataset[0]
    assert len(dataset) == 1
    assert sample.name == "left"
    assert sample.valid.all()
    assert sample.modals.values[0, 0, 0] == pytest.approx(6.0)


def test_file_list_masks_disparity_beyond_range(tmp_path):
    disparity = np.full((32, 32), 6.0)
    disparity[:, 16:] = 40.0
    _write_pair(tmp_path, disparity)
    (tmp_path / "list.txt").write_text("left.png right.png disp.png\n")
    sample = FileListDataset(tmp_path / "list.txt", z_max=32)[0]
    assert sample.valid[:, :16].all()
    assert not sample.valid[:, 16:].any()
    assert sample.modals.valid[:, :2, 0].all()
    assert not sample.modals.valid[:, 2:].any()
    assert FileListDataset(tmp_path / "list.txt")[0].valid.all()


def test_file_list_errors(tmp_path):
    with pytest.raises(ConfigError):
        FileListDataset(tmp_path / "missing.txt")
    (tmp_path / "list.txt").write_text("only two.png\n")
    with pytest.raises(ConfigError):
        FileListDataset(tmp_path / "list.txt")


def test_filelist_source_needs_list(tiny_run_config):
    config = tiny_run_config.model_copy(update={"data": tiny_run_config.data.model_copy(update={"source": "filelist"})})
    with pytest.raises(ConfigError):
        build_dataset(config, "eval")
