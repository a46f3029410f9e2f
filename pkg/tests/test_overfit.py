import os

import pytest

from nmrf.config import resolve_config
from nmrf.datasets import build_dataset
from nmrf.training import Trainer, evaluate_model


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("NMRF_RUN_SLOW") != "1", reason="set NMRF_RUN_SLOW=1 to run the overfit check")
def test_toy_preset_overfits_training_scenes(tmp_path):
    config = resolve_config(preset="toy")
    dataset = build_dataset(config, "train")
    trainer = Trainer(config, tmp_path, dataset)
    trainer.fit()
    samples = [dataset[index] for index in range(len(dataset))]
    report = evaluate_model(trainer.model, samples, trainer.device)
    assert report.overall.epe < 1.0
    assert report.overall.bad_3 < 3.0
    assert report.overall.recall_8 >= 99.0
    assert report.overall.recall_3 <= report.overall.recall_8
    assert report.overall.proposal_epe <= report.overall.epe
