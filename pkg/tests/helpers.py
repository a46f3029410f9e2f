"""Tiny configurations and random instances shared by the tests."""

import torch


def tiny_model_tree(**overrides):
    tree = {
        "k": 2,
        "window": 2,
        "refine_window": 2,
        "num_proposal_layers": 1,
        "num_inference_layers": 2,
        "num_refine_layers": 1,
        "embed_dim": 16,
        "feature_channels": 16,
        "backbone_channels": [8, 8, 16],
        "num_heads": 2,
        "num_groups": 4,
        "z_max": 32,
        "lookup_radius": 2,
        "pe_dim": 8,
        "dpn_local_window": 4,
    }
    tree.update(overrides)
    return tree


def tiny_run_tree(**model_overrides):
    return {
        "model": tiny_model_tree(**model_overrides),
        "train": {
            "steps": 0,
            "batch_size": 1,
            "crop": [32, 64],
            "max_lr": 1e-3,
            "checkpoint_every": 1,
            "log_every": 1,
            "deterministic": True,
            "device": "cpu",
        },
        "data": {
            "source": "synthetic",
            "synthetic": {
                "height": 32,
                "width": 64,
                "min_layers": 1,
                "max_layers": 2,
                "min_disparity": 2.0,
                "max_disparity": 16.0,
                "num_scenes": 2,
                "eval_scenes": 1,
            },
        },
    }


def random_grid(generator, max_nodes=50, max_side=6, max_k=3):
    """Random ``(height, width, k)`` with at most ``max_nodes`` labels."""

    while True:
        height, width = (int(v) for v in torch.randint(1, max_side + 1, (2,), generator=generator))
        k = int(torch.randint(1, max_k + 1, (1,), generator=generator))
        if height * width * k <= max_nodes:
            return height, width, k
