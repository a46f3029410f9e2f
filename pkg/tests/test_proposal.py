import pytest
import torch

from nmrf.config import ModelConfig
from nmrf.cost_volume import LabelSeeds, build_cost_volume
from nmrf.proposal import CrossWindowBlock, LocalWindowBlock, ProposalNetwork, cross_window_partners
from tests.helpers import random_grid, tiny_model_tree
from tests.reference import dense_cross_block


def test_partners_cover_row_and_column():
    partners = cross_window_partners((1, 2), (3, 4))
    pixels = {(i, j) for i, j, _ in partners}
    assert pixels == {(1, 0), (1, 1), (1, 2), (1, 3), (0, 2), (2, 2)}
    assert len(partners) == 6


def test_partners_on_four_by_four_grid():
    partners = cross_window_partners((1, 2), (4, 4))
    assert partners == [(0, 2, 0), (1, 0, 0), (1, 1, 0), (1, 2, 0), (1, 3, 0), (2, 2, 0), (3, 2, 0)]


def test_single_pixel_grid_partners_only_itself():
    assert cross_window_partners((0, 0), (1, 1)) == [(0, 0, 0)]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_partner_count_is_k_times_cross_size(k):
    for i in range(5):
        for j in range(6):
            assert len(cross_window_partners((i, j), (5, 6), k=k)) == k * (5 + 6 - 1)


def test_partners_include_every_slot():
    partners = cross_window_partners((0, 0), (2, 2), k=3)
    assert len(partners) == 3 * 3
    assert (0, 0, 2) in partners


def test_partners_outside_grid_rejected():
    with pytest.raises(ValueError):
        cross_window_partners((3, 0), (3, 4))


@pytest.mark.parametrize("seed", range(200))
def test_cross_block_matches_dense_enumeration(seed):
    generator = torch.Generator().manual_seed(seed)
    height, width, slots = random_grid(generator, max_nodes=50)
    torch.manual_seed(seed)
    block = CrossWindowBlock(8, num_heads=4, mask_same_pixel=bool(seed % 2)).double().eval()
    x = torch.randn(1, height, width, slots, 8, dtype=torch.float64, generator=generator)
    with torch.no_grad():
        fast = block(x)[0]
        slow = dense_cross_block(block, x[0])
    assert torch.allclose(fast, slow, atol=1e-8)


def _zero_residual_paths(block):
    torch.nn.init.zeros_(block.proj.weight)
    torch.nn.init.zeros_(block.proj.bias)
    block.mlp.zero_output()


@pytest.mark.parametrize("factory", [lambda: CrossWindowBlock(8, 2), lambda: LocalWindowBlock(8, 2, window=2)])
def test_zeroed_block_is_identity(factory):
    block = factory()
    _zero_residual_paths(block)
    x = torch.randn(2, 3, 5, 2, 8)
    with torch.no_grad():
        assert torch.equal(block(x), x)


def test_slot_permutation_equivariance():
    block = CrossWindowBlock(8, num_heads=2).double().eval()
    x = torch.randn(1, 3, 3, 3, 8, dtype=torch.float64)
    perm = torch.tensor([2, 0, 1])
    with torch.no_grad():
        assert torch.allclose(block(x[:, :, :, perm]), block(x)[:, :, :, perm], atol=1e-12)


def _single_seed(shift):
    shift = torch.tensor([[[[shift]]]])
    return LabelSeeds(shift=shift, scores=torch.zeros(1, 1, 1, 1), is_modal=torch.ones(1, 1, 1, 1, dtype=torch.bool))


@pytest.mark.parametrize("shift, bias, expected", [(2, 6.5, 22.5), (0, -3.0, 0.0), (4, 5.0, 32.0)])
def test_decode_adds_residual_and_clamps(shift, bias, expected):
    network = ProposalNetwork(ModelConfig(**tiny_model_tree()))
    network.residual_head.zero_output()
    torch.nn.init.constant_(network.residual_head.fc2.bias, bias)
    candidates = network.decode_proposals(torch.randn(1, 1, 1, 1, 16), _single_seed(shift))
    assert candidates.disparity.item() == pytest.approx(expected)
    assert candidates.seed_disparity.item() == 8 * shift


@pytest.mark.parametrize("attention", ["cross", "local"])
def test_candidates_stay_in_range(attention):
    network = ProposalNetwork(ModelConfig(**tiny_model_tree(dpn_attention=attention)))
    with torch.no_grad():
        torch.nn.init.normal_(network.residual_head.fc2.bias, std=50.0)
    volume = build_cost_volume(torch.randn(2, 16, 4, 6), torch.randn(2, 16, 4, 6), z_max=32)
    with torch.no_grad():
        seeds, candidates = network(volume)
    assert candidates.disparity.shape == (2, 4, 6, 2)
    assert candidates.features.shape == (2, 4, 6, 2, 16)
    assert seeds.k == 2
    assert (candidates.disparity >= 0).all() and (candidates.disparity <= 32).all()


def test_k_override():
    network = ProposalNetwork(ModelConfig(**tiny_model_tree()))
    volume = build_cost_volume(torch.randn(1, 16, 2, 5), torch.randn(1, 16, 2, 5), z_max=32)
    with torch.no_grad():
        seeds, candidates = network(volume, k=4)
    assert seeds.k == 4 and candidates.k == 4
