import numpy as np
import pytest
import torch

from .._encoder import (
    EncoderConfig,
    GraphBranchConfig,
    ImageBranchConfig,
    build_encoder,
    cffn_forward,
    forward_mode,
    graph_branch_forward,
    image_branch_forward,
    parameter_digest,
    project,
    simam_drop,
    simam_energy,
)

TINY = EncoderConfig(
    graph=GraphBranchConfig(channels=(4, 4, 4, 6, 6, 6, 8, 8, 8)),
    image=ImageBranchConfig(dim=8, blocks=1, filter_hidden=4),
    projector_hidden=16,
    projection_dim=8,
)


def _batch(n=2, t=16, seed=0):
    return torch.as_tensor(np.random.default_rng(seed).normal(size=(n, t, 16, 3)))


def test_default_shapes():
    encoder = build_encoder(seed=0)
    x = _batch(3, 120).float()
    assert graph_branch_forward(x, encoder).shape == (3, 64)
    assert image_branch_forward(x, encoder).shape == (3, 64)
    fused = cffn_forward(x, encoder)
    assert fused.shape == (3, 128)
    z = project(fused, encoder)
    assert z.shape == (3, 128)
    np.testing.assert_allclose(z.norm(dim=1).detach().numpy(), 1.0, atol=1e-6)


def test_fused_feature_is_concatenation():
    encoder = build_encoder(TINY, seed=1).double()
    x = _batch()
    fused = cffn_forward(x, encoder)
    graph = graph_branch_forward(x, encoder)
    image = image_branch_forward(x, encoder)
    torch.testing.assert_close(fused, torch.cat([graph, image], dim=1), rtol=0, atol=0)


@pytest.mark.parametrize("variant, dim", [("graph", 8), ("image", 8), ("cffn", 16)])
def test_variants(variant, dim):
    config = EncoderConfig(
        variant=variant, graph=TINY.graph, image=TINY.image, projection_dim=8
    )
    assert config.feature_dim == dim
    encoder = build_encoder(config, seed=0)
    assert cffn_forward(_batch().float(), encoder).shape == (2, dim)
    if variant == "graph":
        with pytest.raises(ValueError, match="no image branch"):
            image_branch_forward(_batch().float(), encoder)


def test_build_is_seeded_and_isolated():
    torch.manual_seed(123)
    before = torch.rand(1)
    torch.manual_seed(123)
    a = build_encoder(TINY, seed=5)
    assert torch.rand(1) == before
    b = build_encoder(TINY, seed=5)
    assert parameter_digest(a) == parameter_digest(b)
    assert parameter_digest(a) != parameter_digest(build_encoder(TINY, seed=6))


def test_eval_forward_is_pure():
    encoder = build_encoder(TINY, seed=2).double()
    x = _batch(seed=3)
    with torch.no_grad():
        first = cffn_forward(x, encoder, "eval")
        second = cffn_forward(x, encoder, "eval")
    torch.testing.assert_close(first, second, rtol=0, atol=1e-10)
    assert encoder.training


def test_forward_mode_restores_training_flag():
    encoder = build_encoder(TINY, seed=0)
    encoder.eval()
    with forward_mode(encoder, "train"):
        assert encoder.training
    assert not encoder.training
    with pytest.raises(ValueError):
        with forward_mode(encoder, "predict"):
            pass  # pragma: no cover


def test_input_validation():
    encoder = build_encoder(TINY, seed=0)
    with pytest.raises(ValueError, match="batch"):
        encoder(torch.zeros(2, 16, 15, 3))
    with pytest.raises(ValueError, match="stem kernel"):
        encoder(torch.zeros(2, 18, 16, 3))
    with pytest.raises(ValueError):
        GraphBranchConfig(channels=(4, 4))
    with pytest.raises(ValueError):
        EncoderConfig(variant="transformer")


def test_frequency_filter_output_is_real():
    encoder = build_encoder(TINY, seed=0).double()
    block = encoder.backbone.image.blocks[0]
    # move off the all-pass initialisation
    with torch.no_grad():
        for p in block.global_filter.parameters():
            p.normal_()
    x = torch.as_tensor(np.random.default_rng(4).normal(size=(2, 8, 4, 8)))
    mixed = block.global_filter.spectral_mix(x)
    assert mixed.imag.abs().max() < 1e-6


def test_simam_drop_zeroes_most_salient():
    fused = torch.as_tensor(np.random.default_rng(5).normal(size=(3, 128)))
    dropped = simam_drop(fused, 0.25)
    energy = simam_energy(fused).numpy()
    for row in range(3):
        zeroed = set(np.flatnonzero(dropped[row].numpy() == 0))
        expected = set(np.argsort(-energy[row], kind="stable")[:32])
        assert zeroed == expected
        kept = sorted(set(range(128)) - expected)
        np.testing.assert_array_equal(dropped[row, kept].numpy(), fused[row, kept].numpy())
    assert simam_drop(fused, 0.0) is fused
    with pytest.raises(ValueError):
        simam_drop(fused, 1.0)


def test_simam_energy_of_constant_row():
    energy = simam_energy(torch.ones(2, 10, dtype=torch.float64))
    expected = torch.sigmoid(torch.full((2, 10), 0.5, dtype=torch.float64))
    torch.testing.assert_close(energy, expected)


def test_parameter_gradients_match_finite_differences():
    encoder = build_encoder(TINY, seed=7).double().eval()
    x = _batch(2, 8, seed=8)
    weights = torch.as_tensor(np.random.default_rng(9).normal(size=(2, TINY.projection_dim)))

    def loss():
        return (encoder(x) * weights).sum()

    encoder.zero_grad()
    loss().backward()
    rng = np.random.default_rng(10)
    h = 1e-4
    for name, param in encoder.named_parameters():
        flat = param.data.view(-1)
        for i in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
            analytic = param.grad.view(-1)[i].item()
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + h
                up = loss().item()
                flat[i] = original - h
                down = loss().item()
                flat[i] = original
            numeric = (up - down) / (2 * h)
            assert numeric == pytest.approx(analytic, rel=1e-3, abs=1e-7), name


def test_parameter_digest_tracks_changes():
    encoder = build_encoder(TINY, seed=0)
    digest = parameter_digest(encoder)
    with torch.no_grad():
        encoder.projector.fc2.bias.add_(1.0)
    assert parameter_digest(encoder) != digest
