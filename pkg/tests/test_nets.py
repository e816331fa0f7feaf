"""Networks, gradient checks and checkpoint persistence."""

import math

import pytest
import torch
from torch import nn

from diffusion_datagen.core.config import ModelConfig
from diffusion_datagen.core.errors import CheckpointError, ContractViolation
from diffusion_datagen.diffusion.nets import (
    GaussianHead,
    NoisePredictor,
    StudentPolicy,
    ValueNet,
    build_noise_predictor,
    build_value_net,
    gaussian_log_prob,
    gaussian_sample,
    grad_check,
    load_module,
    predict_noise,
    save_module,
    snapshot,
    value,
)
from diffusion_datagen.training.bc import bc_loss
from diffusion_datagen.training.rl import value_loss

CHUNK, OBS = 12, 17


def small_net(**kwargs):
    return NoisePredictor(CHUNK, OBS, hidden_dim=16, n_hidden=2, cond_dim=8, seed=0, **kwargs)


def randomize_film(net):
    generator = torch.Generator().manual_seed(11)
    with torch.no_grad():
        for layer in net.film:
            layer.weight.copy_(0.1 * torch.randn(layer.weight.shape, generator=generator))


class TestNoisePredictor:
    def test_zero_parameters_give_zero_output(self):
        net = small_net()
        with torch.no_grad():
            for param in net.parameters():
                param.zero_()
        out = predict_noise(net, torch.randn(3, CHUNK), torch.randn(3, OBS), 5)
        assert torch.equal(out, torch.zeros(3, CHUNK))

    def test_same_seed_same_parameters(self):
        first, second = small_net(), small_net()
        for a, b in zip(first.parameters(), second.parameters(), strict=True):
            assert torch.equal(a, b)

    def test_deterministic_forward(self):
        net = small_net()
        a, s = torch.randn(4, CHUNK), torch.randn(4, OBS)
        assert torch.equal(net(a, s, 3), net(a, s, 3))

    def test_zero_film_ignores_observation(self):
        net = small_net()
        a = torch.randn(2, CHUNK)
        assert torch.equal(net(a, torch.zeros(2, OBS), 7), net(a, torch.randn(2, OBS), 7))

    def test_observation_and_level_sensitivity(self):
        net = small_net()
        randomize_film(net)
        a, s = torch.randn(2, CHUNK), torch.randn(2, OBS)
        assert not torch.allclose(net(a, s, 7), net(a, s + 0.5, 7))
        assert not torch.allclose(net(a, s, 7), net(a, s, 12))

    def test_per_row_levels(self):
        net = small_net()
        a, s = torch.randn(2, CHUNK), torch.randn(2, OBS)
        both = net(a, s, torch.tensor([3, 9]))
        assert torch.allclose(both[1], net(a[1:], s[1:], 9)[0])

    def test_shape_mismatch(self):
        net = small_net()
        with pytest.raises(ContractViolation):
            net(torch.zeros(2, CHUNK + 1), torch.zeros(2, OBS), 1)
        with pytest.raises(ContractViolation):
            net(torch.zeros(2, CHUNK), torch.zeros(3, OBS), 1)

    def test_snapshot_is_bit_identical_and_frozen(self):
        net = small_net()
        randomize_film(net)
        frozen = snapshot(net)
        a, s = torch.randn(3, CHUNK), torch.randn(3, OBS)
        assert torch.equal(net(a, s, 4), frozen(a, s, 4))
        assert not any(p.requires_grad for p in frozen.parameters())

    def test_student_requires_instruction(self):
        student = StudentPolicy(CHUNK, OBS, n_instructions=4, hidden_dim=16, cond_dim=8)
        with pytest.raises(ContractViolation):
            student(torch.zeros(1, CHUNK), torch.zeros(1, OBS), 1)
        out = student(torch.zeros(1, CHUNK), torch.zeros(1, OBS), 1, torch.tensor([2]))
        assert out.shape == (1, CHUNK)


class TestInitialization:
    def test_value_head_uses_configured_gain(self):
        cfg = ModelConfig()
        critic = build_value_net(cfg, OBS, seed=0)
        assert critic.arch["final_gain"] == cfg.final_gain == 0.01
        # one orthonormal row scaled by the gain
        assert math.isclose(float(torch.linalg.norm(critic.head.weight)), 0.01, rel_tol=1e-6)
        assert torch.equal(critic.head.bias, torch.zeros(1))

    def test_output_layers_share_the_small_gain(self):
        cfg = ModelConfig(final_gain=0.05)
        critic = build_value_net(cfg, OBS, seed=0)
        net = build_noise_predictor(cfg, CHUNK, OBS, seed=0)
        assert math.isclose(float(torch.linalg.norm(critic.head.weight)), 0.05, rel_tol=1e-6)
        assert math.isclose(float(torch.linalg.norm(net.output_layer.weight)), 0.05 * math.sqrt(CHUNK), rel_tol=1e-6)

    def test_gain_survives_checkpointing(self, tmp_path):
        save_module(tmp_path / "value.ckpt", build_value_net(ModelConfig(), OBS, seed=1))
        loaded, _ = load_module(tmp_path / "value.ckpt", "value")
        assert loaded.arch["final_gain"] == 0.01


class TestGaussianHead:
    def test_log_prob_at_mean_with_unit_std(self):
        head = GaussianHead(CHUNK, OBS, hidden_dim=16, log_std_init=0.0)
        obs = torch.randn(1, OBS)
        value_at_mean = gaussian_log_prob(head, obs, head(obs))
        assert math.isclose(float(value_at_mean), -0.5 * CHUNK * math.log(2 * math.pi), abs_tol=1e-12)

    def test_sample_then_score(self):
        head = GaussianHead(CHUNK, OBS, hidden_dim=16)
        obs = torch.randn(5, OBS)
        chunk, log_prob = gaussian_sample(head, obs, torch.Generator().manual_seed(0))
        assert torch.allclose(log_prob, gaussian_log_prob(head, obs, chunk), atol=1e-12)

    def test_monte_carlo_mean(self):
        head = GaussianHead(CHUNK, OBS, hidden_dim=16, log_std_init=-1.0)
        obs = torch.randn(1, OBS).expand(10_000, OBS)
        chunks, _ = gaussian_sample(head, obs, torch.Generator().manual_seed(1))
        std = math.exp(-1.0)
        # 3.5 sigma over twelve dimensions
        assert torch.all((chunks.mean(0) - head(obs[:1])[0]).abs() < 3.5 * std / 100.0)

    def test_log_std_is_clamped(self):
        head = GaussianHead(CHUNK, OBS, hidden_dim=16, log_std_min=-2.0, log_std_max=0.0)
        with torch.no_grad():
            head.log_std.fill_(-10.0)
        assert torch.allclose(head.distribution(torch.zeros(1, OBS)).stddev, torch.full((1, CHUNK), math.exp(-2.0)))


class TestGradCheck:
    def test_quadratic_loss_on_linear_layer(self):
        torch.manual_seed(0)
        layer = nn.Linear(4, 3).double()
        x, y = torch.randn(8, 4), torch.randn(8, 3)
        error = grad_check(layer.parameters(), lambda: ((layer(x) - y) ** 2).mean(), n_probes=15)
        assert error < 1e-6

    def test_zero_loss(self):
        layer = nn.Linear(2, 2).double()
        assert grad_check(layer.parameters(), lambda: 0.0 * layer.weight.sum()) == 0.0

    def test_bc_loss(self, schedule):
        net = small_net()
        randomize_film(net)
        obs, a0 = torch.randn(6, OBS), torch.randn(6, CHUNK)

        def loss():
            return bc_loss(net, schedule, obs, a0, torch.Generator().manual_seed(5))

        assert grad_check(net.parameters(), loss, n_probes=20) < 1e-4

    def test_instruction_conditioned_student_loss(self, schedule):
        student = StudentPolicy(CHUNK, OBS, n_instructions=4, hidden_dim=16, cond_dim=8, instruction_dim=4, seed=1)
        randomize_film(student)
        obs, a0 = torch.randn(8, OBS), torch.randn(8, CHUNK)
        instruction = torch.tensor([0, 1, 2, 3, 0, 1, 2, 3])

        def loss():
            return bc_loss(student, schedule, obs, a0, torch.Generator().manual_seed(6), instruction)

        assert grad_check(student.parameters(), loss, n_probes=40) < 1e-4
        # the instruction table must receive gradient once FiLM is live
        loss().backward()
        assert float(student.instruction_embed.weight.grad.abs().sum()) > 0.0

    def test_value_loss(self):
        critic = ValueNet(OBS, hidden_dim=16)
        obs, returns = torch.randn(10, OBS), torch.randn(10)
        assert grad_check(critic.parameters(), lambda: value_loss(critic, obs, returns), n_probes=20) < 1e-4


class TestPersistence:
    def test_round_trip(self, tmp_path):
        net = build_noise_predictor(ModelConfig(hidden_dim=16, cond_dim=8), CHUNK, OBS, seed=3)
        randomize_film(net)
        save_module(tmp_path / "net.ckpt", net, task="reach")
        loaded, meta = load_module(tmp_path / "net.ckpt", "noise_predictor")
        assert meta["task"] == "reach"
        a, s = torch.randn(2, CHUNK), torch.randn(2, OBS)
        assert torch.equal(net(a, s, 8), loaded(a, s, 8))

    def test_student_round_trip(self, tmp_path):
        student = StudentPolicy(CHUNK, OBS, n_instructions=4, hidden_dim=16, cond_dim=8, seed=2)
        save_module(tmp_path / "student.ckpt", student)
        loaded, _ = load_module(tmp_path / "student.ckpt", "student")
        assert isinstance(loaded, StudentPolicy)

    def test_wrong_kind(self, tmp_path):
        save_module(tmp_path / "value.ckpt", ValueNet(OBS, hidden_dim=8))
        with pytest.raises(CheckpointError):
            load_module(tmp_path / "value.ckpt", "noise_predictor")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_module(tmp_path / "absent.ckpt")

    def test_value_is_scalar_per_row(self):
        assert value(ValueNet(OBS, hidden_dim=8), torch.zeros(5, OBS)).shape == (5,)
