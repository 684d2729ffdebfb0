import numpy as np
import pytest
import torch
import torch.nn as nn

from inpaintlab.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from inpaintlab.data import generate_synthetic_dataset
from inpaintlab.rundir import RunDir
from inpaintlab.wgan import (
    Critic,
    GanConfig,
    Generator,
    critic_loss,
    generate,
    generator_loss,
    gradient_penalty,
    init_weights,
    load_critic,
    load_generator,
    sample_latent,
    train_gan,
    wasserstein_estimate,
)


class ConstantCritic(nn.Module):
    def __init__(self, value=0.0):
        super().__init__()
        self.value = value

    def forward(self, x):
        return torch.full((x.shape[0],), self.value, dtype=x.dtype)


class LinearCritic(nn.Module):
    """C(x) = <w, x> per sample, with w of unit L2 norm by construction."""

    def __init__(self, shape, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        w = torch.randn(shape, generator=g, dtype=torch.float64)
        self.w = nn.Parameter(w / w.norm())

    def forward(self, x):
        return (x * self.w).flatten(1).sum(dim=1)


class SumCritic(nn.Module):
    def forward(self, x):
        return x.flatten(1).sum(dim=1)


def _tiny_config(**overrides):
    base = dict(latent_dim=16, base_width=4, batch_size=4, n_critic=2,
                total_steps=4, checkpoint_interval=2, seed=3)
    base.update(overrides)
    return GanConfig(**base)


# ---------------------------------------------------------------------------
# architecture contracts


def test_generator_output_shape_and_range():
    for size in (8, 16, 32):
        g = Generator(latent_dim=8, image_size=size, base_width=4)
        rng = torch.Generator().manual_seed(0)
        init_weights(g, rng)
        g.eval()
        out = g(sample_latent(3, 8, rng))
        assert out.shape == (3, 3, size, size)
        assert out.min() > -1.0 and out.max() < 1.0  # tanh is open-interval


def test_critic_output_shape():
    c = Critic(image_size=16, base_width=4)
    scores = c(torch.zeros(5, 3, 16, 16))
    assert scores.shape == (5,)


def test_non_power_of_two_size_rejected():
    with pytest.raises(ValueError):
        Generator(image_size=24)
    with pytest.raises(ValueError):
        Critic(image_size=6)


def test_generator_latent_dim_mismatch_fatal():
    g = Generator(latent_dim=8, image_size=8, base_width=2)
    with pytest.raises(ValueError):
        g(torch.zeros(2, 9))


def test_init_weights_deterministic():
    g1, g2 = Generator(8, 8, 2), Generator(8, 8, 2)
    init_weights(g1, torch.Generator().manual_seed(5))
    init_weights(g2, torch.Generator().manual_seed(5))
    for p1, p2 in zip(g1.parameters(), g2.parameters()):
        assert torch.equal(p1, p2)


def test_generate_eval_deterministic():
    g = Generator(8, 8, 2)
    init_weights(g, torch.Generator().manual_seed(1))
    z = sample_latent(2, 8, torch.Generator().manual_seed(2))
    a, b = generate(g, z), generate(g, z)
    assert np.array_equal(a, b)
    assert a.shape == (2, 8, 8, 3)
    z2 = sample_latent(2, 8, torch.Generator().manual_seed(3))
    assert not np.array_equal(a, generate(g, z2))


# ---------------------------------------------------------------------------
# latent sampling


def test_sample_latent_support_and_determinism():
    z = sample_latent(2, 4, torch.Generator().manual_seed(0))
    assert z.shape == (2, 4)
    assert (z > -1).all() and (z < 1).all()
    again = sample_latent(2, 4, torch.Generator().manual_seed(0))
    assert torch.equal(z, again)


def test_sample_latent_mean_monte_carlo():
    z = sample_latent(100_000, 4, torch.Generator().manual_seed(7))
    assert abs(z.mean().item()) < 0.02


# ---------------------------------------------------------------------------
# losses: analytic anchors


def test_wasserstein_constant_critic_cancels():
    real = torch.randn(4, 3, 4, 4)
    fake = torch.randn(4, 3, 4, 4)
    w = wasserstein_estimate(ConstantCritic(3.7), real, fake)
    assert abs(w.item()) < 1e-7


def test_wasserstein_sum_critic_hand_value():
    # C(x) = sum(x); real all +1, fake all -1 over P = 3*4*4 = 48 elements
    real = torch.ones(2, 3, 4, 4)
    fake = -torch.ones(2, 3, 4, 4)
    w = wasserstein_estimate(SumCritic(), real, fake)
    assert w.item() == pytest.approx(-96.0, abs=1e-6)


def test_wasserstein_identical_batches_zero():
    batch = torch.randn(3, 3, 8, 8)
    c = Critic(8, 2)
    init_weights(c, torch.Generator().manual_seed(0))
    assert abs(wasserstein_estimate(c, batch, batch).item()) < 1e-6


def test_gradient_penalty_unit_norm_linear_critic():
    critic = LinearCritic((3, 4, 4))
    real = torch.rand(6, 3, 4, 4, dtype=torch.float64)
    fake = torch.rand(6, 3, 4, 4, dtype=torch.float64)
    pen = gradient_penalty(critic, real, fake, torch.Generator().manual_seed(0))
    assert abs(pen.item()) <= 1e-6


def test_gradient_penalty_constant_critic():
    real = torch.rand(5, 3, 4, 4)
    fake = torch.rand(5, 3, 4, 4)
    pen = gradient_penalty(ConstantCritic(2.0), real, fake, torch.Generator().manual_seed(0))
    assert pen.item() == pytest.approx(1.0, abs=1e-6)


def test_gradient_penalty_fake_only_mode():
    # evaluated at the fake points themselves: gradient of the linear critic
    # is w everywhere, so the result is identical to interpolate mode
    critic = LinearCritic((3, 4, 4))
    real = torch.rand(4, 3, 4, 4, dtype=torch.float64)
    fake = torch.rand(4, 3, 4, 4, dtype=torch.float64)
    pen = gradient_penalty(critic, real, fake, torch.Generator().manual_seed(0), mode="fake-only")
    assert abs(pen.item()) <= 1e-6


def test_gradient_penalty_matches_finite_difference():
    # independent oracle: estimate grad-norm at the same interpolation
    # points by central differences on the critic itself
    torch.manual_seed(0)
    critic = Critic(8, 2).double()
    init_weights(critic, torch.Generator().manual_seed(4))
    real = torch.rand(3, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    fake = torch.rand(3, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(2))

    eps_rng = torch.Generator().manual_seed(9)
    pen = gradient_penalty(critic, real, fake, eps_rng).item()

    eps_rng = torch.Generator().manual_seed(9)
    eps = torch.rand(3, 1, 1, 1, generator=eps_rng, dtype=torch.float64)
    x_hat = eps * real + (1 - eps) * fake
    h = 1e-6
    flat = x_hat.reshape(3, -1)
    grads = torch.zeros_like(flat)
    with torch.no_grad():
        for j in range(flat.shape[1]):
            up, down = flat.clone(), flat.clone()
            up[:, j] += h
            down[:, j] -= h
            grads[:, j] = (critic(up.reshape_as(x_hat)) - critic(down.reshape_as(x_hat))) / (2 * h)
    expected = ((grads.norm(dim=1) - 1.0) ** 2).mean().item()
    assert pen == pytest.approx(expected, rel=1e-3)


def test_critic_loss_composition():
    real = torch.rand(4, 3, 8, 8)
    fake = torch.rand(4, 3, 8, 8)
    c = Critic(8, 2)
    init_weights(c, torch.Generator().manual_seed(2))
    loss0 = critic_loss(c, real, fake, 0.0, torch.Generator().manual_seed(0))
    assert loss0.item() == pytest.approx(wasserstein_estimate(c, real, fake).item(), abs=1e-6)
    # constant critic: w = 0, penalty = 1, so loss = lambda
    loss10 = critic_loss(ConstantCritic(), real, fake, 10.0, torch.Generator().manual_seed(0))
    assert loss10.item() == pytest.approx(10.0, abs=1e-5)
    # compositional oracle with a shared eps stream
    w = wasserstein_estimate(c, real, fake).item()
    pen = gradient_penalty(c, real, fake, torch.Generator().manual_seed(5)).item()
    loss = critic_loss(c, real, fake, 7.5, torch.Generator().manual_seed(5))
    assert loss.item() == pytest.approx(w + 7.5 * pen, rel=1e-6)


def test_generator_loss_cases():
    fake = torch.rand(4, 3, 8, 8)
    assert generator_loss(ConstantCritic(2.5), fake).item() == pytest.approx(-2.5, abs=1e-7)
    c = Critic(8, 2)
    init_weights(c, torch.Generator().manual_seed(3))
    real = torch.rand(4, 3, 8, 8)
    lhs = generator_loss(c, fake).item()
    rhs = -(wasserstein_estimate(c, real, fake).item() + c(real).mean().item())
    assert lhs == pytest.approx(rhs, abs=1e-5)


def test_critic_step_does_not_increase_loss_on_same_batch():
    torch.manual_seed(0)
    c = Critic(8, 4)
    init_weights(c, torch.Generator().manual_seed(6))
    real = torch.rand(8, 3, 8, 8, generator=torch.Generator().manual_seed(1)) * 2 - 1
    fake = torch.rand(8, 3, 8, 8, generator=torch.Generator().manual_seed(2)) * 2 - 1
    opt = torch.optim.Adam(c.parameters(), lr=1e-5)
    before = critic_loss(c, real, fake, 10.0, torch.Generator().manual_seed(11))
    opt.zero_grad()
    before.backward()
    opt.step()
    after = critic_loss(c, real, fake, 10.0, torch.Generator().manual_seed(11))
    assert after.item() <= before.item() + 1e-7


def test_critic_loss_gradient_matches_finite_difference():
    critic = Critic(8, 2).double()
    init_weights(critic, torch.Generator().manual_seed(8))
    real = torch.rand(3, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    fake = torch.rand(3, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(4))

    def loss_value():
        return critic_loss(critic, real, fake, 10.0, torch.Generator().manual_seed(21))

    loss = loss_value()
    critic.zero_grad()
    loss.backward()
    params = list(critic.parameters())
    rng = np.random.default_rng(0)
    picks = []  # (param index, flat element index)
    for _ in range(10):
        pi = int(rng.integers(len(params)))
        picks.append((pi, int(rng.integers(params[pi].numel()))))
    analytic = np.array([params[pi].grad.reshape(-1)[j].item() for pi, j in picks])
    h = 1e-6
    numeric = np.zeros(10)
    with torch.no_grad():
        for k, (pi, j) in enumerate(picks):
            flat = params[pi].data.reshape(-1)
            orig = flat[j].item()
            flat[j] = orig + h
            up = loss_value().item()
            flat[j] = orig - h
            down = loss_value().item()
            flat[j] = orig
            numeric[k] = (up - down) / (2 * h)
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert rel <= 1e-3


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic_dataset(10, (8, 8), seed=0, split_fraction=0.8)


def test_train_gan_zero_steps(tiny_data, tmp_path):
    result = train_gan(tiny_data, _tiny_config(total_steps=0), tmp_path)
    assert result.history == []
    run = RunDir(tmp_path)
    assert (run.checkpoints / "generator_step000000.pt").exists()
    assert (run.checkpoints / "generator_final.pt").exists()
    assert (run.history / "gan.csv").read_bytes().splitlines()[0] == (
        b"step,critic_loss,wasserstein_estimate,generator_loss,grad_penalty"
    )


def test_train_gan_tiny_run_history_and_artifacts(tiny_data, tmp_path):
    result = train_gan(tiny_data, _tiny_config(), tmp_path)
    assert [row[0] for row in result.history] == [1, 2, 3, 4]
    for row in result.history:
        assert all(np.isfinite(v) for v in row[1:])
    run = RunDir(tmp_path)
    for step in (0, 2, 4):
        assert (run.checkpoints / f"generator_step{step:06d}.pt").exists()
        assert (run.checkpoints / f"critic_step{step:06d}.pt").exists()
        assert (run.samples / f"step{step:06d}.png").exists()
    # generated previews stay inside the tanh range
    grid = generate(result.generator, sample_latent(4, 16, torch.Generator().manual_seed(0)))
    assert grid.min() > -1.0 and grid.max() < 1.0


def test_train_gan_deterministic(tiny_data, tmp_path):
    r1 = train_gan(tiny_data, _tiny_config(), tmp_path / "a")
    r2 = train_gan(tiny_data, _tiny_config(), tmp_path / "b")
    assert r1.history == r2.history
    csv_a = (tmp_path / "a" / "history" / "gan.csv").read_bytes()
    csv_b = (tmp_path / "b" / "history" / "gan.csv").read_bytes()
    assert csv_a == csv_b
    for p1, p2 in zip(r1.generator.parameters(), r2.generator.parameters()):
        assert torch.equal(p1, p2)


def test_train_gan_resume_reproduces_uninterrupted_run(tiny_data, tmp_path):
    full = train_gan(tiny_data, _tiny_config(total_steps=4), tmp_path / "full")
    short_cfg = _tiny_config(total_steps=2)
    train_gan(tiny_data, short_cfg, tmp_path / "resumed")
    resumed = train_gan(tiny_data, _tiny_config(total_steps=4), tmp_path / "resumed",
                        resume_step=2)
    assert resumed.history == full.history
    for p1, p2 in zip(resumed.generator.parameters(), full.generator.parameters()):
        assert torch.equal(p1, p2)
    for p1, p2 in zip(resumed.critic.parameters(), full.critic.parameters()):
        assert torch.equal(p1, p2)


def test_checkpoint_round_trip_and_kind_checks(tiny_data, tmp_path):
    result = train_gan(tiny_data, _tiny_config(total_steps=1, checkpoint_interval=1), tmp_path)
    run = RunDir(tmp_path)
    g = load_generator(run.checkpoints / "generator_final.pt")
    for p1, p2 in zip(g.state_dict().values(), result.generator.state_dict().values()):
        assert torch.equal(p1, p2)
    c = load_critic(run.checkpoints / "critic_final.pt")
    for p1, p2 in zip(c.state_dict().values(), result.critic.state_dict().values()):
        assert torch.equal(p1, p2)
    with pytest.raises(CheckpointError):
        load_generator(run.checkpoints / "critic_final.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(run.checkpoints / "missing.pt")


def test_checkpoint_architecture_mismatch(tmp_path):
    g = Generator(8, 8, 2)
    save_checkpoint(g, {"kind": "generator", "z_dim": 999, "image_size": 8, "base_width": 2,
                        "depth": None, "step": 0, "seed": 0, "config_sha256": ""},
                    tmp_path / "bad.pt")
    with pytest.raises(CheckpointError):
        load_generator(tmp_path / "bad.pt")  # manifest says z_dim 999, weights say 8


def test_gan_config_validation():
    with pytest.raises(ValueError):
        GanConfig(lambda_gp=0.0)
    with pytest.raises(ValueError):
        GanConfig(n_critic=0)
    with pytest.raises(ValueError):
        GanConfig(gp_mode="both")
