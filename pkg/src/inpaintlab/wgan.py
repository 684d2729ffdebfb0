"""Wasserstein GAN with gradient penalty: networks, losses, training loop.

The critic is trained to widen the score gap between real and generated
batches while a gradient penalty keeps it near 1-Lipschitz; the generator
is trained to raise the critic's score on its samples. All randomness
(batch selection, latent draws, interpolation coefficients, weight init)
flows through one ``torch.Generator`` owned by the loop, so a run is fully
reproducible from its seed and resumable mid-trajectory.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .data import DatasetSplit, tensor_to_images
from .rundir import RunDir, atomic_save_image, atomic_write_csv
from .seeding import derive_seed

GAN_HISTORY_HEADER = ("step", "critic_loss", "wasserstein_estimate", "generator_loss", "grad_penalty")
GP_MODES = ("interpolate", "fake-only")


class TrainingDivergedError(Exception):
    """A loss went non-finite; the last good checkpoint is retained on disk."""


@dataclass
class GanConfig:
    latent_dim: int = 100
    base_width: int = 32
    lambda_gp: float = 10.0
    n_critic: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    total_steps: int = 2000
    checkpoint_interval: int = 500
    gp_mode: str = "interpolate"
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "base_width", "n_critic", "batch_size", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"GanConfig.{name} must be >= 1")
        for name in ("lambda_gp", "learning_rate", "adam_beta1", "adam_beta2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"GanConfig.{name} must be > 0")
        if self.total_steps < 0:
            raise ValueError("GanConfig.total_steps must be >= 0")
        if self.gp_mode not in GP_MODES:
            raise ValueError(f"GanConfig.gp_mode must be one of {GP_MODES}")


def _check_image_size(size: int) -> int:
    if size < 8 or size & (size - 1) != 0:
        raise ValueError(f"image size must be a power of two >= 8, got {size}")
    return int(math.log2(size // 4))


class Generator(nn.Module):
    """Latent vector -> image in (-1, 1).

    Projects the latent vector to a 4x4 map of 8*base_width channels, then
    doubles the resolution with stride-2 transposed convolutions (batch
    norm + ReLU) until the target size, ending in a tanh.
    """

    def __init__(self, latent_dim=100, image_size=32, base_width=32):
        super().__init__()
        n_up = _check_image_size(image_size)
        self.latent_dim = latent_dim
        self.image_size = image_size
        self.base_width = base_width
        ch = 8 * base_width
        self._ch0 = ch
        self.project = nn.Linear(latent_dim, ch * 4 * 4, bias=False)
        blocks = [nn.BatchNorm2d(ch), nn.ReLU(inplace=True)]
        for _ in range(n_up - 1):
            blocks += [
                nn.ConvTranspose2d(ch, ch // 2, 4, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        blocks += [nn.ConvTranspose2d(ch, 3, 4, stride=2, padding=1), nn.Tanh()]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, z):
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"expected latent batch of shape (N, {self.latent_dim}), got {tuple(z.shape)}")
        h = self.project(z).reshape(-1, self._ch0, 4, 4)
        return self.blocks(h)


class Critic(nn.Module):
    """Image -> unbounded realness score.

    Stride-2 convolutions with leaky ReLU down to 4x4, then a linear head.
    No normalization layers: the gradient penalty needs per-sample scores.
    """

    def __init__(self, image_size=32, base_width=32):
        super().__init__()
        n_down = _check_image_size(image_size)
        self.image_size = image_size
        self.base_width = base_width
        layers = []
        ch_in, ch = 3, base_width
        for _ in range(n_down):
            layers += [nn.Conv2d(ch_in, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            ch_in, ch = ch, ch * 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(ch_in * 4 * 4, 1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != self.image_size:
            raise ValueError(f"expected (N, 3, {self.image_size}, {self.image_size}) batch, got {tuple(x.shape)}")
        return self.head(self.features(x).flatten(1)).squeeze(1)


def init_weights(module: nn.Module, rng: torch.Generator) -> None:
    """DCGAN-style init, drawn from an explicit generator for reproducibility."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=rng)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.weight.data.normal_(1.0, 0.02, generator=rng)
            m.bias.data.zero_()


# ---------------------------------------------------------------------------
# losses


def sample_latent(batch: int, latent_dim: int, rng: torch.Generator, dtype=torch.float32) -> torch.Tensor:
    """Draw a (batch, latent_dim) tensor with i.i.d. Uniform(-1, 1) entries."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return torch.rand(batch, latent_dim, generator=rng, dtype=dtype) * 2.0 - 1.0


def wasserstein_estimate(critic, real_batch, fake_batch) -> torch.Tensor:
    """mean(C(fake)) - mean(C(real)): the critic's distance estimate."""
    if len(real_batch) == 0 or len(fake_batch) == 0:
        raise ValueError("batches must be nonempty")
    return critic(fake_batch).mean() - critic(real_batch).mean()


def gradient_penalty(critic, real_batch, fake_batch, rng: torch.Generator, mode="interpolate") -> torch.Tensor:
    """Mean over the batch of (||grad_x C(x)||_2 - 1)^2 at interpolated points.

    mode="interpolate" evaluates at eps*real + (1-eps)*fake with per-sample
    eps ~ Uniform(0,1); mode="fake-only" evaluates at the fake samples alone.
    The caller applies the penalty coefficient.
    """
    if real_batch.shape != fake_batch.shape:
        raise ValueError(f"batch shapes differ: {tuple(real_batch.shape)} vs {tuple(fake_batch.shape)}")
    if mode not in GP_MODES:
        raise ValueError(f"unknown gradient-penalty mode {mode!r}")
    if mode == "interpolate":
        eps_shape = (real_batch.shape[0],) + (1,) * (real_batch.ndim - 1)
        eps = torch.rand(eps_shape, generator=rng, dtype=real_batch.dtype)
        x_hat = eps * real_batch + (1.0 - eps) * fake_batch
    else:
        x_hat = fake_batch
    x_hat = x_hat.detach().requires_grad_(True)
    with torch.enable_grad():  # the input gradient is needed even under no_grad
        scores = critic(x_hat)
        if scores.requires_grad:
            grads = torch.autograd.grad(scores.sum(), x_hat, create_graph=True, allow_unused=True)[0]
        else:  # critic ignores its input entirely
            grads = None
    if grads is None:  # gradient is identically zero
        grads = torch.zeros_like(x_hat)
    norms = grads.flatten(1).norm(2, dim=1)
    penalty = ((norms - 1.0) ** 2).mean()
    if not torch.isfinite(penalty):
        raise FloatingPointError("gradient penalty is non-finite")
    return penalty


def critic_loss(critic, real_batch, fake_batch, lambda_gp, rng, gp_mode="interpolate") -> torch.Tensor:
    """Wasserstein estimate plus weighted gradient penalty."""
    w = wasserstein_estimate(critic, real_batch, fake_batch)
    return w + lambda_gp * gradient_penalty(critic, real_batch, fake_batch, rng, gp_mode)


def generator_loss(critic, fake_batch) -> torch.Tensor:
    """-mean(C(fake)): decreasing it pushes generated samples toward higher scores."""
    if len(fake_batch) == 0:
        raise ValueError("fake batch must be nonempty")
    return -critic(fake_batch).mean()


def generate(generator: Generator, z_batch: torch.Tensor) -> np.ndarray:
    """Run the generator in eval mode; returns (N, H, W, 3) ImageTensors."""
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            out = generator(z_batch)
    finally:
        generator.train(was_training)
    return tensor_to_images(out)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class GanTrainResult:
    generator: Generator
    critic: Critic
    history: list = field(default_factory=list)  # rows matching GAN_HISTORY_HEADER


def _sample_indices(n: int, batch: int, rng: torch.Generator) -> torch.Tensor:
    if batch <= n:
        return torch.randperm(n, generator=rng)[:batch]
    return torch.randint(0, n, (batch,), generator=rng)


def _save_sample_grid(path, images: np.ndarray, columns=4) -> None:
    n, h, w, _ = images.shape
    rows = (n + columns - 1) // columns
    grid = np.full((rows * h, columns * w, 3), -1.0, dtype=np.float32)
    for i in range(n):
        r, c = divmod(i, columns)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = images[i]
    atomic_save_image(path, grid)


def _checkpoint_name(kind: str, step: int) -> str:
    return f"{kind}_step{step:06d}.pt"


def _manifest(kind, config: GanConfig, image_size, step, config_sha256):
    return {
        "kind": kind,
        "z_dim": config.latent_dim,
        "image_size": image_size,
        "base_width": config.base_width,
        "depth": None,
        "step": step,
        "seed": config.seed,
        "config_sha256": config_sha256,
    }


def train_gan(data: DatasetSplit, config: GanConfig, run_dir, resume_step=None, config_sha256="") -> GanTrainResult:
    """Alternating WGAN-GP training: n_critic critic updates, one generator update.

    Per step the history records the last critic update's loss, distance
    estimate, and penalty, plus the generator update's loss. Checkpoints
    (generator, critic, and resumable optimizer/RNG state) are written
    every ``checkpoint_interval`` steps and at the end; a non-finite loss
    aborts the run with the last checkpoint retained.
    """
    run = RunDir(run_dir).ensure()
    train_images = torch.from_numpy(np.ascontiguousarray(data.train.transpose(0, 3, 1, 2)))
    n_images, _, image_size, image_size_w = train_images.shape
    if image_size != image_size_w:
        raise ValueError(f"training images must be square, got {image_size}x{image_size_w}")

    generator = Generator(config.latent_dim, image_size, config.base_width)
    critic = Critic(image_size, config.base_width)
    rng = torch.Generator().manual_seed(config.seed)
    init_weights(generator, rng)
    init_weights(critic, rng)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate, betas=betas)
    opt_c = torch.optim.Adam(critic.parameters(), lr=config.learning_rate, betas=betas)
    preview_rng = torch.Generator().manual_seed(derive_seed(config.seed, "preview"))
    preview_z = sample_latent(16, config.latent_dim, preview_rng)

    history: list[tuple] = []
    start_step = 0

    def write_checkpoint(step: int) -> None:
        state = {
            "step": step,
            "opt_g": opt_g.state_dict(),
            "opt_c": opt_c.state_dict(),
            "rng_state": rng.get_state(),
            "history": list(history),
        }
        save_checkpoint(generator, _manifest("generator", config, image_size, step, config_sha256),
                        run.checkpoints / _checkpoint_name("generator", step))
        save_checkpoint(critic, _manifest("critic", config, image_size, step, config_sha256),
                        run.checkpoints / _checkpoint_name("critic", step), extra_state=state)
        atomic_write_csv(run.history / "gan.csv", GAN_HISTORY_HEADER, history)
        _save_sample_grid(run.samples / f"step{step:06d}.png", generate(generator, preview_z))

    if resume_step is not None:
        start_step = _restore(generator, critic, opt_g, opt_c, rng, history, run, config, resume_step)
    else:
        write_checkpoint(0)

    for step in range(start_step + 1, config.total_steps + 1):
        last_c_loss = last_w = last_pen = float("nan")
        for _ in range(config.n_critic):
            idx = _sample_indices(n_images, config.batch_size, rng)
            real = train_images[idx]
            z = sample_latent(config.batch_size, config.latent_dim, rng)
            fake = generator(z).detach()
            w = wasserstein_estimate(critic, real, fake)
            penalty = gradient_penalty(critic, real, fake, rng, config.gp_mode)
            loss_c = w + config.lambda_gp * penalty
            if not torch.isfinite(loss_c):
                raise TrainingDivergedError(f"critic loss non-finite at step {step}: {loss_c.item()}")
            opt_c.zero_grad()
            loss_c.backward()
            opt_c.step()
            last_c_loss, last_w, last_pen = loss_c.item(), w.item(), penalty.item()

        z = sample_latent(config.batch_size, config.latent_dim, rng)
        loss_g = generator_loss(critic, generator(z))
        if not torch.isfinite(loss_g):
            raise TrainingDivergedError(f"generator loss non-finite at step {step}: {loss_g.item()}")
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        history.append((step, last_c_loss, last_w, loss_g.item(), last_pen))
        if step % config.checkpoint_interval == 0 and step != config.total_steps:
            write_checkpoint(step)

    write_checkpoint(config.total_steps)
    for kind, module in (("generator", generator), ("critic", critic)):
        save_checkpoint(module, _manifest(kind, config, image_size, config.total_steps, config_sha256),
                        run.checkpoints / f"{kind}_final.pt")
    return GanTrainResult(generator=generator, critic=critic, history=history)


def _restore(generator, critic, opt_g, opt_c, rng, history, run: RunDir, config: GanConfig, step: int) -> int:
    g_sd, g_manifest, _ = load_checkpoint(run.checkpoints / _checkpoint_name("generator", step), "generator")
    c_sd, c_manifest, state = load_checkpoint(run.checkpoints / _checkpoint_name("critic", step), "critic")
    for manifest in (g_manifest, c_manifest):
        if (manifest["z_dim"], manifest["base_width"]) != (config.latent_dim, config.base_width):
            from .checkpoint import CheckpointError

            raise CheckpointError(
                f"cannot resume: checkpoint architecture (z_dim={manifest['z_dim']}, "
                f"base_width={manifest['base_width']}) differs from config"
            )
    load_into(generator, g_sd, g_manifest)
    load_into(critic, c_sd, c_manifest)
    opt_g.load_state_dict(state["opt_g"])
    opt_c.load_state_dict(state["opt_c"])
    rng.set_state(state["rng_state"])
    history.extend(tuple(row) for row in state["history"])
    return state["step"]


# ---------------------------------------------------------------------------
# loading trained models


def load_generator(path) -> Generator:
    sd, manifest, _ = load_checkpoint(path, expected_kind="generator")
    g = Generator(manifest["z_dim"], manifest["image_size"], manifest["base_width"])
    load_into(g, sd, manifest)
    g.eval()
    return g


def load_critic(path) -> Critic:
    sd, manifest, _ = load_checkpoint(path, expected_kind="critic")
    c = Critic(manifest["image_size"], manifest["base_width"])
    load_into(c, sd, manifest)
    c.eval()
    return c
