"""Semantic inpainting by latent-vector optimization.

The networks stay frozen; only the latent vector is trained. The objective
combines a contextual term (L1 agreement with the known pixels) and a
perceptual term (the critic's opinion of the generated image), and the
final image blends known pixels from the input with generated pixels in
the hole.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import images_to_tensor, mask_to_tensor, require_image_tensor, require_mask
from .seeding import derive_seed
from .wgan import Critic, Generator, generate

TRACE_HEADER = ("iter", "contextual", "perceptual", "total")
PERCEPTUAL_MODES = ("log-sigmoid", "negative-critic")
_SIGMOID_CLAMP = 1e-12


class InpaintError(Exception):
    pass


@dataclass
class InpaintConfig:
    perceptual_weight: float = 0.1
    iterations: int = 1500
    learning_rate: float = 0.03
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    z_clip: float = 1.0
    restarts: int = 1
    perceptual_mode: str = "log-sigmoid"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("InpaintConfig.iterations must be >= 1")
        if self.restarts < 1:
            raise ValueError("InpaintConfig.restarts must be >= 1")
        if not self.z_clip > 0:
            raise ValueError("InpaintConfig.z_clip must be > 0")
        if not np.isfinite(self.perceptual_weight) or self.perceptual_weight < 0:
            raise ValueError("InpaintConfig.perceptual_weight must be finite and >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("InpaintConfig.learning_rate must be >= 0")
        if self.perceptual_mode not in PERCEPTUAL_MODES:
            raise ValueError(f"InpaintConfig.perceptual_mode must be one of {PERCEPTUAL_MODES}")


@dataclass
class InpaintResult:
    z_star: np.ndarray  # (latent_dim,) float32
    generated: np.ndarray  # (H, W, 3) ImageTensor from the best latent
    reconstructed: np.ndarray  # known pixels from the input, hole from `generated`
    trace: list = field(default_factory=list)  # rows matching TRACE_HEADER


def _as_image_batch(x) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        return images_to_tensor(x)
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an (N, 3, H, W) batch, got {tuple(x.shape)}")
    return x


def _as_mask(mask, like: torch.Tensor) -> torch.Tensor:
    if isinstance(mask, np.ndarray):
        mask = mask_to_tensor(mask)
    if mask.ndim == 2:
        mask = mask.reshape(1, 1, *mask.shape)
    if mask.shape[-2:] != like.shape[-2:]:
        raise ValueError(f"mask shape {tuple(mask.shape[-2:])} does not match image {tuple(like.shape[-2:])}")
    return mask.to(like.dtype)


def contextual_loss(generated, y, mask) -> torch.Tensor:
    """Sum of |generated - y| over unmasked pixels (mask broadcast over channels)."""
    generated = _as_image_batch(generated)
    y = _as_image_batch(y)
    if generated.shape != y.shape:
        raise ValueError(f"image shapes differ: {tuple(generated.shape)} vs {tuple(y.shape)}")
    m = _as_mask(mask, generated)
    return (m * (generated - y)).abs().sum()


def perceptual_loss(critic, generated_batch, mode="log-sigmoid") -> torch.Tensor:
    """Realness term from the critic.

    log-sigmoid: mean log(1 - sigmoid(score)), clamped away from log(0);
    negative-critic: mean of -score, the raw Wasserstein form.
    """
    generated_batch = _as_image_batch(generated_batch)
    if generated_batch.shape[0] == 0:
        raise ValueError("generated batch must be nonempty")
    scores = critic(generated_batch)
    if not torch.isfinite(scores).all():
        raise FloatingPointError("critic produced non-finite scores")
    if mode == "log-sigmoid":
        # 1 - sigmoid(s) == sigmoid(-s), but the latter survives float32
        # for large scores instead of cancelling to zero
        return torch.log(torch.clamp(torch.sigmoid(-scores), min=_SIGMOID_CLAMP)).mean()
    if mode == "negative-critic":
        return (-scores).mean()
    raise ValueError(f"unknown perceptual mode {mode!r}")


def total_loss(generated, y, mask, critic, weight=0.1, mode="log-sigmoid"):
    """Returns (total, contextual, perceptual) with total = contextual + weight*perceptual."""
    c = contextual_loss(generated, y, mask)
    p = perceptual_loss(critic, generated, mode)
    return c + weight * p, c, p


def reconstruct(y: np.ndarray, mask: np.ndarray, generated: np.ndarray) -> np.ndarray:
    """Blend: known pixels copied from y, masked-out pixels from generated."""
    require_image_tensor(y)
    require_image_tensor(generated)
    require_mask(mask, (y.shape[0], y.shape[1]))
    if generated.shape != y.shape:
        raise ValueError(f"generated shape {generated.shape} does not match input {y.shape}")
    m = mask.astype(np.float32)[..., None]
    return (m * y + (1.0 - m) * generated).astype(np.float32)


def optimize_latent(generator: Generator, critic: Critic, y: np.ndarray, mask: np.ndarray,
                    config: InpaintConfig) -> InpaintResult:
    """Adam on z with frozen networks; keeps the best of `restarts` runs.

    Each trace row logs the losses driving that iteration's update; z is
    clamped to [-z_clip, z_clip] after every step. A restart whose loss
    goes non-finite is discarded with a warning; the surviving restart
    with the lowest final total loss wins.
    """
    require_image_tensor(y)
    require_mask(mask, (y.shape[0], y.shape[1]))
    if y.shape[0] != generator.image_size or y.shape[1] != generator.image_size:
        raise ValueError(
            f"image is {y.shape[0]}x{y.shape[1]} but the generator produces "
            f"{generator.image_size}x{generator.image_size}"
        )
    y_t = images_to_tensor(y)
    mask_t = mask_to_tensor(mask)
    generator.eval()
    critic.eval()
    frozen = [p for p in list(generator.parameters()) + list(critic.parameters()) if p.requires_grad]
    for p in frozen:
        p.requires_grad_(False)
    try:
        best = None  # (final_total, z_star, trace)
        for restart in range(config.restarts):
            rng = torch.Generator().manual_seed(derive_seed(config.seed, f"restart/{restart}"))
            z = (torch.rand(1, generator.latent_dim, generator=rng) * 2.0 - 1.0).requires_grad_(True)
            opt = torch.optim.Adam([z], lr=config.learning_rate,
                                   betas=(config.adam_beta1, config.adam_beta2))
            trace = []
            diverged = False
            for it in range(1, config.iterations + 1):
                try:
                    total, c, p = total_loss(generator(z), y_t, mask_t, critic,
                                             config.perceptual_weight, config.perceptual_mode)
                except FloatingPointError:
                    total = torch.tensor(float("nan"))
                if not torch.isfinite(total):
                    warnings.warn(f"restart {restart}: non-finite loss at iteration {it}; discarding")
                    diverged = True
                    break
                trace.append((it, c.item(), p.item(), total.item()))
                opt.zero_grad()
                total.backward()
                opt.step()
                with torch.no_grad():
                    z.clamp_(-config.z_clip, config.z_clip)
            if diverged:
                continue
            final_total = trace[-1][3]
            if best is None or final_total < best[0]:
                best = (final_total, z.detach().clone(), trace)
    finally:
        for p in frozen:
            p.requires_grad_(True)
    if best is None:
        raise InpaintError("all restarts produced non-finite losses")
    _, z_star, trace = best
    generated = generate(generator, z_star)[0]
    return InpaintResult(
        z_star=z_star.squeeze(0).numpy().copy(),
        generated=generated,
        reconstructed=reconstruct(y, mask, generated),
        trace=trace,
    )


def inpaint_image(generator, critic, enhancer, y, mask, config: InpaintConfig):
    """Full completion: optimize the latent, blend, optionally enhance.

    Returns (InpaintResult, final image). With no enhancer the final image
    is the blended reconstruction itself.
    """
    result = optimize_latent(generator, critic, y, mask, config)
    final = result.reconstructed
    if enhancer is not None:
        from .enhance import enhance

        final = enhance(enhancer, final)
    return result, final
