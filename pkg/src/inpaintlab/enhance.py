"""Residual enhancement network: predict the degradation, subtract it.

A small fully-convolutional denoiser R is trained on (degraded, clean)
pairs to regress the residual v = degraded - clean; the enhanced image is
clip(y - R(y), [-1, 1]). Because the net is fully convolutional it runs at
any spatial size at least as large as its kernel.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .data import images_to_tensor, tensor_to_images
from .rundir import RunDir, atomic_write_csv
from .wgan import TrainingDivergedError, init_weights

ENHANCE_HISTORY_HEADER = ("epoch", "mean_loss")
PAIR_SOURCES = ("synthetic", "provided-pairs")
KERNEL_SIZE = 3


@dataclass
class EnhanceConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    depth: int = 10
    width: int = 64
    pair_source: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "depth", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"EnhanceConfig.{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("EnhanceConfig.epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("EnhanceConfig.learning_rate must be > 0")
        if self.depth < 3:
            raise ValueError("EnhanceConfig.depth must be >= 3 (first, middle, last layers)")
        if self.pair_source not in PAIR_SOURCES:
            raise ValueError(f"EnhanceConfig.pair_source must be one of {PAIR_SOURCES}")


class EnhancerNet(nn.Module):
    """Conv+ReLU, then (depth-2) Conv+BN+ReLU blocks, then a bare Conv to 3 channels."""

    def __init__(self, depth=10, width=64):
        super().__init__()
        if depth < 3:
            raise ValueError("depth must be >= 3")
        self.depth = depth
        self.width = width
        layers = [nn.Conv2d(3, width, KERNEL_SIZE, padding=1), nn.ReLU(inplace=True)]
        for _ in range(depth - 2):
            layers += [
                nn.Conv2d(width, width, KERNEL_SIZE, padding=1, bias=False),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
        layers.append(nn.Conv2d(width, 3, KERNEL_SIZE, padding=1))
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected an (N, 3, H, W) batch, got {tuple(x.shape)}")
        if x.shape[2] < KERNEL_SIZE or x.shape[3] < KERNEL_SIZE:
            raise ValueError(f"spatial size {tuple(x.shape[2:])} is below the {KERNEL_SIZE}x{KERNEL_SIZE} kernel support")
        return self.layers(x)


def residual_forward(net: EnhancerNet, y: np.ndarray) -> np.ndarray:
    """Predicted residual R(y) with inference-mode normalization statistics."""
    single = y.ndim == 3
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            out = net(images_to_tensor(y))
    finally:
        net.train(was_training)
    out = np.transpose(out.numpy(), (0, 2, 3, 1)).astype(np.float32)
    return out[0] if single else out


def enhance(net: EnhancerNet, y: np.ndarray) -> np.ndarray:
    """clip(y - R(y), [-1, 1])."""
    return np.clip(y - residual_forward(net, y), -1.0, 1.0).astype(np.float32)


def enhance_loss(net: EnhancerNet, degraded: torch.Tensor, clean: torch.Tensor) -> torch.Tensor:
    """(1/2N) * sum over the batch of ||R(y_i) - (y_i - x_i)||^2, N = batch count."""
    if degraded.shape != clean.shape:
        raise ValueError(f"pair shapes differ: {tuple(degraded.shape)} vs {tuple(clean.shape)}")
    if degraded.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    target = degraded - clean
    diff = net(degraded) - target
    return diff.pow(2).sum() / (2 * degraded.shape[0])


def _manifest(config: EnhanceConfig, epoch: int, config_sha256: str) -> dict:
    return {
        "kind": "enhancer",
        "z_dim": None,
        "image_size": None,
        "base_width": config.width,
        "depth": config.depth,
        "step": epoch,
        "seed": config.seed,
        "config_sha256": config_sha256,
    }


def train_enhancer(pairs, config: EnhanceConfig, run_dir, config_sha256=""):
    """Adam over shuffled mini-batches of (clean, degraded) pairs.

    ``pairs`` is a (clean, degraded) tuple of (N, H, W, 3) arrays. History
    holds one (epoch, mean_loss) row per epoch where mean_loss is the
    epoch-level value of the training objective (batch losses weighted by
    batch size). Returns (net, history).
    """
    clean_np, degraded_np = pairs
    if clean_np.shape != degraded_np.shape:
        raise ValueError(f"pair arrays differ in shape: {clean_np.shape} vs {degraded_np.shape}")
    n = clean_np.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 training pairs, got {n}")
    run = RunDir(run_dir).ensure()
    clean = images_to_tensor(clean_np)
    degraded = images_to_tensor(degraded_np)

    net = EnhancerNet(config.depth, config.width)
    rng = torch.Generator().manual_seed(config.seed)
    init_weights(net, rng)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    history: list[tuple] = []
    checkpoint_path = run.checkpoints / "enhancer_final.pt"
    save_checkpoint(net, _manifest(config, 0, config_sha256), checkpoint_path)
    net.train()
    for epoch in range(1, config.epochs + 1):
        order = torch.randperm(n, generator=rng)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = enhance_loss(net, degraded[idx], clean[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"enhancer loss non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
        history.append((epoch, loss_sum / n))
        atomic_write_csv(run.history / "enhance.csv", ENHANCE_HISTORY_HEADER, history)
    if config.epochs == 0:
        atomic_write_csv(run.history / "enhance.csv", ENHANCE_HISTORY_HEADER, history)
    net.eval()
    save_checkpoint(net, _manifest(config, config.epochs, config_sha256), checkpoint_path)
    return net, history


def load_enhancer(path) -> EnhancerNet:
    sd, manifest, _ = load_checkpoint(path, expected_kind="enhancer")
    net = EnhancerNet(manifest["depth"], manifest["base_width"])
    load_into(net, sd, manifest)
    net.eval()
    return net
