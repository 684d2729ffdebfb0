"""inpaintlab: WGAN-GP training, latent-space image completion, residual
enhancement, and PSNR/SSIM evaluation behind one seeded, file-based pipeline."""

from .config import (ConfigError, apply_seed_override, config_hash, load_config_file,
                     validate_config)
from .data import (DataError, DatasetSplit, DegradationSpec, MaskSpec, apply_mask,
                   build_degraded_pairs, denormalize, generate_mask,
                   generate_synthetic_dataset, load_dataset, normalize_u8,
                   synthesize_degraded_pair)
from .enhance import (EnhanceConfig, EnhancerNet, enhance, enhance_loss, load_enhancer,
                      residual_forward, train_enhancer)
from .inpaint import (InpaintConfig, InpaintError, InpaintResult, contextual_loss,
                      inpaint_image, optimize_latent, perceptual_loss, reconstruct,
                      total_loss)
from .metrics import (MetricsError, MetricsReport, SsimParams, evaluate_set,
                      gaussian_window, luma, mse, psnr, ssim)
from .plots import PlotError, emit_plot, read_history_csv
from .rundir import RunDir, RunDirError, RunLock
from .seeding import derive_seed
from .wgan import (Critic, GanConfig, Generator, TrainingDivergedError, critic_loss,
                   generate, generator_loss, gradient_penalty, init_weights,
                   load_critic, load_generator, sample_latent, train_gan,
                   wasserstein_estimate)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
