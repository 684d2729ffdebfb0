"""Model checkpointing: torch weight containers with JSON sidecar manifests.

A checkpoint is a pair of files: ``<name>.pt`` holding the state dict (and
optionally resumable training state) and ``<name>.manifest.json`` describing
the architecture so a loader can rebuild the module and refuse mismatches.
"""

import json
from pathlib import Path

import torch

CHECKPOINT_KINDS = ("generator", "critic", "enhancer")

# manifest schema; depth/z_dim are null when not applicable to the kind
MANIFEST_FIELDS = ("kind", "z_dim", "image_size", "base_width", "depth", "step", "seed", "config_sha256")


class CheckpointError(Exception):
    """Missing, corrupt, or architecture-incompatible checkpoint."""


def manifest_path(path) -> Path:
    return Path(path).with_suffix(".manifest.json")


def save_checkpoint(module: torch.nn.Module, manifest: dict, path, extra_state: dict | None = None) -> Path:
    """Write weights (+ optional training state) and the sidecar manifest atomically."""
    from .rundir import atomic_write_text, atomic_torch_save

    path = Path(path)
    if manifest.get("kind") not in CHECKPOINT_KINDS:
        raise CheckpointError(f"manifest kind must be one of {CHECKPOINT_KINDS}, got {manifest.get('kind')!r}")
    record = {name: manifest.get(name) for name in MANIFEST_FIELDS}
    payload = {"state_dict": module.state_dict()}
    if extra_state:
        payload["extra_state"] = extra_state
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_torch_save(payload, path)
    atomic_write_text(manifest_path(path), json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path, expected_kind: str | None = None):
    """Load (state_dict, manifest, extra_state) from a checkpoint pair.

    Raises CheckpointError when files are missing or the manifest kind is
    not the expected one; architecture mismatches surface when the caller
    loads the state dict into a rebuilt module (see ``load_into``).
    """
    path = Path(path)
    mpath = manifest_path(path)
    if not path.exists() or not mpath.exists():
        raise CheckpointError(f"checkpoint incomplete: need both {path.name} and {mpath.name}")
    manifest = json.loads(mpath.read_text())
    if expected_kind is not None and manifest.get("kind") != expected_kind:
        raise CheckpointError(
            f"{path.name}: expected a {expected_kind} checkpoint, manifest says {manifest.get('kind')!r}"
        )
    payload = torch.load(path, map_location="cpu", weights_only=False)
    return payload["state_dict"], manifest, payload.get("extra_state")


def load_into(module: torch.nn.Module, state_dict, manifest) -> torch.nn.Module:
    """Load weights into a module rebuilt from ``manifest``, failing loudly on mismatch."""
    try:
        module.load_state_dict(state_dict, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(
            f"checkpoint does not match the {manifest.get('kind')} architecture described by its "
            f"manifest ({ {k: manifest.get(k) for k in ('z_dim', 'image_size', 'base_width', 'depth')} }): {exc}"
        ) from None
    return module
