"""Deterministic seed derivation.

Every run is driven by one global seed. Subsystems (data generation, GAN
training, masking, ...) get their own independent streams by hashing the
global seed together with a label, so adding a consumer never perturbs the
streams of existing ones.
"""

import hashlib

# torch.Generator.manual_seed takes a signed 64-bit value; stay non-negative.
_SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, label: str) -> int:
    """Derive a child seed from ``seed`` for the subsystem named ``label``."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _SEED_MASK
