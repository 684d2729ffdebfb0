"""Experiment configuration: strict JSON schema, defaults, seed fan-out.

Unknown keys are rejected and every violation is reported with its JSON
path in one pass. Validation materializes all defaults, including the
per-section seeds derived from the global seed, so the normalized copy
persisted into a run directory fully describes the run. The SHA-256 of
the normalized document (canonical form) is the run's config hash.
"""

import copy
import hashlib
import json
from pathlib import Path

from .data import MASK_KINDS, DegradationSpec, MaskSpec
from .enhance import PAIR_SOURCES, EnhanceConfig
from .inpaint import PERCEPTUAL_MODES, InpaintConfig
from .metrics import SsimParams
from .seeding import derive_seed
from .wgan import GP_MODES, GanConfig

DATA_SOURCES = ("synthetic", "directory")


class ConfigError(Exception):
    """One or more validation failures; str() lists every path: message pair."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}: {m}" for p, m in self.errors))


class _Checker:
    """Collects (json-path, message) pairs while pulling typed values from one section."""

    def __init__(self, section: str, doc: dict, errors: list):
        self.section = section
        self.doc = doc
        self.errors = errors
        self.seen = set()

    def _path(self, key):
        return f"{self.section}.{key}" if self.section else key

    def fail(self, key, message):
        self.errors.append((self._path(key), message))

    def take(self, key, default, kinds, predicate=None, message="", allow_none=False):
        self.seen.add(key)
        if key not in self.doc:
            return default
        value = self.doc[key]
        if value is None and allow_none:
            return None
        # bool is an int subclass; never accept it where a number is expected
        if isinstance(value, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
            self.fail(key, f"expected {self._kind_name(kinds)}, got a boolean")
            return default
        if not isinstance(value, kinds):
            self.fail(key, f"expected {self._kind_name(kinds)}, got {type(value).__name__}")
            return default
        if isinstance(value, int) and not isinstance(value, bool) and kinds == (int, float):
            value = float(value)
        if predicate is not None and not predicate(value):
            self.fail(key, message)
            return default
        return value

    @staticmethod
    def _kind_name(kinds):
        names = {int: "an integer", float: "a number", (int, float): "a number",
                 str: "a string", dict: "an object"}
        return names.get(kinds, "a value")

    def reject_unknown(self):
        for key in self.doc:
            if key not in self.seen:
                self.fail(key, "unknown key")


def _int(c, key, default, low=None, allow_none=False):
    message = f"must be an integer >= {low}"
    return c.take(key, default, int, None if low is None else (lambda v: v >= low), message,
                  allow_none=allow_none)


def _num(c, key, default, predicate=None, message=""):
    return c.take(key, default, (int, float), predicate, message)


def _enum(c, key, default, choices):
    return c.take(key, default, str, lambda v: v in choices, f"must be one of {list(choices)}")


def _section(doc: dict, key: str, errors: list) -> dict:
    value = doc.get(key, {})
    if not isinstance(value, dict):
        errors.append((key, f"expected an object, got {type(value).__name__}"))
        return {}
    return value


def _seed_field(c, key="seed"):
    # None means "derive from the global seed" and is filled in afterwards
    return _int(c, key, None, low=0, allow_none=True)


def validate_config(doc) -> dict:
    """Normalize a raw JSON document; raises ConfigError listing all violations."""
    if not isinstance(doc, dict):
        raise ConfigError([("", f"top-level document must be an object, got {type(doc).__name__}")])
    errors: list = []
    top = _Checker("", doc, errors)
    seed = _int(top, "seed", 0, low=0)

    c = _Checker("data", _section(doc, "data", errors), errors)
    top.seen.add("data")
    data = {
        "source": _enum(c, "source", "synthetic", DATA_SOURCES),
        "path": c.take("path", None, str, allow_none=True),
        "count": _int(c, "count", 256, low=2),
        "image_size": c.take("image_size", 32, int,
                             lambda v: v >= 8 and v & (v - 1) == 0,
                             "must be a power of two >= 8"),
        "split_fraction": _num(c, "split_fraction", 0.9, lambda v: 0.0 < v < 1.0,
                               "must be strictly between 0 and 1"),
        "seed": _seed_field(c),
    }
    if data["source"] == "directory" and data["path"] is None:
        c.fail("path", "required when source is 'directory'")
    c.reject_unknown()

    c = _Checker("mask", _section(doc, "mask", errors), errors)
    top.seen.add("mask")
    mask = {
        "kind": _enum(c, "kind", "center-box", MASK_KINDS),
        "fraction": _num(c, "fraction", 0.25, lambda v: 0.0 < v < 1.0,
                         "must be strictly between 0 and 1"),
        "seed": _seed_field(c),
    }
    c.reject_unknown()

    c = _Checker("gan", _section(doc, "gan", errors), errors)
    top.seen.add("gan")
    gan = {
        "z_dim": _int(c, "z_dim", 100, low=1),
        "base_width": _int(c, "base_width", 32, low=1),
        "lambda_gp": _num(c, "lambda_gp", 10.0, lambda v: v > 0, "must be > 0"),
        "n_critic": _int(c, "n_critic", 5, low=1),
        "batch_size": _int(c, "batch_size", 64, low=1),
        "learning_rate": _num(c, "learning_rate", 1e-4, lambda v: v > 0, "must be > 0"),
        "adam_beta1": _num(c, "adam_beta1", 0.5, lambda v: 0.0 < v < 1.0, "must be in (0, 1)"),
        "adam_beta2": _num(c, "adam_beta2", 0.9, lambda v: 0.0 < v < 1.0, "must be in (0, 1)"),
        "total_steps": _int(c, "total_steps", 2000, low=0),
        "checkpoint_interval": _int(c, "checkpoint_interval", 500, low=1),
        "gp_mode": _enum(c, "gp_mode", "interpolate", GP_MODES),
        "seed": _seed_field(c),
    }
    c.reject_unknown()

    c = _Checker("inpaint", _section(doc, "inpaint", errors), errors)
    top.seen.add("inpaint")
    inpaint = {
        "perceptual_weight": _num(c, "perceptual_weight", 0.1, lambda v: v >= 0, "must be >= 0"),
        "iterations": _int(c, "iterations", 1500, low=1),
        "learning_rate": _num(c, "learning_rate", 0.03, lambda v: v >= 0, "must be >= 0"),
        "adam_beta1": _num(c, "adam_beta1", 0.9, lambda v: 0.0 < v < 1.0, "must be in (0, 1)"),
        "adam_beta2": _num(c, "adam_beta2", 0.999, lambda v: 0.0 < v < 1.0, "must be in (0, 1)"),
        "z_clip": _num(c, "z_clip", 1.0, lambda v: v > 0, "must be > 0"),
        "restarts": _int(c, "restarts", 1, low=1),
        "perceptual_mode": _enum(c, "perceptual_mode", "log-sigmoid", PERCEPTUAL_MODES),
        "num_images": _int(c, "num_images", 20, low=1),
        "seed": _seed_field(c),
    }
    c.reject_unknown()

    c = _Checker("enhance", _section(doc, "enhance", errors), errors)
    top.seen.add("enhance")
    enhance = {
        "epochs": _int(c, "epochs", 50, low=0),
        "batch_size": _int(c, "batch_size", 32, low=1),
        "learning_rate": _num(c, "learning_rate", 1e-3, lambda v: v > 0, "must be > 0"),
        "depth": _int(c, "depth", 10, low=3),
        "width": _int(c, "width", 64, low=1),
        "pair_source": _enum(c, "pair_source", "synthetic", PAIR_SOURCES),
        "num_pairs": _int(c, "num_pairs", 500, low=2),
        "pair_dir": c.take("pair_dir", None, str, allow_none=True),
        "seed": _seed_field(c),
    }
    if enhance["pair_source"] == "provided-pairs" and enhance["pair_dir"] is None:
        c.fail("pair_dir", "required when pair_source is 'provided-pairs'")
    d = _Checker("enhance.degradation", c.take("degradation", {}, dict) or {}, errors)
    enhance["degradation"] = {
        "noise_sigma": _num(d, "noise_sigma", 0.1, lambda v: v >= 0, "must be >= 0"),
        "blur_sigma": _num(d, "blur_sigma", 1.0, lambda v: v >= 0, "must be >= 0"),
        "blur_kernel_size": d.take("blur_kernel_size", 5, int,
                                   lambda v: v >= 1 and v % 2 == 1, "must be an odd integer >= 1"),
        "seed": _seed_field(d),
    }
    d.reject_unknown()
    c.reject_unknown()

    c = _Checker("metrics", _section(doc, "metrics", errors), errors)
    top.seen.add("metrics")
    metrics = {
        "alpha": _num(c, "alpha", 1.0, lambda v: v > 0, "must be > 0"),
        "beta": _num(c, "beta", 1.0, lambda v: v > 0, "must be > 0"),
        "gamma": _num(c, "gamma", 1.0, lambda v: v > 0, "must be > 0"),
        "k1": _num(c, "k1", 0.01, lambda v: v > 0, "must be > 0"),
        "k2": _num(c, "k2", 0.03, lambda v: v > 0, "must be > 0"),
        "window_size": c.take("window_size", 11, int, lambda v: v >= 1 and v % 2 == 1,
                              "must be an odd integer >= 1"),
        "window_sigma": _num(c, "window_sigma", 1.5, lambda v: v > 0, "must be > 0"),
        "dynamic_range": _num(c, "dynamic_range", 255.0, lambda v: v > 0, "must be > 0"),
    }
    c.reject_unknown()
    top.reject_unknown()
    if errors:
        raise ConfigError(errors)

    normalized = {"seed": seed, "data": data, "mask": mask, "gan": gan,
                  "inpaint": inpaint, "enhance": enhance, "metrics": metrics}
    for name, section in (("data", data), ("mask", mask), ("gan", gan),
                          ("inpaint", inpaint), ("enhance", enhance)):
        if section["seed"] is None:
            section["seed"] = derive_seed(seed, name)
    if enhance["degradation"]["seed"] is None:
        enhance["degradation"]["seed"] = derive_seed(seed, "enhance/degradation")
    return normalized


def apply_seed_override(doc: dict, seed: int) -> dict:
    """Re-root every seed at `seed`: drops explicit section seeds so
    validation re-derives them all from the new global value."""
    doc = copy.deepcopy(doc)
    doc["seed"] = seed
    for key in ("data", "mask", "gan", "inpaint", "enhance"):
        section = doc.get(key)
        if isinstance(section, dict):
            section.pop("seed", None)
    degradation = doc.get("enhance", {})
    if isinstance(degradation, dict):
        degradation = degradation.get("degradation")
        if isinstance(degradation, dict):
            degradation.pop("seed", None)
    return doc


def config_hash(normalized: dict) -> str:
    canonical = json.dumps(normalized, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config_file(path) -> dict:
    """Parse a JSON config file; malformed JSON reports line and column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([("", f"cannot read config file {path}: {exc}")]) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from exc


# ---------------------------------------------------------------------------
# typed views of a normalized config


def mask_spec(normalized: dict) -> MaskSpec:
    m = normalized["mask"]
    return MaskSpec(kind=m["kind"], fraction=m["fraction"], seed=m["seed"])


def degradation_spec(normalized: dict) -> DegradationSpec:
    d = normalized["enhance"]["degradation"]
    return DegradationSpec(noise_sigma=d["noise_sigma"], blur_sigma=d["blur_sigma"],
                           blur_kernel_size=d["blur_kernel_size"], seed=d["seed"])


def gan_config(normalized: dict) -> GanConfig:
    g = normalized["gan"]
    return GanConfig(latent_dim=g["z_dim"], base_width=g["base_width"], lambda_gp=g["lambda_gp"],
                     n_critic=g["n_critic"], batch_size=g["batch_size"],
                     learning_rate=g["learning_rate"], adam_beta1=g["adam_beta1"],
                     adam_beta2=g["adam_beta2"], total_steps=g["total_steps"],
                     checkpoint_interval=g["checkpoint_interval"], gp_mode=g["gp_mode"],
                     seed=g["seed"])


def inpaint_config(normalized: dict, seed=None) -> InpaintConfig:
    i = normalized["inpaint"]
    return InpaintConfig(perceptual_weight=i["perceptual_weight"], iterations=i["iterations"],
                         learning_rate=i["learning_rate"], adam_beta1=i["adam_beta1"],
                         adam_beta2=i["adam_beta2"], z_clip=i["z_clip"], restarts=i["restarts"],
                         perceptual_mode=i["perceptual_mode"],
                         seed=i["seed"] if seed is None else seed)


def enhance_config(normalized: dict) -> EnhanceConfig:
    e = normalized["enhance"]
    return EnhanceConfig(epochs=e["epochs"], batch_size=e["batch_size"],
                         learning_rate=e["learning_rate"], depth=e["depth"], width=e["width"],
                         pair_source=e["pair_source"], seed=e["seed"])


def ssim_params(normalized: dict) -> SsimParams:
    m = normalized["metrics"]
    return SsimParams(alpha=m["alpha"], beta=m["beta"], gamma=m["gamma"], k1=m["k1"], k2=m["k2"],
                      window_size=m["window_size"], window_sigma=m["window_sigma"],
                      dynamic_range=m["dynamic_range"])
