"""Run-directory layout, locking, and atomic file writes.

Every experiment artifact lives under one run directory:

    config.json          normalized configuration (written first)
    data/                prepared dataset + load report
    masks/               exported 1-bit mask PNGs
    checkpoints/         model weights + manifests
    history/*.csv        training loss curves
    samples/*.png        generator preview grids
    results/<id>/        per-image inpainting outputs
    report/              metrics.csv / metrics.json
    plots/               rendered figures + machine-readable summaries

Files are written via a temp-then-rename discipline so interrupted runs
leave either absent or complete files, never partial ones.
"""

import json
import os
from pathlib import Path

import torch

RUN_ROOT_ENV = "INPAINT_LAB_RUN_ROOT"
LOCK_NAME = ".lock"


class RunDirError(Exception):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def format_csv_value(value) -> str:
    """Render a CSV cell; floats use repr for shortest exact round-trip."""
    if isinstance(value, bool):
        raise TypeError("booleans have no CSV representation here")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def atomic_write_csv(path, header, rows) -> None:
    """Write an RFC 4180 CSV (CRLF line endings, header row first)."""
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_csv_value(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def atomic_torch_save(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def atomic_save_image(path, image) -> None:
    """Atomically write an ImageTensor as PNG."""
    import io

    from .data import denormalize, require_image_tensor
    from PIL import Image

    require_image_tensor(image)
    buf = io.BytesIO()
    Image.fromarray(denormalize(image)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


class RunDir:
    """Typed access to the run-directory layout."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def masks(self) -> Path:
        return self.root / "masks"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def history(self) -> Path:
        return self.root / "history"

    @property
    def samples(self) -> Path:
        return self.root / "samples"

    @property
    def results(self) -> Path:
        return self.root / "results"

    @property
    def report(self) -> Path:
        return self.root / "report"

    @property
    def plots(self) -> Path:
        return self.root / "plots"

    def ensure(self) -> "RunDir":
        self.root.mkdir(parents=True, exist_ok=True)
        return self


def default_run_root() -> Path | None:
    root = os.environ.get(RUN_ROOT_ENV)
    return Path(root) if root else None


class RunLock:
    """Exclusive ownership of a run directory via an O_EXCL lock file."""

    def __init__(self, run_dir):
        self.path = Path(run_dir) / LOCK_NAME
        self._fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            owner = "unknown"
            try:
                owner = self.path.read_text().strip() or owner
            except OSError:
                pass
            raise RunDirError(
                f"run directory is locked (pid {owner}); remove {self.path} if the owner is gone"
            ) from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        self.path.unlink(missing_ok=True)
        return False
