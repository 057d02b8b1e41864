"""Persistence: CSV tables, raw field dumps and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import __version__


def fmt(x) -> str:
    """17 significant digits for floats, plain text otherwise; None prints empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def write_field(path: Path, values: np.ndarray, axes: dict[str, np.ndarray], domain: str) -> tuple[Path, Path]:
    """Raw little-endian float64 array plus a text header with dims and spacing."""
    path = Path(path)
    data = np.ascontiguousarray(values, dtype="<f8")
    bin_path = path.with_suffix(".bin")
    hdr_path = path.with_suffix(".hdr")
    data.tofile(bin_path)
    lines = ["dtype = float64 little-endian", "order = C", f"dims = {' '.join(str(n) for n in data.shape)}", f"domain = {domain}"]
    for name, ax in axes.items():
        ax = np.asarray(ax, float)
        step = float(ax[1] - ax[0]) if ax.size > 1 else 0.0
        lines.append(f"axis.{name} = start {fmt(ax[0])} spacing {fmt(step)} count {ax.size}")
    hdr_path.write_text("\n".join(lines) + "\n")
    return bin_path, hdr_path


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, command: str, config_text: str, files: Sequence[Path], started: float, seed: int) -> Path:
    out = Path(out)
    manifest = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": seed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "config": config_text,
        "files": {Path(f).name: sha256(Path(f)) for f in files},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
