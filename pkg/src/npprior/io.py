"""File formats: density JSON (schema v1), CSV tables and raw f64le sample dumps."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .density import SUM_TOL, BinnedDensity, GridSpec
from .errors import NPPriorError

DENSITY_VERSION = 1
F64LE_MAGIC = b"NPPR"
F64LE_VERSION = 1
F64LE_HEADER = struct.Struct("<4sIII")


class DensityFileError(NPPriorError, ValueError):
    """A density file is malformed; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def fmt_float(x: float) -> str:
    """17 significant digits, enough to round-trip any float64."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    return format(x, ".17g")


def _encode(obj, indent: str = "") -> str:
    inner = indent + "  "
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_encode(v, inner)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + indent + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if not len(obj):
            return "[]"
        items = [f"{inner}{_encode(v, inner)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + indent + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def density_to_text(density: BinnedDensity, metadata: dict | None = None) -> str:
    meta = {"created_by": f"npprior {__version__}"}
    meta.update(metadata or {})
    doc = {
        "version": DENSITY_VERSION,
        "grid": {"min": density.grid.min, "max": density.grid.max, "n": density.grid.n},
        "metadata": meta,
        "mass": density.mass,
    }
    return _encode(doc) + "\n"


def write_density(path, density: BinnedDensity, metadata: dict | None = None) -> None:
    Path(path).write_text(density_to_text(density, metadata), encoding="utf-8")


def density_from_text(text: str) -> tuple[BinnedDensity, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DensityFileError("document", f"not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DensityFileError("document", "top level must be an object")
    if doc.get("version") != DENSITY_VERSION:
        raise DensityFileError("version", f"expected {DENSITY_VERSION}, got {doc.get('version')!r}")

    grid_doc = doc.get("grid")
    if not isinstance(grid_doc, dict):
        raise DensityFileError("grid", "missing or not an object")
    values = {}
    for key in ("min", "max", "n"):
        v = grid_doc.get(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise DensityFileError(f"grid.{key}", "missing or not a number")
        values[key] = v
    if int(values["n"]) != values["n"]:
        raise DensityFileError("grid.n", "must be an integer")
    try:
        grid = GridSpec(float(values["min"]), float(values["max"]), int(values["n"]))
    except ValueError as exc:
        raise DensityFileError("grid", str(exc)) from None

    mass = doc.get("mass")
    if not isinstance(mass, list):
        raise DensityFileError("mass", "missing or not an array")
    if len(mass) != grid.n:
        raise DensityFileError("mass", f"has {len(mass)} entries, grid.n is {grid.n}")
    for i, v in enumerate(mass):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DensityFileError(f"mass[{i}]", "not a finite number")
        if v < 0:
            raise DensityFileError(f"mass[{i}]", "negative")
    arr = np.array(mass, dtype=np.float64)
    if abs(arr.sum() - 1.0) > SUM_TOL:
        raise DensityFileError("mass", f"sums to {arr.sum()!r}, expected 1")

    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise DensityFileError("metadata", "must be an object")
    return BinnedDensity(grid, arr), metadata


def read_density(path) -> tuple[BinnedDensity, dict]:
    return density_from_text(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_samples_csv(fh, data: np.ndarray) -> None:
    """One line per sample, ``d`` comma-separated columns, no header."""
    for row in data:
        fh.write(",".join(fmt_float(v) for v in row))
        fh.write("\n")


def write_samples_f64le(fh, data: np.ndarray) -> None:
    """16-byte header (magic, u32 d, u32 count, u32 format version) then row-major f64le."""
    count, d = data.shape
    fh.write(F64LE_HEADER.pack(F64LE_MAGIC, d, count, F64LE_VERSION))
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_samples_f64le(buf: bytes) -> np.ndarray:
    magic, d, count, _ = F64LE_HEADER.unpack_from(buf, 0)
    if magic != F64LE_MAGIC:
        raise ValueError("not an NPPR sample file")
    body = np.frombuffer(buf, dtype="<f8", offset=F64LE_HEADER.size)
    if body.size != d * count:
        raise ValueError(f"expected {d * count} values, found {body.size}")
    return body.reshape(count, d)
