"""Volumes, the RVOL container, CSV manifests and the blob phantom generator.

RVOL layout (little endian)::

    b"RVOL\\x00\\x01" | u32 d | u32 h | u32 w | d*h*w float32, (i, j, k) row-major

Manifests are headerless UTF-8 CSV with two columns ``path,label``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from muval.errors import ConfigError, ContractError, FormatError, NumericError, ParseError

MAGIC = b"RVOL\x00\x01"
_HEADER = struct.Struct("<6sIII")


@dataclass(eq=False)
class Volume:
    """A (depth, height, width) scalar field; ``voxels[i, j, k]``."""

    voxels: np.ndarray

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ContractError(f"volume must be 3D with positive extents, got {self.voxels.shape}")
        if not np.isfinite(self.voxels).all():
            raise NumericError("volume contains non-finite voxels")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    d = property(lambda self: self.voxels.shape[0])
    h = property(lambda self: self.voxels.shape[1])
    w = property(lambda self: self.voxels.shape[2])

    def __eq__(self, other) -> bool:
        return isinstance(other, Volume) and np.array_equal(self.voxels, other.voxels)


@dataclass(eq=False)
class Sample:
    volume: Volume
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 (non-R0) or 1 (R0), got {self.label}")


def write_volume(v: Volume, path) -> None:
    d, h, w = v.shape
    payload = np.ascontiguousarray(v.voxels, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, d, h, w) + payload)


def read_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, d, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if min(d, h, w) < 1:
        raise FormatError(f"{path}: non-positive extents ({d}, {h}, {w})")
    expected = d * h * w * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"{path}: payload is {len(body)} bytes, extents need {expected}")
    return Volume(np.frombuffer(body, dtype="<f4").reshape(d, h, w).astype(np.float32))


def load_manifest(path) -> list[tuple[str, int]]:
    """Parse ``path,label`` rows in file order. Volume files are not touched."""
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 'path,label', got {row!r}", lineno)
            label = row[1].strip()
            if label not in ("0", "1"):
                raise ParseError(f"label {label!r} not in {{0, 1}}", lineno)
            entries.append((row[0].strip(), int(label)))
    return entries


def write_manifest(entries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for p, label in entries:
            writer.writerow([p, int(label)])


def load_samples(manifest_path) -> list[Sample]:
    """Read every volume named by a manifest; relative paths resolve next to it."""
    root = Path(manifest_path).parent
    samples = []
    for p, label in load_manifest(manifest_path):
        vp = Path(p)
        samples.append(Sample(read_volume(vp if vp.is_absolute() else root / vp), label))
    return samples


@dataclass(frozen=True)
class BlobSpec:
    """Phantom calibration: R0 volumes hold one large region, non-R0 several small ones.

    Radii are fractions of the smallest volume extent.
    """

    pos_count: tuple[int, int] = (1, 1)
    pos_radius: tuple[float, float] = (0.20, 0.35)
    neg_count: tuple[int, int] = (3, 6)
    neg_radius: tuple[float, float] = (0.04, 0.10)
    noise_sigma: float = 0.05
    intensity: tuple[float, float] = (0.7, 1.0)

    def __post_init__(self):
        for lo, hi in (self.pos_radius, self.neg_radius):
            if not (0 < lo <= hi < 0.5):
                raise ConfigError(f"radius range ({lo}, {hi}) must lie in (0, 0.5)")
        for lo, hi in (self.pos_count, self.neg_count):
            if not (0 <= lo <= hi):
                raise ConfigError(f"bad blob count range ({lo}, {hi})")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


def generate_synthetic(spec: BlobSpec, shape: tuple[int, int, int], label: int, seed: int) -> Sample:
    """Deterministic blob phantom for ``label`` drawn from a PCG64 stream."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 8:
        raise ConfigError(f"phantom extents must all be >= 8, got {shape}")
    count_rng, radius_rng = (spec.pos_count, spec.pos_radius) if label == 1 else (spec.neg_count, spec.neg_radius)
    base = min(shape)
    if count_rng[1] > 0 and radius_rng[0] * base < 0.5:
        raise ConfigError(f"extent {base} too small for minimum radius fraction {radius_rng[0]}")

    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, spec.noise_sigma, size=shape) if spec.noise_sigma > 0 else np.zeros(shape)
    vol = np.clip(noise, 0.0, 0.2)
    grid = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    for _ in range(int(rng.integers(count_rng[0], count_rng[1] + 1))):
        radii = rng.uniform(radius_rng[0], radius_rng[1], size=3) * base
        # centres keep every blob at least half inside the volume
        centre = [rng.uniform(min(r, n / 2), max(n - 1 - r, n / 2)) for r, n in zip(radii, shape)]
        inside = sum(((g - c) / r) ** 2 for g, c, r in zip(grid, centre, radii)) <= 1.0
        vol = vol + inside * rng.uniform(*spec.intensity)
    return Sample(Volume(np.clip(vol, 0.0, 1.0)), label)
