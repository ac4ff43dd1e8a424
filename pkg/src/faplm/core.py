"""Shared domain types, validation and the random-number contract."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# stream identifiers; a stream is further split into counter-addressed substreams
STREAM_SIMULATION = 1
STREAM_BOOTSTRAP = 2
STREAM_CV = 3


class FaplmError(Exception):
    """Base class for errors raised by the estimation pipeline."""


class DimensionError(FaplmError, ValueError):
    pass


class NonFiniteError(FaplmError, ValueError):
    pass


class RankDeficientError(FaplmError, np.linalg.LinAlgError):
    pass


class InfeasibleError(FaplmError):
    pass


class DegenerateFitError(FaplmError):
    pass


def _frozen_array(a, ndim, name):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observed response ``y`` (n,), covariates ``x`` (n, p) and scalar ``z`` (n,)."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen_array(self.y, 1, "y"))
        object.__setattr__(self, "x", _frozen_array(self.x, 2, "x"))
        object.__setattr__(self, "z", _frozen_array(self.z, 1, "z"))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def _first_nonfinite(a):
    idx = np.argwhere(~np.isfinite(a))
    return tuple(int(i) for i in idx[0]) if idx.size else None


def validate_dataset(d: Dataset) -> Dataset:
    """Check shapes and finiteness; return ``d`` unchanged when valid."""
    n = d.y.shape[0]
    if d.x.shape[0] != n or d.z.shape[0] != n:
        raise DimensionError(
            f"row counts differ: y has {n}, x has {d.x.shape[0]}, z has {d.z.shape[0]}"
        )
    if n < 2:
        raise DimensionError(f"need at least 2 observations, got {n}")
    if d.x.shape[1] < 1:
        raise DimensionError("x must have at least one column")
    for name, arr in (("y", d.y), ("x", d.x), ("z", d.z)):
        loc = _first_nonfinite(arr)
        if loc is not None:
            where = f"index {loc[0]}" if len(loc) == 1 else f"row {loc[0]}, column {loc[1]}"
            raise NonFiniteError(f"non-finite entry in {name} at {where}")
    return d


@dataclass(frozen=True)
class AffineMap:
    """``unit = (z - offset) / scale``; ``inverse`` maps back to the original scale."""

    offset: float
    scale: float

    def forward(self, z):
        return (np.asarray(z, dtype=float) - self.offset) / self.scale

    def inverse(self, u):
        return np.asarray(u, dtype=float) * self.scale + self.offset


def rescale_z_to_unit(z) -> tuple[np.ndarray, AffineMap]:
    z = np.asarray(z, dtype=float)
    lo, hi = float(np.min(z)), float(np.max(z))
    if not hi > lo:
        raise DimensionError(
            "z has zero range; the nonparametric component is not identifiable"
        )
    zmap = AffineMap(offset=lo, scale=hi - lo)
    # clip absorbs rounding so the endpoints land exactly on 0 and 1
    return np.clip(zmap.forward(z), 0.0, 1.0), zmap


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream id for a counter-based (Philox) generator.

    ``generator(k)`` returns the k-th substream of the stream. Substreams are
    addressed through the Philox counter, so replication ``k`` draws the same
    numbers whether replications run serially, in parallel, or alone.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not 0 <= int(self.stream_id) < 2**64:
            raise ValueError("stream_id must be an unsigned 64-bit integer")

    def generator(self, substream: int = 0) -> np.random.Generator:
        key = int(self.seed) | (int(self.stream_id) << 64)
        counter = int(substream) << 128
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def with_stream(self, stream_id: int) -> RngSpec:
        return RngSpec(self.seed, stream_id)


@dataclass(frozen=True)
class GroundTruth:
    beta0: np.ndarray
    g0_values: np.ndarray
    varepsilon: np.ndarray
    f: np.ndarray
    u: np.ndarray
    loading_b: np.ndarray
    sigma_eps2: float
    phi0: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "phi0", self.loading_b.T @ self.beta0)

    def response(self) -> np.ndarray:
        return self.u @ self.beta0 + self.f @ self.phi0 + self.g0_values + self.varepsilon
