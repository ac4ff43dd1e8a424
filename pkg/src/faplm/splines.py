"""Normalized B-spline basis on [0, 1] and the projector onto its span.

Basis functions are the usual clamped B-splines scaled by ``sqrt(M_n)`` so
that every row of the basis matrix sums to ``sqrt(M_n)``, where
``M_n = k_n + order`` is the number of basis functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, RankDeficientError
from .kernels import bspline_values

DEFAULT_ORDER = 4


def default_num_knots(n_samples: int) -> int:
    """``ceil(n ** (1/9))``, guarded against round-off at exact powers."""
    return max(0, math.ceil(n_samples ** (1.0 / 9.0) - 1e-9))


@dataclass(frozen=True)
class SplineBasis:
    order: int
    n_internal_knots: int
    knot_vector: np.ndarray

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def basis_dim(self) -> int:
        return self.n_internal_knots + self.order

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "n_internal_knots": self.n_internal_knots,
            "knot_vector": [float(t) for t in self.knot_vector],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SplineBasis:
        knots = np.asarray(d["knot_vector"], dtype=float)
        knots.setflags(write=False)
        return cls(int(d["order"]), int(d["n_internal_knots"]), knots)


def build_basis(
    n_samples: int,
    smoothness_default: bool = True,
    order: int | None = None,
    k_n: int | None = None,
    knots: str = "uniform",
    z=None,
) -> SplineBasis:
    """Build a clamped B-spline basis on [0, 1].

    Parameters
    ----------
    n_samples : int
        Sample size; sets ``k_n = ceil(n ** (1/9))`` when defaults are used.
    smoothness_default : bool
        Fill a missing ``order`` with 4 (cubic) and a missing ``k_n`` with
        the sample-size rule. When False both must be given.
    order, k_n : int, optional
        Spline order (degree + 1, at least 2) and number of internal knots.
    knots : {"uniform", "quantile"}
        Internal knots equally spaced on (0, 1), or placed at empirical
        quantiles of ``z``.
    """
    if order is None:
        if not smoothness_default:
            raise ValueError("order is required when smoothness_default is False")
        order = DEFAULT_ORDER
    if k_n is None:
        if not smoothness_default:
            raise ValueError("k_n is required when smoothness_default is False")
        k_n = default_num_knots(n_samples)
    order, k_n = int(order), int(k_n)
    if order < 2:
        raise ValueError(f"spline order must be at least 2, got {order}")
    if k_n < 0:
        raise ValueError(f"number of internal knots must be nonnegative, got {k_n}")

    if knots == "uniform":
        interior = np.arange(1, k_n + 1) / (k_n + 1)
    elif knots == "quantile":
        if z is None:
            raise ValueError("quantile knots need the z sample")
        interior = np.quantile(np.asarray(z, dtype=float), np.arange(1, k_n + 1) / (k_n + 1))
        if k_n and (interior[0] <= 0.0 or interior[-1] >= 1.0 or np.any(np.diff(interior) <= 0)):
            raise ValueError("quantile knots are not strictly inside (0, 1); use uniform knots")
    else:
        raise ValueError(f"unknown knot placement {knots!r}")

    vec = np.concatenate([np.zeros(order), interior, np.ones(order)])
    vec.setflags(write=False)
    return SplineBasis(order=order, n_internal_knots=k_n, knot_vector=vec)


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    basis: SplineBasis

    @property
    def n(self) -> int:
        return self.values.shape[0]


def evaluate_basis(basis: SplineBasis, z) -> BasisMatrix:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1:
        raise DimensionError("z must be a vector")
    if np.any(~np.isfinite(z)) or np.any(z < 0.0) or np.any(z > 1.0):
        raise ValueError("basis evaluation requires every z in [0, 1]")
    vals = bspline_values(basis.knot_vector, basis.order, z)
    vals *= math.sqrt(basis.basis_dim)
    vals.setflags(write=False)
    return BasisMatrix(values=vals, basis=basis)


class BasisProjector:
    """Orthogonal projector ``H = Pi (Pi'Pi)^{-1} Pi'`` held in factored (QR) form."""

    def __init__(self, pi: np.ndarray):
        pi = np.asarray(pi, dtype=float)
        gram_eig = np.linalg.eigvalsh(pi.T @ pi) if pi.shape[1] else np.ones(1)
        if pi.shape[1] > pi.shape[0] or gram_eig[0] <= 1e-10 * gram_eig[-1]:
            raise RankDeficientError(
                f"basis Gram matrix is singular (n={pi.shape[0]}, M_n={pi.shape[1]}); "
                "too many knots for the sample"
            )
        self.q, self.r = np.linalg.qr(pi)
        self.pi = pi

    def apply(self, m):
        """``H @ m``."""
        return self.q @ (self.q.T @ m)

    def residual(self, m):
        """``(I - H) @ m``."""
        return m - self.apply(m)

    def coefficients(self, m):
        """Least-squares coefficients of ``m`` on the basis columns."""
        return np.linalg.solve(self.r, self.q.T @ m)

    @property
    def matrix(self) -> np.ndarray:
        return self.q @ self.q.T


def projector_onto_basis(pi: BasisMatrix | np.ndarray) -> BasisProjector:
    values = pi.values if isinstance(pi, BasisMatrix) else pi
    return BasisProjector(values)
