"""Sparse feature vectors and the state-to-feature maps consumed by learners.

Discrete states get exact one-hot features. The continuous rooms domain gets
four binary floor-color bits followed by a lattice of Gaussian radial basis
functions, sparsified by zeroing any value below a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FloorColor

_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_F = np.empty(0, dtype=np.float64)


class FeatureVector:
    """Immutable sparse real vector: dimension plus parallel (idx, val) arrays.

    Invariants: indices are unique, sorted ascending, and < dim; stored values
    are nonzero. Instances are shared freely (episode drivers, learners, and
    logs all hold references); never mutate the arrays.
    """

    __slots__ = ("dim", "idx", "val")

    def __init__(self, dim: int, idx: np.ndarray, val: np.ndarray):
        self.dim = dim
        self.idx = idx
        self.val = val

    @classmethod
    def from_pairs(cls, dim: int, pairs) -> "FeatureVector":
        """Validated constructor from (index, value) pairs."""
        items = sorted((int(i), float(v)) for i, v in pairs)
        idx = np.array([i for i, _ in items], dtype=np.int64)
        val = np.array([v for _, v in items], dtype=np.float64)
        if idx.size:
            if idx[0] < 0 or idx[-1] >= dim:
                raise ValueError(f"feature index out of range for dimension {dim}")
            if np.unique(idx).size != idx.size:
                raise ValueError("duplicate feature indices")
            if np.any(val == 0.0):
                raise ValueError("stored feature values must be nonzero")
        return cls(dim, idx, val)

    @classmethod
    def zeros(cls, dim: int) -> "FeatureVector":
        return cls(dim, _EMPTY_I, _EMPTY_F)

    @property
    def nnz(self) -> int:
        return int(self.idx.size)

    def dot(self, dense: np.ndarray) -> float:
        if self.idx.size == 1:
            return float(dense[self.idx[0]]) * float(self.val[0])
        if self.idx.size == 0:
            return 0.0
        return float(dense[self.idx] @ self.val)

    def add_into(self, dense: np.ndarray, scale: float = 1.0) -> None:
        """dense[i] += scale * v for every stored pair (indices are unique)."""
        if self.idx.size == 1:
            dense[self.idx[0]] += scale * self.val[0]
        elif self.idx.size:
            dense[self.idx] += scale * self.val

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.idx] = self.val
        return out

    def pairs(self) -> list[tuple[int, float]]:
        """index:value pairs, the debugging/serialization form."""
        return [(int(i), float(v)) for i, v in zip(self.idx, self.val)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.idx, other.idx)
            and np.array_equal(self.val, other.val)
        )

    __hash__ = None  # mutable-array payload; not hashable

    def __repr__(self) -> str:
        return f"FeatureVector(dim={self.dim}, {dict(self.pairs())})"


def tabular_features(state, n: int) -> FeatureVector:
    """One-hot feature vector for a discrete state: exactly one entry of 1.0."""
    index = getattr(state, "index", state)
    if not 0 <= index < n:
        raise ValueError(f"state index {index} out of range for {n} features")
    return FeatureVector(n, np.array([index], dtype=np.int64), np.array([1.0]))


@dataclass(frozen=True, eq=False)
class RbfGrid:
    """Gaussian RBF lattice over (x, y, psi) plus leading binary color bits.

    Each basis value is scale * exp(-0.5 * (s-u)^T C (s-u)) with diagonal
    precision C; the angular difference is wrapped to [-180, 180) degrees.
    Values below ``sparsify_threshold`` are dropped from the sparse vector.
    """

    centers: np.ndarray  # (m, 3) columns: x, y, psi-degrees
    scale: float = 10.0
    precision: tuple[float, float, float] = (1.0 / 1.2, 1.0 / 1.2, 1.0 / 30.0)
    sparsify_threshold: float = 0.1
    color_bits: int = 4

    @property
    def dim(self) -> int:
        return self.color_bits + self.centers.shape[0]

    @classmethod
    def canonical(cls) -> "RbfGrid":
        """The 10x10x12 lattice: x, y every unit step, psi every 30 degrees."""
        xs = np.arange(0.5, 10.0, 1.0)
        ys = np.arange(0.5, 10.0, 1.0)
        psis = np.arange(0.0, 360.0, 30.0)
        gx, gy, gp = np.meshgrid(xs, ys, psis, indexing="ij")
        centers = np.column_stack([gx.ravel(), gy.ravel(), gp.ravel()])
        grid = cls(centers=centers)
        assert grid.dim == 1204, f"canonical grid dimension {grid.dim} != 1204"
        return grid


def wrap_angle_deg(delta) -> np.ndarray:
    """Wrap angular differences (degrees) into [-180, 180)."""
    return np.mod(np.asarray(delta, dtype=np.float64) + 180.0, 360.0) - 180.0


def rbf_features(state, grid: RbfGrid) -> FeatureVector:
    """Color bits then thresholded RBF activations for a continuous state.

    The color bit is a one-hot over (purple, green, yellow, blue) at indices
    0..3 and is never sparsified; RBF entries start at index ``color_bits``.
    """
    c = grid.centers
    dx = state.x - c[:, 0]
    dy = state.y - c[:, 1]
    dpsi = wrap_angle_deg(state.psi - c[:, 2])
    px, py, pp = grid.precision
    q = px * dx * dx + py * dy * dy + pp * dpsi * dpsi
    vals = grid.scale * np.exp(-0.5 * q)
    keep = vals >= grid.sparsify_threshold
    ridx = np.flatnonzero(keep).astype(np.int64) + grid.color_bits
    idx = np.concatenate((np.array([state.floor_color.value], dtype=np.int64), ridx))
    val = np.concatenate((np.array([1.0]), vals[keep]))
    return FeatureVector(grid.dim, idx, val)


__all__ = [
    "FeatureVector",
    "FloorColor",
    "RbfGrid",
    "rbf_features",
    "tabular_features",
    "wrap_angle_deg",
]
