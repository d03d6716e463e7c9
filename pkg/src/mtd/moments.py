"""Empirical moment statistics of a measurement.

Three related computations live here:

* ``empirical_moments``: the measurement's first three autocorrelations with
  1/N normalization and zero-padded boundaries, deduplicated into the
  canonical moment vector. One scan of the data, no iteration.

* ``window_moment_vector`` / ``estimate_covariance``: per-anchor moment
  observations and their sample covariance S. Each anchor i reads an
  extended window of length 2L-1 and averages products over the window's
  first L positions, so the anchor-average of the observations reproduces
  the full-measurement autocorrelations up to O(L/N) boundary terms. (The
  natural alternative, zero-padding inside a length-L window, biases the
  average at shift l by the factor (L-l)/L; it is kept behind the
  ``extended=False`` flag for comparison.) Overlapping windows are serially
  dependent; following common practice S is the plain sample covariance of
  the observations, treating anchors as samples.

* ``weight_matrix``: the regularized inverse W = (S + eps*I)^-1 used as the
  weighting of the generalized (weighted least squares) objective. S does
  not depend on the parameters being estimated, only on the data, so W is
  computed once per measurement, never inside the optimization loop.

Covariance accumulation streams over anchor blocks with mergeable
mean/co-moment state; a strictly sequential mode exists for bit-exact
regression tests. Computing S over all anchors costs O(N * d^2); a stride
reduces that (stride <= L keeps the estimate stable in practice).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import MomentLayout, MomentVector, signal_autocorrelations

__all__ = [
    "EmpiricalMoments",
    "CovarianceEstimate",
    "WeightMatrix",
    "CovarianceAccumulator",
    "empirical_moments",
    "window_moment_vector",
    "window_mean",
    "estimate_covariance",
    "weight_matrix",
    "write_matrix_file",
    "read_matrix_file",
]

_MAT_MAGIC = b"MTDS"
_MAT_VERSION = 1

# relative eigenvalue floor used when inverting S
REGULARIZATION_SCALE = 1e-10


@dataclass(frozen=True)
class EmpiricalMoments:
    """Measurement autocorrelations (1/N normalization) in canonical layout."""

    vector: MomentVector
    N: int


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sample covariance S of per-window moment observations.

    window_count is the number of anchors used (divisor is window_count - 1);
    regularization is any eigenvalue floor already folded into S (0 for a raw
    estimate; inversion applies its own floor, recorded on the WeightMatrix).
    """

    S: np.ndarray
    window_count: int
    stride: int
    regularization: float = 0.0

    @property
    def dim(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric positive-definite weighting for the moment-matching objective.

    source is "ls-weights" for the diagonal encoding of the plain
    least-squares objective and "inverse-covariance" for W = S^-1.
    """

    W: np.ndarray
    source: str
    regularization: float = 0.0
    condition_number: float = float("nan")


def empirical_moments(y: np.ndarray, L: int) -> EmpiricalMoments:
    """All measurement autocorrelations up to order three for shifts 0..L-1.

    Entries are (1/N) sums of zero-padded products; the third order is stored
    only at l1 <= l2 (the full grid is symmetric by construction).
    """
    y = np.asarray(y, dtype=float)
    N = y.size
    if L < 1:
        raise ValueError("L must be >= 1")
    if N < 2 * L:
        raise ValueError(f"measurement too short: N={N} < 2L={2 * L}")
    layout = MomentLayout(L)
    values = np.empty(layout.dim)
    values[0] = y.sum() / N
    for l in range(L):
        values[1 + l] = (y[: N - l] @ y[l:]) / N
    col = 1 + L
    for l1 in range(L):
        w = y[: N - l1] * y[l1:]
        for l2 in range(l1, L):
            values[col] = (w[: N - l2] @ y[l2:]) / N
            col += 1
    return EmpiricalMoments(vector=MomentVector(layout, values), N=N)


def window_moment_vector(y: np.ndarray, i: int, L: int, extended: bool = True) -> MomentVector:
    """Moment observation anchored at position i.

    With ``extended`` (the default), products are averaged over the window's
    first L positions and shifts read into the full 2L-1 extent, so the
    observation is unbiased for the measurement autocorrelations. With
    ``extended=False`` the observation is the zero-padded autocorrelation of
    the length-L slice itself (shift l is attenuated by (L-l)/L on average).
    """
    y = np.asarray(y, dtype=float)
    N = y.size
    if not 0 <= i <= N - (2 * L - 1):
        raise ValueError(f"anchor {i} out of range [0, {N - (2 * L - 1)}]")
    layout = MomentLayout(L)
    if not extended:
        a1, a2, a3 = signal_autocorrelations(y[i : i + L])
        return MomentVector(layout, layout.flatten(a1, a2, a3))
    seg = y[i : i + 2 * L - 1]
    # M[l, k] = seg[l + k]: row l is the window shifted by l
    M = np.lib.stride_tricks.sliding_window_view(seg, L)
    base = M[0]
    a1 = base.sum() / L
    a2 = M @ base / L
    a3 = np.triu((M * base) @ M.T) / L
    return MomentVector(layout, layout.flatten(a1, a2, a3))


class CovarianceAccumulator:
    """Streaming mean/covariance of fixed-dimension vectors.

    Supports one-at-a-time updates (Welford), whole-block updates, and
    merging of independently filled accumulators; merge order changes
    results only at floating-point roundoff level.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self._comoment = np.zeros((dim, dim))

    def update(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=float)
        self.count += 1
        delta = v - self.mean
        self.mean += delta / self.count
        self._comoment += np.outer(delta, v - self.mean)

    def update_batch(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=float)
        n = block.shape[0]
        if n == 0:
            return
        bmean = block.mean(axis=0)
        centered = block - bmean
        self._merge_state(n, bmean, centered.T @ centered)

    def merge(self, other: "CovarianceAccumulator") -> None:
        if other.dim != self.dim:
            raise ValueError("accumulator dimensions differ")
        self._merge_state(other.count, other.mean, other._comoment)

    def _merge_state(self, n2: int, mean2: np.ndarray, co2: np.ndarray) -> None:
        if n2 == 0:
            return
        n1 = self.count
        n = n1 + n2
        delta = mean2 - self.mean
        self._comoment += co2 + np.outer(delta, delta) * (n1 * n2 / n)
        self.mean = self.mean + delta * (n2 / n)
        self.count = n

    def covariance(self) -> np.ndarray:
        """Sample covariance with divisor count - 1, symmetrized."""
        if self.count < 2:
            raise ValueError("need at least two observations")
        S = self._comoment / (self.count - 1)
        return (S + S.T) / 2


def _window_anchors(N: int, L: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    last = N - (2 * L - 1)
    if last < 0:
        raise ValueError(f"measurement too short for windows: N={N}, L={L}")
    return np.arange(0, last + 1, stride)


def _window_block(y: np.ndarray, L: int, anchors: np.ndarray, layout: MomentLayout) -> np.ndarray:
    """Observation vectors for a contiguous run of anchors, one column per entry.

    Each column is a windowed running sum: with w the product stream for that
    entry, a_i = (C[i+L] - C[i]) / L where C is the cumulative sum of w over
    the local anchor span.
    """
    a0 = int(anchors[0])
    hi = int(anchors[-1]) + 2 * L - 1
    seg = y[a0:hi]
    n = seg.size
    rel = anchors - a0
    out = np.empty((anchors.size, layout.dim))

    def windowed_sums(w: np.ndarray) -> np.ndarray:
        C = np.concatenate(([0.0], np.cumsum(w)))
        return (C[rel + L] - C[rel]) / L

    out[:, 0] = windowed_sums(seg)
    for l in range(L):
        out[:, 1 + l] = windowed_sums(seg[: n - l] * seg[l:])
    col = 1 + L
    for l1, l2 in zip(layout.pair_l1, layout.pair_l2):
        w = seg[: n - l2] * seg[l1 : n - l2 + l1] * seg[l2:]
        out[:, col] = windowed_sums(w)
        col += 1
    return out


def _accumulate_windows(
    y: np.ndarray, L: int, stride: int, sequential: bool, extended: bool
) -> tuple[CovarianceAccumulator, np.ndarray]:
    y = np.asarray(y, dtype=float)
    layout = MomentLayout(L)
    anchors = _window_anchors(y.size, L, stride)
    acc = CovarianceAccumulator(layout.dim)
    if sequential or not extended:
        # exact left-to-right update order (the truncated convention has no
        # block fast path; it exists for comparison only)
        for i in anchors:
            acc.update(window_moment_vector(y, int(i), L, extended=extended).values)
        return acc, anchors
    rows_per_block = max(256, int(4_000_000 / layout.dim))
    for start in range(0, anchors.size, rows_per_block):
        chunk = anchors[start : start + rows_per_block]
        acc.update_batch(_window_block(y, L, chunk, layout))
    return acc, anchors


def window_mean(y: np.ndarray, L: int, stride: int = 1, extended: bool = True) -> MomentVector:
    """Mean observation over all anchors at the given stride."""
    acc, _ = _accumulate_windows(y, L, stride, sequential=False, extended=extended)
    return MomentVector(MomentLayout(L), acc.mean)


def estimate_covariance(
    y: np.ndarray,
    L: int,
    stride: int = 1,
    *,
    sequential: bool = False,
    extended: bool = True,
) -> CovarianceEstimate:
    """Sample covariance of the window observations at anchors 0, stride, ...

    ``sequential`` forces one-at-a-time accumulation in anchor order for
    bit-exact reproducibility; the default streams blocks through mergeable
    accumulators (identical up to roundoff).
    """
    layout = MomentLayout(L)
    acc, anchors = _accumulate_windows(y, L, stride, sequential, extended)
    if anchors.size < layout.dim + 1:
        raise ValueError(
            f"need at least dim+1={layout.dim + 1} windows, got {anchors.size} "
            f"(N={np.asarray(y).size}, stride={stride})"
        )
    return CovarianceEstimate(S=acc.covariance(), window_count=acc.count, stride=stride)


def weight_matrix(S: CovarianceEstimate | np.ndarray) -> WeightMatrix:
    """Regularized inverse of a covariance estimate, W = (S + eps*I)^-1.

    eps is the larger of lambda_max * 1e-10 and whatever floor makes S + eps*I
    positive definite, so near-singular estimates from short measurements
    invert instead of failing.
    """
    est = S if isinstance(S, CovarianceEstimate) else None
    M = np.asarray(est.S if est is not None else S, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("covariance contains non-finite entries")
    M = (M + M.T) / 2
    lam, V = np.linalg.eigh(M)
    lmax = max(float(lam[-1]), 0.0)
    eps = lmax * REGULARIZATION_SCALE + max(0.0, -float(lam[0]))
    if eps == 0.0 and lmax == 0.0:
        eps = np.finfo(float).tiny
    inv = (V / (lam + eps)) @ V.T
    W = (inv + inv.T) / 2
    cond = float((lam[-1] + eps) / (lam[0] + eps))
    return WeightMatrix(
        W=W, source="inverse-covariance", regularization=float(eps), condition_number=cond
    )


def write_matrix_file(path, M: np.ndarray, L: int, stride: int) -> None:
    """Dense little-endian matrix file: magic 'MTDS', u32 version, u64 d,
    u64 L, u64 stride, then d*d f64 values row-major."""
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("only square matrices are supported")
    with open(path, "wb") as fh:
        fh.write(_MAT_MAGIC + struct.pack("<IQQQ", _MAT_VERSION, M.shape[0], L, stride))
        M.tofile(fh)


def read_matrix_file(path) -> tuple[np.ndarray, int, int]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAT_MAGIC:
            raise ValueError(f"not a matrix file: {path}")
        version, d, L, stride = struct.unpack("<IQQQ", fh.read(28))
        if version != _MAT_VERSION:
            raise ValueError(f"unsupported matrix file version {version}")
        M = np.fromfile(fh, dtype="<f8", count=d * d)
    if M.size != d * d:
        raise ValueError(f"truncated matrix file: {path}")
    return M.reshape(d, d).astype(float), int(L), int(stride)
