"""Forward model for well-separated multi-target detection.

A measurement of length N contains p non-overlapping translated copies of an
unknown signal x of length L, plus white Gaussian noise of variance sigma2.
In the long-measurement limit the observable autocorrelations of the
measurement reduce to scaled autocorrelations of the signal plus explicit
noise bias terms:

    order 1:  gamma * a1(x)
    order 2:  gamma * a2(x)[l]       + sigma2 * delta[l]
    order 3:  gamma * a3(x)[l1, l2]  + gamma * a1(x) * B[l1, l2]

where gamma = p * L / N is the fraction of the measurement occupied by
signal, and B[l1, l2] = sigma2 * (delta[l1] + delta[l2] + delta[l1 - l2]).

Signal autocorrelations here use a 1/L normalization and zero-padding, which
is exactly what makes the relations above hold with no extra constants.

This module owns the parameter containers, the canonical flattening of the
three autocorrelation orders into a single moment vector (third order stored
only at l1 <= l2, with multiplicities recording how often each entry appears
in the full grid), the forward map theta -> m(theta), and its analytic
Jacobian. Everything is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Params",
    "NoiseModel",
    "MomentLayout",
    "MomentVector",
    "signal_autocorrelations",
    "bias_matrix",
    "model_moments",
    "model_jacobian",
]


@dataclass(frozen=True)
class Params:
    """Estimation parameters: the signal samples and the occupancy density.

    gamma is dimensionless; it is only constrained during simulation
    (feasible placements cap it near 0.5). Optimization treats it as a free
    real, matching the unconstrained treatment of the recovery problem.
    """

    x: np.ndarray
    gamma: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("signal must be a non-empty 1-D vector")
        if not np.all(np.isfinite(x)) or not np.isfinite(self.gamma):
            raise ValueError("parameters must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def L(self) -> int:
        return self.x.size

    def pack(self) -> np.ndarray:
        """Flatten to the optimization vector [x, gamma]."""
        return np.concatenate([self.x, [self.gamma]])

    @staticmethod
    def unpack(vec: np.ndarray) -> "Params":
        vec = np.asarray(vec, dtype=float)
        return Params(x=vec[:-1], gamma=float(vec[-1]))


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian noise with known variance sigma2 >= 0."""

    sigma2: float

    def __post_init__(self):
        if not np.isfinite(self.sigma2) or self.sigma2 < 0:
            raise ValueError("sigma2 must be finite and nonnegative")
        object.__setattr__(self, "sigma2", float(self.sigma2))


class MomentLayout:
    """Canonical flattening of the first three autocorrelation orders.

    Index 0 holds the first-order entry, indices 1..L the second-order
    entries by increasing shift, and the remaining L*(L+1)/2 indices the
    third-order entries at pairs (l1, l2) with l1 <= l2 in lexicographic
    order. ``multiplicity`` counts how many cells of the full L x L
    third-order grid each stored entry represents (2 off the diagonal),
    so full-grid sums can be reproduced exactly from the deduplicated
    vector.
    """

    def __init__(self, L: int):
        if L < 1:
            raise ValueError("L must be >= 1")
        self.L = int(L)
        self.dim = 1 + L + L * (L + 1) // 2
        # lexicographic (l1, l2) pairs with l1 <= l2
        self.pair_l1, self.pair_l2 = np.triu_indices(L)
        mult = np.ones(self.dim)
        mult[1 + L :] = np.where(self.pair_l1 == self.pair_l2, 1.0, 2.0)
        mult.setflags(write=False)
        self.multiplicity = mult

    def __eq__(self, other) -> bool:
        return isinstance(other, MomentLayout) and other.L == self.L

    def __repr__(self) -> str:
        return f"MomentLayout(L={self.L}, dim={self.dim})"

    def pair_index(self, l1: int, l2: int) -> int:
        """Position of third-order pair (l1, l2), l1 <= l2, within the vector."""
        if not (0 <= l1 <= l2 < self.L):
            raise ValueError(f"invalid pair ({l1}, {l2}) for L={self.L}")
        return 1 + self.L + l1 * self.L - l1 * (l1 - 1) // 2 + (l2 - l1)

    def flatten(self, first: float, second: np.ndarray, third: np.ndarray) -> np.ndarray:
        """Stack (scalar, length-L vector, L x L grid upper triangle) canonically."""
        out = np.empty(self.dim)
        out[0] = first
        out[1 : 1 + self.L] = second
        out[1 + self.L :] = np.asarray(third)[self.pair_l1, self.pair_l2]
        return out

    def third_order_grid(self, values: np.ndarray) -> np.ndarray:
        """Expand the deduplicated third-order block to the full symmetric grid."""
        grid = np.zeros((self.L, self.L))
        tri = np.asarray(values)[1 + self.L :]
        grid[self.pair_l1, self.pair_l2] = tri
        grid[self.pair_l2, self.pair_l1] = tri
        return grid


@dataclass(frozen=True)
class MomentVector:
    """A vector of moments in the canonical layout (third order deduplicated)."""

    layout: MomentLayout
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.layout.dim,):
            raise ValueError(
                f"expected {self.layout.dim} values for L={self.layout.L}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("moment values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def first(self) -> float:
        return float(self.values[0])

    @property
    def second(self) -> np.ndarray:
        return self.values[1 : 1 + self.layout.L]

    @property
    def third(self) -> np.ndarray:
        """Deduplicated third-order block, pairs in layout order."""
        return self.values[1 + self.layout.L :]

    def third_grid(self) -> np.ndarray:
        return self.layout.third_order_grid(self.values)


def _shifted_copies(x: np.ndarray) -> np.ndarray:
    """Matrix S with S[a, k] = x[k + a] for shifts a = 0..L-1, zero-padded."""
    L = x.size
    S = np.zeros((L, L))
    for a in range(L):
        S[a, : L - a] = x[a:]
    return S


def signal_autocorrelations(x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """First three autocorrelations of a finite signal, 1/L-normalized.

    Returns (a1, a2, a3) with
        a1          = (1/L) sum_k x[k]
        a2[l]       = (1/L) sum_k x[k] x[k+l]
        a3[l1, l2]  = (1/L) sum_k x[k] x[k+l1] x[k+l2]   for l1 <= l2
    where indexing past the end of x contributes zero. a3 is returned as an
    upper-triangular (L, L) array; entries below the diagonal are zero.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("signal must be a non-empty 1-D vector")
    L = x.size
    S = _shifted_copies(x)
    a1 = float(x.sum() / L)
    a2 = S @ x / L
    a3 = np.triu((S * x) @ S.T) / L
    return a1, a2, a3


def bias_matrix(sigma2: float, L: int) -> np.ndarray:
    """Noise bias for the third-order relation, upper triangle over l1 <= l2.

    B[l1, l2] = sigma2 * (delta[l1] + delta[l2] + delta[l1 - l2]).
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if L < 1:
        raise ValueError("L must be >= 1")
    l1 = np.arange(L)[:, None]
    l2 = np.arange(L)[None, :]
    B = sigma2 * ((l1 == 0).astype(float) + (l2 == 0) + (l1 == l2))
    return np.triu(B)


def model_moments(theta: Params, noise: NoiseModel) -> MomentVector:
    """Population moment vector m(theta) of a measurement, in canonical layout.

    Entry 0 is gamma*a1; entries 1..L are gamma*a2[l] + sigma2*delta[l];
    third-order entries are gamma*(a3[l1,l2] + a1*B[l1,l2]).
    """
    layout = MomentLayout(theta.L)
    a1, a2, a3 = signal_autocorrelations(theta.x)
    B = bias_matrix(noise.sigma2, theta.L)
    second = theta.gamma * a2
    second[0] += noise.sigma2
    third = theta.gamma * (a3 + a1 * B)
    return MomentVector(layout, layout.flatten(theta.gamma * a1, second, third))


def _extended_shifts(x: np.ndarray) -> np.ndarray:
    """E[a + L - 1, k] = x[k + a] for shifts a = -(L-1)..(L-1), zero-padded."""
    L = x.size
    E = np.zeros((2 * L - 1, L))
    for a in range(L):
        E[a + L - 1, : L - a] = x[a:]
        E[L - 1 - a, a:] = x[: L - a]
    return E


def model_jacobian(theta: Params, noise: NoiseModel) -> np.ndarray:
    """Analytic Jacobian of model_moments, shape (dim, L + 1).

    Columns 0..L-1 differentiate with respect to x[k]; column L with respect
    to gamma. The x-derivatives of the zero-padded autocorrelation sums are

        d a1 / d x[k]         = 1/L
        d a2[l] / d x[k]      = (x[k+l] + x[k-l]) / L
        d a3[l1,l2] / d x[k]  = (x[k+l1] x[k+l2] + x[k-l1] x[k-l1+l2]
                                 + x[k-l2] x[k-l2+l1]) / L

    and the third-order rows additionally carry the bias coupling
    (d a1 / d x[k]) * B[l1, l2].
    """
    x, gamma, L = theta.x, theta.gamma, theta.L
    layout = MomentLayout(L)
    a1, a2, a3 = signal_autocorrelations(x)
    B = bias_matrix(noise.sigma2, L)

    E = _extended_shifts(x)
    c = L - 1  # index of shift 0 in E
    l1, l2 = layout.pair_l1, layout.pair_l2

    J = np.empty((layout.dim, L + 1))
    J[0, :L] = gamma / L
    J[1 : 1 + L, :L] = gamma * (E[c:] + E[c::-1]) / L
    da3 = (
        E[c + l1] * E[c + l2]
        + E[c - l1] * E[c + l2 - l1]
        + E[c - l2] * E[c + l1 - l2]
    ) / L
    J[1 + L :, :L] = gamma * (da3 + B[l1, l2][:, None] / L)

    # gamma column: the noiseless relations plus the bias coupling
    J[:, L] = layout.flatten(a1, a2, a3 + a1 * B)
    return J
