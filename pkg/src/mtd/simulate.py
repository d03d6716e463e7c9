"""Synthetic measurement generation for well-separated multi-target detection.

A measurement is a length-N vector holding p translated copies of a length-L
signal plus i.i.d. Gaussian noise. Translations live in {L+1, ..., N-L} and
any two differ by at least 2L-1 samples, so distinct copies never share a
length-L correlation window. Placements are drawn uniformly over all
configurations satisfying the separation constraint (gap sampling), and all
randomness flows through a seeded numpy Generator so measurements are
reproducible sample-for-sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MeasurementSpec",
    "Measurement",
    "sample_translations",
    "synthesize",
    "sigma_for_snr",
    "spec_for_density",
    "write_measurement",
    "read_measurement",
]

_MEAS_MAGIC = b"MTDM"
_MEAS_VERSION = 1

# minimum spacing between translations is 2L-1 (no two copies overlap in any
# length-L window); translations themselves live in {L+1, ..., N-L}


def _separation(L: int) -> int:
    return 2 * L - 1


def _slack_budget(N: int, L: int, p: int) -> int:
    """Free slack left after mandatory spacing; >= 0 iff a placement exists."""
    lo, hi = L + 1, N - L
    return (hi - lo) - (p - 1) * _separation(L)


@dataclass(frozen=True)
class MeasurementSpec:
    """Generation parameters for one measurement.

    N: measurement length; L: signal length; p: number of signal copies;
    sigma2: noise variance; seed: RNG seed used when no generator is given.
    """

    N: int
    L: int
    p: int
    sigma2: float
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.N < 2 * self.L:
            raise ValueError("N must be at least 2L")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.sigma2 < 0 or not np.isfinite(self.sigma2):
            raise ValueError("sigma2 must be finite and nonnegative")
        if _slack_budget(self.N, self.L, self.p) < 0:
            raise ValueError(
                f"no well-separated placement of p={self.p} copies of length "
                f"L={self.L} fits in N={self.N}"
            )

    @property
    def gamma(self) -> float:
        """Occupied fraction of the measurement, p*L/N."""
        return self.p * self.L / self.N


def spec_for_density(N: int, L: int, gamma: float, sigma2: float, seed: int = 0) -> MeasurementSpec:
    """Spec with the copy count chosen to hit a target density, p = round(gamma*N/L)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return MeasurementSpec(N=N, L=L, p=int(round(gamma * N / L)), sigma2=sigma2, seed=seed)


@dataclass(frozen=True)
class Measurement:
    """A synthesized measurement with its ground-truth placements."""

    y: np.ndarray
    translations: np.ndarray
    spec: MeasurementSpec

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.translations, dtype=np.int64)
        if y.shape != (self.spec.N,):
            raise ValueError("measurement length does not match spec")
        if t.shape != (self.spec.p,):
            raise ValueError("translation count does not match spec")
        L = self.spec.L
        if t.size and (t.min() < L + 1 or t.max() > self.spec.N - L):
            raise ValueError("translations out of the valid range")
        if t.size > 1 and np.diff(np.sort(t)).min() < _separation(L):
            raise ValueError("translations violate the separation constraint")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "translations", t)


def sample_translations(spec: MeasurementSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw p translations uniformly over all well-separated configurations.

    Writes the placement as mandatory 2L-1 spacings plus p+1 nonnegative
    slack gaps summing to the free budget F; compositions of F are drawn
    uniformly by choosing p of F+p slots (stars and bars), which induces the
    uniform distribution on valid configurations.
    """
    F = _slack_budget(spec.N, spec.L, spec.p)
    if F < 0:
        raise ValueError("infeasible spec: negative slack budget")
    p = spec.p
    if F == 0:
        gaps = np.zeros(p, dtype=np.int64)
    else:
        bars = np.sort(rng.choice(F + p, size=p, replace=False))
        # gap i = slack inserted before copy i
        gaps = np.empty(p, dtype=np.int64)
        gaps[0] = bars[0]
        gaps[1:] = np.diff(bars) - 1
    starts = (spec.L + 1) + np.cumsum(gaps) + _separation(spec.L) * np.arange(p)
    return starts


def synthesize(x: np.ndarray, spec: MeasurementSpec, rng: np.random.Generator | None = None) -> Measurement:
    """Build y = sum of shifted copies of x plus N(0, sigma2) noise.

    Deterministic given spec.seed (translations are drawn before the noise).
    Passing an explicit generator overrides the seed.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.L,):
        raise ValueError(f"signal must have length L={spec.L}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    t = sample_translations(spec, rng)
    y = np.zeros(spec.N)
    # separated copies occupy disjoint index ranges, so flat assignment is safe
    idx = (t[:, None] + np.arange(spec.L)[None, :]).ravel()
    y[idx] = np.tile(x, spec.p)
    if spec.sigma2 > 0:
        y += rng.normal(0.0, np.sqrt(spec.sigma2), size=spec.N)
    return Measurement(y=y, translations=t, spec=spec)


def sigma_for_snr(x: np.ndarray, L: int, snr: float) -> float:
    """Noise variance realizing a target SNR = ||x||^2 / (L * sigma2).

    snr = inf requests the noiseless limit sigma2 = 0.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    if np.isinf(snr):
        return 0.0
    x = np.asarray(x, dtype=float)
    return float(x @ x) / (L * snr)


def write_measurement(path, meas: Measurement) -> None:
    """Serialize to a flat little-endian binary file.

    Layout: magic 'MTDM', u32 version, u64 N, u64 L, u64 p, f64 sigma2,
    u64 seed, then N f64 samples, then p i64 translations.
    """
    spec = meas.spec
    header = _MEAS_MAGIC + struct.pack(
        "<IQQQdQ", _MEAS_VERSION, spec.N, spec.L, spec.p, spec.sigma2, spec.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        meas.y.astype("<f8").tofile(fh)
        meas.translations.astype("<i8").tofile(fh)


def read_measurement(path) -> Measurement:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MEAS_MAGIC:
            raise ValueError(f"not a measurement file: {path}")
        version, N, L, p, sigma2, seed = struct.unpack("<IQQQdQ", fh.read(44))
        if version != _MEAS_VERSION:
            raise ValueError(f"unsupported measurement file version {version}")
        y = np.fromfile(fh, dtype="<f8", count=N)
        t = np.fromfile(fh, dtype="<i8", count=p)
    if y.size != N or t.size != p:
        raise ValueError(f"truncated measurement file: {path}")
    spec = MeasurementSpec(N=int(N), L=int(L), p=int(p), sigma2=float(sigma2), seed=int(seed))
    return Measurement(y=y.astype(float), translations=t, spec=spec)
