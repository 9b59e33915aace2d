"""
Orthogonal discrete wavelet transform with periodic boundary, and the
projection of functional samples onto wavelet coefficients.

Signals whose length is not a multiple of ``2**level`` are zero-padded at
the end; the original length is recorded so the inverse can crop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import Dataset, InvalidInputError, MixRegError, MixtureParams, SparsityPattern

# Scaling (low-pass) filters, synthesis ordering.
FILTERS = {
    "haar": np.array([
        0.70710678118654752440, 0.70710678118654752440,
    ]),
    "daubechies2": np.array([
        0.48296291314453414337, 0.83651630373780790557,
        0.22414386804201338103, -0.12940952255126038117,
    ]),
    # least-asymmetric Daubechies, 8 taps
    "symmlet4": np.array([
        0.032223100604051467872, -0.012603967262031303754,
        -0.099219543576633532585, 0.29785779560530605140,
        0.80373875180513208088, 0.49761866763277498998,
        -0.029635527646002491764, -0.075765714789502213228,
    ]),
}


class EmptyRepresentativeError(MixRegError):
    """No observation passes the posterior-probability threshold."""


@dataclass(frozen=True)
class WaveletBasis:
    family: str
    level: int

    def __post_init__(self):
        if self.family not in FILTERS:
            raise InvalidInputError(f"unknown wavelet family {self.family!r}; "
                                    f"choose from {sorted(FILTERS)}")
        if int(self.level) != self.level or self.level < 1:
            raise InvalidInputError("wavelet level must be a positive integer")

    @property
    def lowpass(self) -> NDArray:
        return FILTERS[self.family]

    @property
    def highpass(self) -> NDArray:
        h = self.lowpass
        return h[::-1] * np.where(np.arange(h.size) % 2 == 0, 1.0, -1.0)

    def padded_length(self, length: int) -> int:
        step = 2 ** self.level
        if step > length:
            raise InvalidInputError(
                f"level {self.level} too deep for a signal of length {length}")
        return -(-length // step) * step


@dataclass
class WaveletCoeffs:
    """Approximation at the coarsest level and details for levels 1..L (finest first)."""

    approx: NDArray
    details: list
    basis: WaveletBasis
    original_length: int

    def __post_init__(self):
        L = self.basis.level
        if len(self.details) != L:
            raise InvalidInputError(f"expected {L} detail levels, got {len(self.details)}")
        size = self.approx.size
        for lev in range(L, 0, -1):
            if self.details[lev - 1].size != size:
                raise InvalidInputError("detail sizes are inconsistent with the approximation")
            size *= 2

    @property
    def padded_length(self) -> int:
        return self.approx.size * 2 ** self.basis.level

    def to_vector(self) -> NDArray:
        """Flat layout ``[a_L, d_L, d_{L-1}, ..., d_1]``."""
        return np.concatenate([self.approx] + self.details[::-1])

    @classmethod
    def from_vector(cls, vec: ArrayLike, basis: WaveletBasis,
                    original_length: int) -> "WaveletCoeffs":
        vec = np.asarray(vec, dtype=float)
        total = basis.padded_length(original_length)
        if vec.size != total:
            raise InvalidInputError(f"expected {total} coefficients, got {vec.size}")
        size = total >> basis.level
        approx = vec[:size]
        details = []
        pos = size
        for _ in range(basis.level):
            details.append(vec[pos:pos + size])
            pos += size
            size *= 2
        return cls(approx.copy(), [d.copy() for d in details[::-1]], basis, original_length)


def _phase(h: NDArray) -> int:
    # filter alignment chosen so coefficients line up with the usual periodized layout
    return 1 - h.size // 2


def _analysis_step(a: NDArray, h: NDArray, g: NDArray) -> tuple[NDArray, NDArray]:
    N = a.shape[-1]
    idx = (2 * np.arange(N // 2)[:, None] + np.arange(h.size)[None, :] + _phase(h)) % N
    taps = a[..., idx]
    return taps @ h, taps @ g


def _synthesis_step(approx: NDArray, detail: NDArray, h: NDArray, g: NDArray) -> NDArray:
    half = approx.shape[-1]
    N = 2 * half
    out = np.zeros(approx.shape[:-1] + (N,))
    for k in range(h.size):
        pos = (2 * np.arange(half) + k + _phase(h)) % N
        contrib = h[k] * approx + g[k] * detail
        # positions may repeat when the filter is longer than the signal
        np.add.at(out, (..., pos), contrib)
    return out


def dwt(signal: ArrayLike, basis: WaveletBasis) -> WaveletCoeffs:
    """Multilevel periodic DWT (pyramid algorithm)."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("dwt expects a 1-d signal")
    N = x.size
    padded = basis.padded_length(N)
    a = np.concatenate([x, np.zeros(padded - N)])
    h, g = basis.lowpass, basis.highpass
    details = []
    for _ in range(basis.level):
        a, d = _analysis_step(a, h, g)
        details.append(d)
    return WaveletCoeffs(a, details, basis, N)


def idwt(coeffs: WaveletCoeffs) -> NDArray:
    """Inverse of :func:`dwt`, cropped to the original length."""
    basis = coeffs.basis
    h, g = basis.lowpass, basis.highpass
    a = np.asarray(coeffs.approx, dtype=float)
    for d in coeffs.details[::-1]:
        if d.size != a.size:
            raise InvalidInputError("corrupted level structure")
        a = _synthesis_step(a, np.asarray(d, dtype=float), h, g)
    return a[:coeffs.original_length]


def dwt_rows(F: NDArray, basis: WaveletBasis) -> NDArray:
    """Row-wise DWT, returning flat coefficient vectors."""
    return np.vstack([dwt(row, basis).to_vector() for row in F])


def idwt_rows(C: NDArray, basis: WaveletBasis, length: int) -> NDArray:
    return np.vstack([idwt(WaveletCoeffs.from_vector(row, basis, length)) for row in C])


def _as_rows(F, name: str) -> NDArray:
    if isinstance(F, np.ndarray):
        arr = np.asarray(F, dtype=float)
    else:
        rows = [list(r) for r in F]
        lengths = {len(r) for r in rows}
        if len(lengths) > 1:
            raise InvalidInputError(f"{name}: rows have different lengths {sorted(lengths)}")
        arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty matrix, one function per row")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass
class WaveletProjection:
    """Metadata needed to map coefficient vectors back to functions."""

    basis_x: WaveletBasis
    basis_y: WaveletBasis
    length_x: int
    length_y: int
    mean_x: Optional[NDArray] = None
    mean_y: Optional[NDArray] = None

    def to_dict(self) -> dict:
        return {
            "basis_x": {"family": self.basis_x.family, "level": self.basis_x.level},
            "basis_y": {"family": self.basis_y.family, "level": self.basis_y.level},
            "length_x": self.length_x,
            "length_y": self.length_y,
            "mean_x": None if self.mean_x is None else self.mean_x.tolist(),
            "mean_y": None if self.mean_y is None else self.mean_y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WaveletProjection":
        return cls(WaveletBasis(**d["basis_x"]), WaveletBasis(**d["basis_y"]),
                   int(d["length_x"]), int(d["length_y"]),
                   None if d.get("mean_x") is None else np.asarray(d["mean_x"]),
                   None if d.get("mean_y") is None else np.asarray(d["mean_y"]))

    def reconstruct_x(self, coeffs: NDArray) -> NDArray:
        out = idwt_rows(np.atleast_2d(coeffs), self.basis_x, self.length_x)
        return out if self.mean_x is None else out + self.mean_x

    def reconstruct_y(self, coeffs: NDArray) -> NDArray:
        out = idwt_rows(np.atleast_2d(coeffs), self.basis_y, self.length_y)
        return out if self.mean_y is None else out + self.mean_y


def project_dataset(F, G, basis_x: WaveletBasis, basis_y: Optional[WaveletBasis] = None,
                    center: bool = False, labels=None) -> tuple[Dataset, WaveletProjection]:
    """Wavelet coefficients of predictor functions ``F`` and response functions ``G``.

    With ``center=True`` the pointwise sample means are subtracted first and
    stored in the returned projection.
    """
    basis_y = basis_x if basis_y is None else basis_y
    F = _as_rows(F, "F")
    G = _as_rows(G, "G")
    if F.shape[0] != G.shape[0]:
        raise InvalidInputError("F and G must have the same number of functions")
    mean_x = mean_y = None
    if center:
        mean_x, mean_y = F.mean(axis=0), G.mean(axis=0)
        F, G = F - mean_x, G - mean_y
    x = dwt_rows(F, basis_x)
    y = dwt_rows(G, basis_y)
    proj = WaveletProjection(basis_x, basis_y, F.shape[1], G.shape[1], mean_x, mean_y)
    return Dataset(x, y, labels), proj


def reconstruct_representative(params: MixtureParams, k: int, tau: NDArray, threshold: float,
                               dataset: Dataset, basis: WaveletBasis, length: int,
                               J: Optional[SparsityPattern] = None) -> NDArray:
    """Cluster representative curve from the relevant predictor coefficients.

    Averages the coefficient rows with ``tau[i, k] > threshold``, keeps only
    the predictor columns touched by ``J`` (by default the relevant couples
    of ``params``) and inverts the transform.
    """
    from .grid import extract_pattern

    if J is None:
        J = extract_pattern(params)
    members = np.asarray(tau)[:, k] > threshold
    if not np.any(members):
        raise EmptyRepresentativeError(
            f"no observation has posterior probability above {threshold} for component {k}")
    mean = dataset.x[members].mean(axis=0)
    keep = np.zeros(dataset.p, dtype=bool)
    keep[list(J.columns)] = True
    return idwt(WaveletCoeffs.from_vector(np.where(keep, mean, 0.0), basis, length))


def simulate_cosine_mixture(n: int = 100, seed: int = 0, grid_size: int = 15,
                            noise_f: float = 0.3, noise_g: float = 0.1,
                            pi: Sequence[float] = (0.5, 0.5)):
    """Functional two-cluster sample: ``f`` a noisy cosine, ``g = f`` or ``g = -f`` plus white noise.

    Returns ``(F, G, labels)`` with labels 0 (``g = f``) and 1 (``g = -f``).
    """
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, grid_size)
    F = np.cos(2 * np.pi * t)[None, :] + noise_f * rng.standard_normal((n, grid_size))
    labels = rng.choice(len(pi), size=n, p=np.asarray(pi))
    sign = np.where(labels == 0, 1.0, -1.0)
    G = sign[:, None] * F + noise_g * rng.standard_normal((n, grid_size))
    return F, G, labels
