"""
Domain types and likelihood evaluation for finite mixtures of Gaussian
regressions with diagonal covariances.

A K-component model is stored in its scale-invariant parametrization
``(pi, Phi, P)``: for component ``k`` the precision factor ``P_k`` is diagonal
(kept as a length-q vector) and ``Phi_k = P_k B_k`` is the rescaled
regression matrix. The conditional density of a response ``y`` given
predictors ``x`` is

.. math::
    h(y|x) = \\sum_k \\frac{\\pi_k \\det P_k}{(2\\pi)^{q/2}}
             \\exp\\left(-\\tfrac12 \\|P_k y - \\Phi_k x\\|^2\\right)

All likelihood arithmetic is carried out in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

LOG_2PI = float(np.log(2.0 * np.pi))


class MixRegError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(MixRegError, ValueError):
    """Input data or parameters violate a documented precondition."""


class NumericalError(MixRegError, ArithmeticError):
    """A numerical routine could not produce a finite answer."""


class DegenerateResponseError(NumericalError):
    """A weighted response coordinate is identically zero."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _finite_matrix(a: ArrayLike, name: str) -> NDArray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """n paired observations: predictors ``x`` (n x p) and responses ``y`` (n x q).

    ``labels`` holds optional ground-truth cluster indices (0-based in memory)
    and is only ever used for evaluation.
    """

    x: NDArray
    y: NDArray
    labels: Optional[NDArray] = None

    def __post_init__(self):
        x = _finite_matrix(self.x, "x")
        y = _finite_matrix(self.y, "y")
        if x.shape[0] != y.shape[0]:
            raise InvalidInputError(
                f"x and y must have the same number of rows ({x.shape[0]} != {y.shape[0]})")
        if x.shape[0] < 1:
            raise InvalidInputError("dataset must contain at least one observation")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (x.shape[0],):
                raise InvalidInputError("labels must be a length-n vector")
            if not np.issubdtype(labels.dtype, np.integer):
                if not np.all(labels == np.round(labels)):
                    raise InvalidInputError("labels must be integers")
            labels = labels.astype(np.int64)
            if labels.min() < 0:
                raise InvalidInputError("labels must be non-negative")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.y.shape[1]

    def subset(self, rows) -> "Dataset":
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.x[rows], self.y[rows], labels)


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Parameters ``theta = (pi, Phi, P)`` of a K-component mixture.

    Attributes
    ----------
    pi : (K,) array
        Mixing proportions, strictly positive, summing to one.
    Phi : (K, q, p) array
        Rescaled regression matrices ``Phi_k = P_k B_k``.
    P : (K, q) array
        Diagonals of the precision factors, ``P_k^T P_k = Sigma_k^{-1}``.
    """

    pi: NDArray
    Phi: NDArray
    P: NDArray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        Phi = np.array(self.Phi, dtype=float)
        P = np.array(self.P, dtype=float)
        K = pi.shape[0]
        if Phi.ndim != 3 or Phi.shape[0] != K:
            raise InvalidInputError(f"Phi must have shape (K, q, p) with K={K}, got {Phi.shape}")
        if P.shape != Phi.shape[:2]:
            raise InvalidInputError(f"P must have shape (K, q) = {Phi.shape[:2]}, got {P.shape}")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-8:
            raise InvalidInputError(f"pi must be a strictly positive simplex vector, got {pi}")
        if not np.all(np.isfinite(P)) or np.any(P <= 0):
            raise InvalidInputError("every diagonal entry of P must be positive and finite")
        if not np.all(np.isfinite(Phi)):
            raise InvalidInputError("Phi contains non-finite entries")
        for name, arr in (("pi", pi), ("Phi", Phi), ("P", P)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.pi.shape[0]

    @property
    def q(self) -> int:
        return self.Phi.shape[1]

    @property
    def p(self) -> int:
        return self.Phi.shape[2]

    @property
    def B(self) -> NDArray:
        """Regression matrices ``B_k = P_k^{-1} Phi_k``, shape (K, q, p)."""
        return self.Phi / self.P[:, :, None]

    @property
    def sigma2(self) -> NDArray:
        """Diagonal variances ``Sigma_k``, shape (K, q)."""
        return 1.0 / self.P ** 2

    @classmethod
    def from_regression(cls, pi, B, sigma2) -> "MixtureParams":
        """Build from the natural parametrization (proportions, B_k, diagonal variances)."""
        B = np.asarray(B, dtype=float)
        P = 1.0 / np.sqrt(np.asarray(sigma2, dtype=float))
        return cls(pi, B * P[:, :, None], P)

    def permuted(self, order: Sequence[int]) -> "MixtureParams":
        order = np.asarray(order)
        return MixtureParams(self.pi[order], self.Phi[order], self.P[order])

    def canonical(self) -> "MixtureParams":
        """Components sorted by descending pi, ties broken by lexicographic Phi."""
        keys = [(-self.pi[k], tuple(self.Phi[k].ravel())) for k in range(self.K)]
        order = sorted(range(self.K), key=lambda k: keys[k])
        return self.permuted(order)


class SparsityPattern:
    """Set ``J`` of relevant couples ``(m, j)``: response m, predictor j (0-based).

    Couples are kept sorted row-major so equal sets compare and serialize
    identically.
    """

    __slots__ = ("q", "p", "pairs")

    def __init__(self, pairs: Iterable[Sequence[int]], q: int, p: int):
        cleaned = set()
        for m, j in pairs:
            m, j = int(m), int(j)
            if not (0 <= m < q and 0 <= j < p):
                raise InvalidInputError(f"couple ({m}, {j}) outside the {q}x{p} grid")
            cleaned.add((m, j))
        self.q = int(q)
        self.p = int(p)
        self.pairs = tuple(sorted(cleaned))

    @classmethod
    def from_mask(cls, mask: ArrayLike) -> "SparsityPattern":
        mask = np.asarray(mask, dtype=bool)
        q, p = mask.shape
        return cls(zip(*np.nonzero(mask)), q, p)

    @classmethod
    def full(cls, q: int, p: int) -> "SparsityPattern":
        return cls.from_mask(np.ones((q, p), dtype=bool))

    @classmethod
    def empty(cls, q: int, p: int) -> "SparsityPattern":
        return cls((), q, p)

    def mask(self) -> NDArray:
        out = np.zeros((self.q, self.p), dtype=bool)
        for m, j in self.pairs:
            out[m, j] = True
        return out

    @property
    def rows(self) -> tuple:
        """Responses touched by at least one couple."""
        return tuple(sorted({m for m, _ in self.pairs}))

    @property
    def columns(self) -> tuple:
        """Predictors touched by at least one couple."""
        return tuple(sorted({j for _, j in self.pairs}))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, item):
        return tuple(item) in set(self.pairs)

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return (self.q, self.p, self.pairs) == (other.q, other.p, other.pairs)

    def __hash__(self):
        return hash((self.q, self.p, self.pairs))

    def __le__(self, other: "SparsityPattern") -> bool:
        return set(self.pairs) <= set(other.pairs)

    def __repr__(self):
        return f"SparsityPattern({len(self.pairs)} couples on {self.q}x{self.p})"


@dataclass(eq=False)
class ModelSpec:
    """One fitted model of a collection, indexed by ``(K, J, R)``."""

    K: int
    J: SparsityPattern
    params: MixtureParams
    loglik: float
    dim: int
    R: Optional[tuple] = None
    procedure: str = "lasso-mle"
    lam: Optional[float] = None
    converged: bool = True

    def __post_init__(self):
        if self.R is not None:
            self.R = tuple(int(r) for r in self.R)
            if len(self.R) != self.K:
                raise InvalidInputError("rank vector must have one entry per component")
            bound = min(self.params.q, len(self.J.columns))
            if any(r < 1 or r > bound for r in self.R):
                raise InvalidInputError(f"ranks {self.R} outside 1..{bound}")

    @property
    def key(self) -> tuple:
        return (self.K, self.J, self.R)


def validate_responsibilities(tau: ArrayLike, atol: float = 1e-12) -> NDArray:
    """Check that ``tau`` is an n x K row-stochastic matrix and return it."""
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 2:
        raise InvalidInputError("responsibilities must be an n x K matrix")
    if np.any(tau < 0) or not np.allclose(tau.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise InvalidInputError("responsibility rows must be non-negative and sum to one")
    return tau


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def _check_compatible(params: MixtureParams, x: NDArray, y: NDArray):
    if x.shape[1] != params.p or y.shape[1] != params.q:
        raise InvalidInputError(
            f"data dimensions (p={x.shape[1]}, q={y.shape[1]}) do not match "
            f"parameters (p={params.p}, q={params.q})")


def component_log_densities(params: MixtureParams, x: NDArray, y: NDArray) -> NDArray:
    """Per-component joint log terms ``log pi_k + log N_k(y_i | x_i)``, shape (n, K)."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    _check_compatible(params, x, y)
    # residuals r_{i,k,m} = P_km y_im - (Phi_k x_i)_m
    K, q, p = params.Phi.shape
    fitted = (x @ params.Phi.reshape(K * q, p).T).reshape(x.shape[0], K, q)
    resid = params.P[None, :, :] * y[:, None, :] - fitted
    log_det = np.log(params.P).sum(axis=1)
    return (np.log(params.pi)[None, :] + log_det[None, :] - 0.5 * q * LOG_2PI
            - 0.5 * np.einsum("ikm,ikm->ik", resid, resid))


def row_logsumexp(a: NDArray) -> NDArray:
    """``log(sum(exp(a), axis=1))`` computed stably for a 2-d array."""
    m = a.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def log_density(params: MixtureParams, x: ArrayLike, y: ArrayLike) -> float:
    """log h(y|x) for a single observation."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("x and y must be finite")
    return float(row_logsumexp(component_log_densities(params, x, y))[0])


def log_densities(params: MixtureParams, x: NDArray, y: NDArray) -> NDArray:
    """Vector of log h(y_i|x_i) over rows."""
    return row_logsumexp(component_log_densities(params, x, y))


def log_likelihood(params: MixtureParams, data: Dataset) -> float:
    return float(np.sum(log_densities(params, data.x, data.y)))


def penalty(params: MixtureParams, kind: str = "lasso") -> float:
    """Unscaled penalty: sum_k pi_k ||Phi_k||_1 (lasso) or
    sqrt(K) sum_{m,j} ||(Phi_1..Phi_K)_{m,j}||_2 (group lasso)."""
    if kind == "lasso":
        return float(np.sum(params.pi * np.abs(params.Phi).sum(axis=(1, 2))))
    if kind == "group_lasso":
        return float(np.sqrt(params.K) * np.sqrt((params.Phi ** 2).sum(axis=0)).sum())
    if kind == "none":
        return 0.0
    raise InvalidInputError(f"unknown penalty kind {kind!r}")


def penalized_objective(params: MixtureParams, data: Dataset, lam: float,
                        kind: str = "lasso") -> float:
    """-(1/n) log-likelihood + lam * penalty."""
    if lam < 0 or not np.isfinite(lam):
        raise InvalidInputError(f"lambda must be a non-negative finite number, got {lam}")
    value = -log_likelihood(params, data) / data.n
    if lam > 0:
        value += lam * penalty(params, kind)
    return value


def map_assign(tau: ArrayLike) -> NDArray:
    """Hard clustering by maximal responsibility (0-based; ties go to the lowest index)."""
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 2:
        raise InvalidInputError("responsibilities must be an n x K matrix")
    return np.argmax(tau, axis=1)


def model_dimension(K: int, J_size: int, q: int) -> int:
    """Free-parameter count K(|J| + q + 1) - 1 of a model ``(K, J)``."""
    if K < 1 or q < 1 or J_size < 0:
        raise InvalidInputError("model_dimension needs K >= 1, q >= 1, |J| >= 0")
    return K * (J_size + q + 1) - 1
