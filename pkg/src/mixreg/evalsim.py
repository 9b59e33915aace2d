"""
Simulated benchmark models and evaluation metrics.

The five benchmark designs are two-component mixtures in which the first four
responses are explained by the first four predictors (one coefficient per
couple, same value within a component). Predictors are standard Gaussian and
the noise covariance is ``sigma * I_q``, ``sigma`` being a variance.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import (
    Dataset,
    InvalidInputError,
    MixRegError,
    MixtureParams,
    SparsityPattern,
    log_densities,
)
from .gem import e_step

N_SUPPORT = 4


@dataclass(frozen=True)
class SimModelSpec:
    """Generator settings: sizes, per-component support value, noise variance, proportions."""

    n: int
    p: int
    q: int
    b_values: tuple
    sigma: float = 1.0
    pi: Optional[tuple] = None
    seed: int = 0
    support: int = N_SUPPORT

    def __post_init__(self):
        object.__setattr__(self, "b_values", tuple(float(b) for b in self.b_values))
        K = len(self.b_values)
        pi = tuple(float(v) for v in self.pi) if self.pi is not None else (1.0 / K,) * K
        object.__setattr__(self, "pi", pi)
        if self.n < 1 or self.p < 1 or self.q < 1:
            raise InvalidInputError("n, p and q must be positive")
        if len(pi) != K or any(v <= 0 for v in pi) or abs(sum(pi) - 1) > 1e-12:
            raise InvalidInputError("pi must be a positive simplex vector with one entry per component")
        if self.sigma <= 0:
            raise InvalidInputError("sigma must be positive")
        if not (0 <= self.support <= min(self.p, self.q)):
            raise InvalidInputError(f"support {self.support} exceeds min(p, q)")

    @property
    def K(self) -> int:
        return len(self.b_values)

    def replace(self, **changes) -> "SimModelSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimModelSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise InvalidInputError(f"unknown simulation fields: {sorted(unknown)}")
        return cls(**d)


MODELS = {
    1: SimModelSpec(n=2000, p=10, q=10, b_values=(3, -2), sigma=1),
    2: SimModelSpec(n=100, p=10, q=10, b_values=(3, -2), sigma=1),
    3: SimModelSpec(n=100, p=10, q=10, b_values=(3, -2), sigma=3),
    4: SimModelSpec(n=100, p=10, q=10, b_values=(5, 3), sigma=1),
    5: SimModelSpec(n=50, p=30, q=5, b_values=(3, -2), sigma=1),
}


def model_spec(model: int, seed: int = 0, **overrides) -> SimModelSpec:
    if model not in MODELS:
        raise InvalidInputError(f"unknown model {model}; choose one of {sorted(MODELS)}")
    return MODELS[model].replace(seed=seed, **overrides)


def true_B(spec: SimModelSpec) -> NDArray:
    B = np.zeros((spec.K, spec.q, spec.p))
    for k, b in enumerate(spec.b_values):
        for m in range(spec.support):
            B[k, m, m] = b
    return B


def true_params(spec: SimModelSpec) -> MixtureParams:
    return MixtureParams.from_regression(np.array(spec.pi), true_B(spec),
                                         np.full((spec.K, spec.q), spec.sigma))


def true_pattern(spec: SimModelSpec) -> SparsityPattern:
    return SparsityPattern(((m, m) for m in range(spec.support)), spec.q, spec.p)


def generate(spec: SimModelSpec) -> Dataset:
    """Draw a labelled sample; labels are 0-based component indices."""
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.n, spec.p))
    labels = rng.choice(spec.K, size=spec.n, p=np.array(spec.pi))
    B = true_B(spec)
    mean = np.einsum("imj,ij->im", B[labels], x)
    y = mean + np.sqrt(spec.sigma) * rng.standard_normal((spec.n, spec.q))
    return Dataset(x, y, labels)


def analytic_snr(spec: SimModelSpec) -> float:
    """Tr Var(Y) / Tr Var(Y | B = 0) for the generator."""
    s = spec.support
    eb2 = float(np.dot(spec.pi, np.square(spec.b_values)))
    return (s * (eb2 + spec.sigma) + (spec.q - s) * spec.sigma) / (spec.q * spec.sigma)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def ari(labels_a: ArrayLike, labels_b: ArrayLike) -> float:
    """Adjusted Rand index between two partitions."""
    from sklearn.metrics import adjusted_rand_score

    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise InvalidInputError("partitions must have the same length")
    if a.size < 2:
        raise InvalidInputError("ARI needs at least two observations")
    return float(adjusted_rand_score(a, b))


class KLRejectionError(MixRegError):
    """Too many Monte-Carlo draws produced a non-finite log ratio."""


class ConditionalTruth:
    """True conditional density ``s*(y|x)`` with a sampler for the design of ``x``.

    ``x_sampler(rng, n)`` returns an (n, p) design; the default is standard
    Gaussian, as in the simulated models.
    """

    def __init__(self, params: MixtureParams, x_sampler=None):
        self.params = params
        self.x_sampler = x_sampler or (lambda rng, n: rng.standard_normal((n, params.p)))

    @classmethod
    def from_spec(cls, spec: SimModelSpec) -> "ConditionalTruth":
        return cls(true_params(spec))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[NDArray, NDArray]:
        pr = self.params
        x = np.asarray(self.x_sampler(rng, n), dtype=float)
        z = rng.choice(pr.K, size=n, p=np.asarray(pr.pi))
        mean = np.einsum("imj,ij->im", pr.B[z], x)
        sd = 1.0 / pr.P[z]
        return x, mean + sd * rng.standard_normal((n, pr.q))

    def log_density(self, x: NDArray, y: NDArray) -> NDArray:
        return log_densities(self.params, x, y)


def kl_mc(truth: ConditionalTruth, fitted: MixtureParams, n_mc: int = 100_000,
          seed: int = 0, max_reject: float = 1e-3) -> tuple[float, float]:
    """Monte-Carlo estimate of E_x KL(s*(.|x) || h(.|x)) and its standard error."""
    if n_mc < 1000:
        raise InvalidInputError("n_mc must be at least 1000")
    rng = np.random.default_rng(seed)
    x, y = truth.sample(n_mc, rng)
    with np.errstate(all="ignore"):
        ratio = truth.log_density(x, y) - log_densities(fitted, x, y)
    ok = np.isfinite(ratio)
    rejected = int((~ok).sum())
    if rejected > max_reject * n_mc:
        raise KLRejectionError(f"{rejected} of {n_mc} draws gave a non-finite log ratio")
    ratio = ratio[ok]
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(ratio.size))


def count_tr_fr(J_hat: SparsityPattern, J_true: SparsityPattern,
                n_components: int = 2) -> tuple[int, int]:
    """True/false relevant counts, each couple counted once per true component."""
    hat, true = set(J_hat.pairs), set(J_true.pairs)
    return n_components * len(hat & true), n_components * len(hat - true)


def count_tr_fr_params(params: MixtureParams, J_true: SparsityPattern,
                       tol: float = 1e-10) -> tuple[int, int]:
    """True/false relevant counts over the nonzero coefficients of each fitted component."""
    nonzero = np.abs(params.Phi) > tol
    truth = J_true.mask()
    return int((nonzero & truth).sum()), int((nonzero & ~truth).sum())


def predict(params: MixtureParams, x: ArrayLike, mode: str = "mix",
            mu_hat: Optional[ArrayLike] = None, y: Optional[ArrayLike] = None) -> NDArray:
    """Predicted responses for rows of ``x``.

    Weights are the posterior probabilities when ``y`` is given, otherwise
    the mixing proportions. ``mix`` averages the component predictions
    ``B_k x`` with those weights; ``map`` uses the component of largest weight.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    preds = np.einsum("kmj,ij->ikm", params.B, x)
    if y is not None:
        w = e_step(params, Dataset(x, np.atleast_2d(np.asarray(y, dtype=float))))
    else:
        w = np.broadcast_to(params.pi, (x.shape[0], params.K))
    if mode == "mix":
        out = np.einsum("ik,ikm->im", w, preds)
    elif mode == "map":
        out = preds[np.arange(x.shape[0]), np.argmax(w, axis=1)]
    else:
        raise InvalidInputError(f"mode must be 'mix' or 'map', got {mode!r}")
    if mu_hat is not None:
        out = out + np.asarray(mu_hat, dtype=float)
    return out


def mape(y_hat: ArrayLike, y_true: ArrayLike) -> float:
    """Mean absolute percentage error; zero true values are excluded with a warning."""
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    y_true = np.asarray(y_true, dtype=float).ravel()
    if y_hat.shape != y_true.shape:
        raise InvalidInputError("predictions and targets differ in shape")
    keep = y_true != 0
    if not np.all(keep):
        warnings.warn(f"{int((~keep).sum())} zero target values excluded from MAPE",
                      RuntimeWarning, stacklevel=2)
    if not np.any(keep):
        raise InvalidInputError("every target value is zero")
    return float(np.mean(np.abs(y_hat[keep] - y_true[keep]) / np.abs(y_true[keep])))
