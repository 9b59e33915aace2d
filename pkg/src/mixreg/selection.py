"""
Model collections and model selection.

The slope heuristic groups models by dimension ``D``, keeps the best
log-likelihood per dimension, estimates the slope ``kappa`` of
``(D/n, loglik/n)`` over the largest dimensions with a least absolute
deviation fit, and selects the minimizer of ``-loglik/n + 2 kappa D/n``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from numpy.typing import NDArray

from .core import InvalidInputError, MixRegError, ModelSpec

logger = logging.getLogger(__name__)


class EmptyCollectionError(MixRegError):
    """The collection holds no model."""


class InsufficientCollectionError(MixRegError):
    """Too few distinct dimensions to calibrate the slope heuristic."""


class ModelCollection:
    """Fitted models keyed by ``(K, J, R)``; at most one model per key."""

    def __init__(self, entries: Iterable[ModelSpec] = ()):
        self._entries: dict = {}
        for spec in entries:
            self.add(spec)

    def add(self, spec: ModelSpec, keep: str = "best") -> bool:
        """Insert ``spec``; on a key clash the higher log-likelihood wins.

        Returns True when ``spec`` is stored.
        """
        key = spec.key
        old = self._entries.get(key)
        if old is not None:
            if keep == "error":
                raise InvalidInputError(f"duplicate model key {key}")
            if not spec.loglik > old.loglik:
                return False
        self._entries[key] = spec
        return True

    @property
    def entries(self) -> list[ModelSpec]:
        return list(self._entries.values())

    @property
    def provenance(self) -> list[dict]:
        return [{"procedure": s.procedure, "K": s.K, "lambda": s.lam, "R": s.R}
                for s in self._entries.values()]

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.values())


def _sort_key(spec: ModelSpec):
    return (spec.dim, spec.K)


def _as_list(collection) -> list[ModelSpec]:
    entries = collection.entries if isinstance(collection, ModelCollection) else list(collection)
    if not entries:
        raise EmptyCollectionError("model collection is empty")
    return entries


def lad_fit(x: NDArray, y: NDArray, n_iter: int = 50, tol: float = 1e-10,
            delta: float = 1e-12) -> tuple[float, float]:
    """Least absolute deviation line ``y ~ a + b x`` by iteratively reweighted least squares."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    X = np.column_stack([np.ones_like(x), x])
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    for _ in range(n_iter):
        r = np.abs(y - X @ coef)
        w = 1.0 / np.maximum(r, delta)
        sw = np.sqrt(w)
        new = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        done = np.max(np.abs(new - coef)) <= tol * (1.0 + np.max(np.abs(coef)))
        coef = new
        if done:
            break
    return float(coef[0]), float(coef[1])


def slope_points(entries: list[ModelSpec], n: int) -> tuple[NDArray, NDArray]:
    """Per-dimension maximal log-likelihood, as points ``(D/n, loglik/n)`` sorted by D."""
    best: dict = {}
    for spec in entries:
        if spec.dim not in best or spec.loglik > best[spec.dim]:
            best[spec.dim] = spec.loglik
    dims = np.array(sorted(best), dtype=float)
    ll = np.array([best[d] for d in sorted(best)], dtype=float)
    return dims / n, ll / n


@dataclass
class SlopeDiagnostics:
    kappa: float
    intercept: float
    points: NDArray  # (n_dims, 2): D/n, loglik/n
    fit_mask: NDArray  # points used by the slope fit
    criterion: NDArray  # per entry, aligned with ``entries``
    entries: list = field(repr=False, default_factory=list)
    fallback: Optional[str] = None

    def table(self) -> list[dict]:
        """Slope-graph rows for plotting."""
        return [{"D_over_n": float(px), "loglik_over_n": float(py), "in_fit": bool(f),
                 "fitted": float(self.intercept + self.kappa * px)}
                for (px, py), f in zip(self.points, self.fit_mask)]


def _sample_size(data) -> int:
    return int(data.n) if hasattr(data, "n") else int(data)


def slope_select(collection, data, min_points: int = 5):
    """Select a model by the slope heuristic.

    ``data`` is the fit Dataset or its sample size. Returns
    ``(chosen, kappa_hat, diagnostics)``. Falls back to BIC with a
    warning when the estimated slope is not positive.
    """
    entries = _as_list(collection)
    n = _sample_size(data)
    px, py = slope_points(entries, n)
    if px.size < min_points:
        raise InsufficientCollectionError(
            f"slope heuristic needs at least {min_points} distinct dimensions, got {px.size}")
    n_fit = max(min_points, (px.size + 1) // 2)
    fit_mask = np.zeros(px.size, dtype=bool)
    fit_mask[-n_fit:] = True
    intercept, kappa = lad_fit(px[fit_mask], py[fit_mask])
    dims = np.array([s.dim for s in entries], dtype=float)
    ll = np.array([s.loglik for s in entries], dtype=float)
    crit = -ll / n + 2.0 * kappa * dims / n
    diag = SlopeDiagnostics(kappa=kappa, intercept=intercept, points=np.column_stack([px, py]),
                            fit_mask=fit_mask, criterion=crit, entries=entries)
    if not kappa > 0:
        warnings.warn(f"slope heuristic estimated a non-positive slope ({kappa:.3g}); "
                      "falling back to BIC", RuntimeWarning, stacklevel=2)
        diag.fallback = "bic"
        return bic_select(entries, n), kappa, diag
    best = min(range(len(entries)), key=lambda i: (crit[i],) + _sort_key(entries[i]))
    return entries[best], kappa, diag


def bic_select(collection, data) -> ModelSpec:
    """Minimizer of ``-2 loglik + D log n``; ties go to smaller D, then smaller K."""
    entries = _as_list(collection)
    n = _sample_size(data)
    return min(entries, key=lambda s: (-2.0 * s.loglik + s.dim * np.log(n),) + _sort_key(s))


def oracle_select(collection, kl_estimator: Callable[[ModelSpec], float]) -> ModelSpec:
    """Model minimizing an estimated divergence to the true density.

    ``kl_estimator`` maps a model to its (Monte-Carlo) Kullback-Leibler
    divergence; :func:`mixreg.evalsim.kl_mc` is the usual choice.
    """
    entries = _as_list(collection)
    scores = [kl_estimator(s) for s in entries]
    best = min(range(len(entries)), key=lambda i: (scores[i],) + _sort_key(entries[i]))
    return entries[best]
