"""Data-driven regularization grid and relevant-couple extraction."""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .core import Dataset, InvalidInputError, MixtureParams, SparsityPattern
from .gem import GemConfig, GemResult, GemState, run_gem, s_matrix


def grid_values(state: GemState, kind: str = "lasso") -> NDArray:
    """Raw regularization levels at which each coefficient would be thresholded.

    Lasso: ``|S_{k,j,m}| / (n pi_k)`` for every ``(k, j, m)``.
    Group-Lasso: ``||(S_{k,j,m} / n)_k||_2 / sqrt(K)`` for every ``(j, m)``.
    """
    S = s_matrix(state)
    n, pi = state.n, state.params.pi
    if kind == "group_lasso":
        return (np.sqrt((S ** 2).sum(axis=0)) / n / np.sqrt(state.params.K)).ravel()
    return (np.abs(S) / (n * pi[:, None, None])).ravel()


def thin_grid(values: NDArray, count: Optional[int]) -> NDArray:
    """Keep ``count`` evenly spaced empirical quantiles (grid members) plus the maximum."""
    values = np.unique(values)
    if count is None or values.size <= count:
        return values
    if count < 1:
        raise InvalidInputError("grid count must be positive")
    levels = np.linspace(0.0, 1.0, count)
    picked = np.quantile(values, levels, method="inverted_cdf")
    return np.unique(np.append(picked, values[-1]))


def unbounded_fit(nk: NDArray, J: Optional[SparsityPattern], p: int) -> bool:
    """Whether the unpenalized likelihood restricted to ``J`` is unbounded for these weights.

    It is when some component carries no more effective observations than
    the predictors of one of its regressions (``J=None`` means all ``p``):
    that regression can interpolate its points and drive a variance to zero.
    """
    if J is None:
        row_max = p
    else:
        counts = np.bincount([m for m, _ in J.pairs], minlength=1)
        row_max = int(counts.max()) if len(J) else 0
    return bool(np.min(nk) <= max(row_max, 1))


def zero_coefficient_state(data: Dataset, K: int) -> GemState:
    """Statistics at the fit without regression coefficients, all components equal.

    There ``|S| / (n pi_k)`` is the level at which each coefficient would
    leave zero on its own.
    """
    rms = np.sqrt((data.y ** 2).mean(axis=0))
    P = np.tile(1.0 / np.where(rms > 0, rms, 1.0), (K, 1))
    params = MixtureParams(np.full(K, 1.0 / K), np.zeros((K, data.q, data.p)), P)
    return GemState.build(params, data, np.full((data.n, K), 1.0 / K))


def build_lambda_grid(data: Dataset, K: int, config: GemConfig, count: Optional[int] = None,
                      mle: Optional[GemResult] = None) -> tuple[NDArray, GemResult]:
    """Grid G_K computed at the unpenalized fit; returns ``(grid, mle_result)``.

    The grid holds the sorted distinct positive levels, optionally thinned
    to ``count`` quantiles. When the unpenalized likelihood is unbounded
    (see :func:`unbounded_fit`) the levels are taken at the
    zero-coefficient fit instead.
    """
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    kind = "group_lasso" if config.penalty_kind == "group_lasso" else "lasso"
    if mle is None:
        mle = run_gem(data, K, config.replace(lam=0.0, restriction=None))
    if unbounded_fit(mle.tau.sum(axis=0), None, data.p):
        state = zero_coefficient_state(data, K)
    else:
        state = GemState.build(mle.params, data, mle.tau)
    vals = grid_values(state, kind)
    vals = vals[np.isfinite(vals) & (vals > 0)]
    return thin_grid(vals, count), mle


def extract_pattern(params: MixtureParams, tol: float = 1e-10) -> SparsityPattern:
    """Couples (m, j) with a coefficient above ``tol`` in at least one component."""
    return SparsityPattern.from_mask(np.abs(params.Phi).max(axis=0) > tol)
