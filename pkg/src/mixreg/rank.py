"""
Rank-constrained refits of a mixture of regressions.

Given relevant couples ``J`` the coefficient matrix of every component is
estimated on the block ``rows(J) x columns(J)`` by least squares on the
observations hard-assigned to that component, then projected onto rank
``R_k`` by truncating its singular value decomposition. Proportions and
variances stay frozen at the values of the model being refitted.
"""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import (
    Dataset,
    InvalidInputError,
    MixtureParams,
    ModelSpec,
    SparsityPattern,
    log_likelihood,
    map_assign,
)
from .gem import e_step


def truncate_svd(A: ArrayLike, r: int) -> NDArray:
    """Best rank-``r`` approximation ``U S_r V^T`` of ``A``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise InvalidInputError("truncate_svd expects a matrix")
    if not (1 <= r <= min(A.shape)):
        raise InvalidInputError(f"rank {r} outside 1..{min(A.shape)}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def rank_bound(J: SparsityPattern, r_max: Optional[int] = None) -> int:
    bound = min(len(J.rows), len(J.columns))
    if r_max is not None:
        bound = min(bound, r_max)
    return bound


def enumerate_rank_vectors(K: int, J: SparsityPattern, q: Optional[int] = None,
                           r_max: Optional[int] = None) -> list[tuple]:
    """All rank vectors in {1..bound}^K, lexicographic.

    ``bound = min(|rows(J)|, |columns(J)|, r_max)``; ``q`` can tighten it further.
    """
    bound = rank_bound(J, r_max)
    if q is not None:
        bound = min(bound, q)
    if bound < 1:
        return []
    return list(itertools.product(range(1, bound + 1), repeat=K))


def rank_model_dimension(K: int, q: int, J: SparsityPattern, R) -> int:
    """Parameter count: proportions and variances plus a rank-R_k matrix per component."""
    pj, qj = len(J.columns), len(J.rows)
    return K * (q + 1) - 1 + sum(r * (pj + qj - r) for r in R)


def rank_refit(data: Dataset, K: int, J: SparsityPattern, R, init: MixtureParams,
               max_iter: int = 100, procedure: str = "lasso-rank",
               lam: Optional[float] = None) -> ModelSpec:
    """Hard-assignment EM for the rank-constrained model ``(K, J, R)``."""
    R = tuple(int(r) for r in R)
    if len(J) == 0:
        raise InvalidInputError("rank refit needs a non-empty set of relevant couples")
    if init.K != K or len(R) != K:
        raise InvalidInputError("init and rank vector must have K components")
    rows = np.array(J.rows)
    cols = np.array(J.columns)
    bound = rank_bound(J)
    if any(r < 1 or r > bound for r in R):
        raise InvalidInputError(f"ranks {R} outside 1..{bound}")

    pi, P = init.pi, init.P
    Phi = np.zeros_like(init.Phi)
    block = np.ix_(rows, cols)
    for k in range(K):
        Phi[k][block] = init.Phi[k][block]
    B_hat = [Phi[k][block] / P[k, rows][:, None] for k in range(K)]
    x_block = data.x[:, cols]
    y_block = data.y[:, rows]

    assignment = None
    converged = False
    empty_seen = False
    for _ in range(max_iter):
        params = MixtureParams(pi, Phi, P)
        labels = map_assign(e_step(params, data))
        if assignment is not None and np.array_equal(labels, assignment):
            converged = True
            break
        assignment = labels
        for k in range(K):
            idx = labels == k
            if not np.any(idx):
                empty_seen = True
                continue
            xk, yk = x_block[idx], y_block[idx]
            B_tilde = (np.linalg.pinv(xk.T @ xk) @ xk.T @ yk).T
            B_hat[k] = truncate_svd(B_tilde, R[k])
        Phi = np.zeros_like(init.Phi)
        for k in range(K):
            Phi[k][block] = P[k, rows][:, None] * B_hat[k]

    params = MixtureParams(pi, Phi, P)
    return ModelSpec(K=K, J=J, params=params, loglik=log_likelihood(params, data),
                     dim=rank_model_dimension(K, data.q, J, R), R=R, procedure=procedure,
                     lam=lam, converged=converged and not empty_seen)
