"""
End-to-end construction of model collections.

For every number of components ``K``:

1. fit the unpenalized mixture and derive the regularization grid from it;
2. for each grid level, fit the (Group-)Lasso estimator from k-means starts
   shared by all levels and read off its relevant couples ``J``;
3. refit on ``J``: either the unpenalized estimator restricted to ``J``
   (``*-mle``) or rank-constrained estimators for every admissible rank
   vector (``*-rank``).

Supports on which the unpenalized likelihood is unbounded (a component with
no more effective observations than predictors) yield no unpenalized refit;
such models are left out of ``*-mle`` collections.

Fits are independent tasks. They can run in a process pool; results are
merged in task-key order so the collection never depends on the pool size.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    Dataset,
    InvalidInputError,
    MixtureParams,
    ModelSpec,
    SparsityPattern,
    log_likelihood,
    model_dimension,
)
from .gem import GemConfig, initialize, run_gem, start_partitions
from .grid import build_lambda_grid, extract_pattern, unbounded_fit
from .rank import enumerate_rank_vectors, rank_refit
from .selection import EmptyCollectionError, ModelCollection

logger = logging.getLogger(__name__)

PROCEDURES = ("lasso-mle", "lasso-rank", "group-lasso-mle", "group-lasso-rank")


@dataclass(frozen=True)
class FitSettings:
    """Options for :func:`fit_collection` other than the data and procedure."""

    K_range: tuple = (2, 3, 4, 5)
    lambda_count: Optional[int] = 20
    r_max: Optional[int] = 3
    seed: int = 0
    gem: GemConfig = field(default_factory=GemConfig)
    rank_max_iter: int = 100

    def to_dict(self) -> dict:
        g = self.gem
        return {
            "K_range": list(self.K_range), "lambda_count": self.lambda_count,
            "r_max": self.r_max, "seed": self.seed, "rank_max_iter": self.rank_max_iter,
            "gem": {"min_iter": g.min_iter, "max_iter": g.max_iter,
                    "eps_loglik": g.eps_loglik, "eps_param": g.eps_param,
                    "line_search_base": g.line_search_base,
                    "line_search_max": g.line_search_max, "n_init": g.n_init,
                    "init_iter": g.init_iter, "min_sd_ratio": g.min_sd_ratio},
        }


def _penalty_kind(procedure: str) -> str:
    return "group_lasso" if procedure.startswith("group") else "lasso"


def _k_seed(seed: int, K: int) -> int:
    return int(np.random.SeedSequence([seed, K]).generate_state(1)[0])


def _masked(params: MixtureParams, J: SparsityPattern) -> MixtureParams:
    return MixtureParams(params.pi, np.where(J.mask(), params.Phi, 0.0), params.P)


# --- task bodies (module level so they pickle) -------------------------------


def _prepare_task(args):
    """Start partitions, unpenalized fit and grid for one K."""
    data, K, procedure, settings = args
    config = settings.gem.replace(seed=_k_seed(settings.seed, K), lam=0.0, restriction=None,
                                  penalty_kind=_penalty_kind(procedure))
    partitions = start_partitions(data, K, config)
    mle = run_gem(data, K, config, init=initialize(data, K, config, partitions=partitions))
    grid, _ = build_lambda_grid(data, K, config, count=settings.lambda_count, mle=mle)
    return K, config, partitions, mle, grid


def _lasso_task(args):
    """Penalized fit at one level, its support, and the restricted unpenalized refit.

    The refit is None when its likelihood is unbounded on that support.
    """
    data, K, config, partitions, lam = args
    pen = config.replace(lam=float(lam))
    fit = run_gem(data, K, pen, init=initialize(data, K, pen, partitions=partitions))
    J = extract_pattern(fit.params)
    if unbounded_fit(fit.tau.sum(axis=0), J, data.p):
        return J, fit, None
    refit = run_gem(data, K, config.replace(lam=0.0, restriction=J),
                    init=_masked(fit.params, J))
    if "degenerate_variance" in refit.flags or unbounded_fit(refit.tau.sum(axis=0), J, data.p):
        refit = None
    return J, fit, refit


def _rank_task(args):
    data, K, J, R, init, lam, procedure, max_iter = args
    return rank_refit(data, K, J, R, init, max_iter=max_iter, procedure=procedure, lam=lam)


def _better(new, old) -> bool:
    """Refit comparison: a missing refit never wins; otherwise lower objective."""
    if new is None:
        return False
    return old is None or new.objective < old.objective


def _run(func, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def fit_collection(data: Dataset, procedure: str = "lasso-mle",
                   settings: Optional[FitSettings] = None, workers: int = 1) -> ModelCollection:
    """Build the model collection of ``procedure`` over ``settings.K_range``.

    Rank procedures enumerate rank vectors up to ``settings.r_max``.
    """
    if procedure not in PROCEDURES:
        raise InvalidInputError(f"unknown procedure {procedure!r}; choose from {PROCEDURES}")
    settings = settings or FitSettings()
    Ks = sorted(set(int(k) for k in settings.K_range))
    if not Ks or Ks[0] < 1:
        raise InvalidInputError("K_range must hold positive integers")
    rank_mode = procedure.endswith("rank")

    prepared = _run(_prepare_task, [(data, K, procedure, settings) for K in Ks], workers)

    # one fit per (K, J); among grid levels reaching the same J the best refit is kept
    refits: dict = {}
    dropped = 0
    lasso_tasks, lasso_keys = [], []
    for K, config, partitions, mle, grid in prepared:
        if not (unbounded_fit(mle.tau.sum(axis=0), None, data.p)
                or "degenerate_variance" in mle.flags):
            refits[(K, extract_pattern(mle.params))] = (0.0, mle, mle)
        for lam in grid:
            lasso_tasks.append((data, K, config, partitions, float(lam)))
            lasso_keys.append((K, float(lam)))
    for (K, lam), (J, fit, refit) in zip(lasso_keys, _run(_lasso_task, lasso_tasks, workers)):
        if refit is None:
            dropped += 1
            if not rank_mode or len(J) == 0:
                continue
        old = refits.get((K, J))
        if old is None or _better(refit, old[1]):
            refits[(K, J)] = (lam, refit, fit)
    if dropped:
        logger.info("%d refits dropped: unbounded likelihood on their support", dropped)

    collection = ModelCollection()
    ordered = sorted(refits.items(), key=lambda kv: (kv[0][0], kv[0][1].pairs))
    if not rank_mode:
        for (K, J), (lam, res, _) in ordered:
            collection.add(ModelSpec(
                K=K, J=J, params=res.params, loglik=log_likelihood(res.params, data),
                dim=model_dimension(K, len(J), data.q), procedure=procedure, lam=lam,
                converged=res.converged))
    else:
        rank_tasks = []
        for (K, J), (lam, res, fit) in ordered:
            if len(J) == 0:
                continue
            # proportions and variances are frozen at the start, so an
            # unbounded refit is replaced by the penalized fit
            init = fit.params if res is None else res.params
            for R in enumerate_rank_vectors(K, J, q=data.q, r_max=settings.r_max):
                rank_tasks.append((data, K, J, R, init, lam, procedure,
                                   settings.rank_max_iter))
        for spec in _run(_rank_task, rank_tasks, workers):
            collection.add(spec)
    if len(collection) == 0:
        raise EmptyCollectionError(f"{procedure} produced no model")
    logger.info("%s: %d models over K=%s", procedure, len(collection), Ks)
    return collection
