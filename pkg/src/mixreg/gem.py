"""
Generalized EM for penalized mixtures of Gaussian regressions.

One GEM iteration is an E-step (responsibilities) followed by a single pass
of coordinate-wise improvements of the expected complete penalized
negative log-likelihood ``Q_pen``:

1. proportions ``pi`` by a backtracking step toward ``n_k / n``;
2. each diagonal precision ``[P_k]_{m,m}`` by the positive root of its
   stationarity quadratic;
3. one cyclic sweep over the coefficients of ``Phi`` with soft thresholding
   (Lasso) or block shrinkage across components (Group-Lasso).

Every sub-step minimizes ``Q_pen`` along its coordinate (or does not increase
it), so the observed penalized objective never increases.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .core import (
    Dataset,
    DegenerateResponseError,
    NumericalError,
    InvalidInputError,
    MixtureParams,
    SparsityPattern,
    component_log_densities,
    row_logsumexp,
    penalty,
)

logger = logging.getLogger(__name__)

PI_FLOOR = 1e-8
PENALTY_KINDS = ("none", "lasso", "group_lasso")


@dataclass(frozen=True)
class GemConfig:
    """Settings of one GEM run.

    ``eps_loglik`` and ``eps_param`` are relative tolerances: the run stops
    once ``|f_new - f_old| <= eps_loglik (1 + |f_old|)`` for the penalized
    objective and every parameter moved by at most ``eps_param (1 + |value|)``,
    provided ``min_iter`` iterations have been done.
    """

    lam: float = 0.0
    min_iter: int = 10
    max_iter: int = 1000
    eps_loglik: float = 1e-6
    eps_param: float = 1e-5
    line_search_base: float = 0.1
    line_search_max: int = 20
    n_init: int = 10
    init_iter: int = 10
    seed: int = 0
    penalty_kind: str = "lasso"
    restriction: Optional[SparsityPattern] = None
    # stop when a standard deviation falls below this fraction of the
    # response's marginal standard deviation (likelihood escaping to +inf)
    min_sd_ratio: float = 1e-6

    def __post_init__(self):
        if self.lam < 0 or not np.isfinite(self.lam):
            raise InvalidInputError(f"lambda must be non-negative, got {self.lam}")
        if not (1 <= self.min_iter <= self.max_iter):
            raise InvalidInputError("need 1 <= min_iter <= max_iter")
        if not (0.0 < self.line_search_base < 1.0):
            raise InvalidInputError("line_search_base must lie in (0, 1)")
        if self.penalty_kind not in PENALTY_KINDS:
            raise InvalidInputError(f"penalty_kind must be one of {PENALTY_KINDS}")
        if self.n_init < 1 or self.init_iter < 1:
            raise InvalidInputError("n_init and init_iter must be positive")

    def replace(self, **changes) -> "GemConfig":
        return dataclasses.replace(self, **changes)

    @property
    def effective_lam(self) -> float:
        return 0.0 if self.penalty_kind == "none" else self.lam

    @property
    def objective_kind(self) -> str:
        return "none" if self.effective_lam == 0 else self.penalty_kind


# ---------------------------------------------------------------------------
# E-step and sufficient statistics
# ---------------------------------------------------------------------------


def _tau_from_log(log_terms: NDArray) -> NDArray:
    tau = np.exp(log_terms - row_logsumexp(log_terms)[:, None])
    return tau / tau.sum(axis=1, keepdims=True)


def e_step(params: MixtureParams, data: Dataset) -> NDArray:
    """Posterior membership probabilities tau (n x K)."""
    return _tau_from_log(component_log_densities(params, data.x, data.y))


@dataclass
class GemState:
    """Current parameters plus the responsibility-weighted statistics of the data.

    The weighted data of the algorithm are ``x~_{i,k} = sqrt(tau_ik) x_i`` and
    ``y~_{i,k} = sqrt(tau_ik) y_i``; every quantity the M-step needs is a
    second moment of them, cached here as

    * ``gram[k] = x~_k^T x~_k``          (K, p, p)
    * ``xy[k]   = x~_k^T y~_k``          (K, p, q)
    * ``yy[k]   = ||y~_{k,m}||^2``       (K, q)
    """

    params: MixtureParams
    tau: NDArray
    nk: NDArray
    gram: NDArray
    xy: NDArray
    yy: NDArray
    n: int
    objective_trace: list = field(default_factory=list)

    @classmethod
    def build(cls, params: MixtureParams, data: Dataset, tau: Optional[NDArray] = None):
        if tau is None:
            tau = e_step(params, data)
        x, y = data.x, data.y
        wxT = (tau.T[:, :, None] * x[None, :, :]).transpose(0, 2, 1)  # (K, p, n)
        gram = wxT @ x
        xy = wxT @ y
        yy = tau.T @ (y * y)
        return cls(params=params, tau=tau, nk=tau.sum(axis=0), gram=gram, xy=xy, yy=yy,
                   n=data.n)

    def weighted_x(self, data: Dataset) -> NDArray:
        """x~ as an array of shape (K, n, p)."""
        return np.sqrt(self.tau.T)[:, :, None] * data.x[None, :, :]

    def weighted_y(self, data: Dataset) -> NDArray:
        """y~ as an array of shape (K, n, q)."""
        return np.sqrt(self.tau.T)[:, :, None] * data.y[None, :, :]


def s_statistic(state: GemState, k: int, j: int, Phi_k: Optional[NDArray] = None,
                P_k: Optional[NDArray] = None) -> NDArray:
    """[S_k]_{j,m} for all responses m at once (length q).

    ``S = -sum_i x~_{ikj} P_km y~_{ikm} + sum_{j2 != j} sum_i x~_{ikj} x~_{ikj2} Phi_{k,m,j2}``
    """
    Phi_k = state.params.Phi[k] if Phi_k is None else Phi_k
    P_k = state.params.P[k] if P_k is None else P_k
    g = state.gram[k, j]
    cross = Phi_k @ g - g[j] * Phi_k[:, j]
    return -P_k * state.xy[k, j] + cross


def s_matrix(state: GemState) -> NDArray:
    """All S values at the current parameters, shape (K, p, q)."""
    K, p = state.params.K, state.params.p
    out = np.empty((K, p, state.params.q))
    for k in range(K):
        for j in range(p):
            out[k, j] = s_statistic(state, k, j)
    return out


# ---------------------------------------------------------------------------
# M-step pieces
# ---------------------------------------------------------------------------


def _pi_objective(pi: NDArray, nk: NDArray, n: int, l1: NDArray, lam: float) -> float:
    used = nk > 0
    return float(-np.dot(nk[used], np.log(pi[used])) / n + lam * np.dot(pi, l1))


def pi_update(state: GemState, lam: float = 0.0, kind: str = "lasso", base: float = 0.1,
              max_steps: int = 20) -> tuple[NDArray, float]:
    """Backtracking update ``pi + t (n_k/n - pi)``; returns ``(pi_new, t)``.

    ``t`` is the largest ``base**l`` (l = 0..max_steps) that does not increase
    ``-(1/n) sum_k n_k log pi_k + lam sum_k pi_k ||Phi_k||_1``. If no step
    qualifies, ``pi`` is returned unchanged with ``t = 0``.
    """
    pi = np.asarray(state.params.pi)
    target = state.nk / state.n
    if kind == "lasso" and lam > 0:
        l1 = np.abs(state.params.Phi).sum(axis=(1, 2))
    else:
        l1 = np.zeros_like(pi)
        lam = 0.0
    current = _pi_objective(pi, state.nk, state.n, l1, lam)
    for step in range(max_steps + 1):
        t = base ** step
        cand = pi + t * (target - pi)
        if np.all(cand > 0) and _pi_objective(cand, state.nk, state.n, l1, lam) <= current:
            return cand, t
    return pi.copy(), 0.0


def _precision_root(yy: NDArray, cross: NDArray, nk: float) -> NDArray:
    # positive root of  yy P^2 - cross P - nk = 0, in the form without cancellation
    disc = np.sqrt(cross * cross + 4.0 * nk * yy)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(cross >= 0, (cross + disc) / (2.0 * yy), 2.0 * nk / (disc - cross))


def p_update(state: GemState, k: int, m: int, Phi_k: Optional[NDArray] = None) -> float:
    """New diagonal entry [P_k]_{m,m}.

    Solves ``-1 + P^2 ||y~||^2 / n_k - P <y~, Phi x~> / n_k = 0`` for its
    positive root.
    """
    Phi_k = state.params.Phi[k] if Phi_k is None else Phi_k
    yy = state.yy[k, m]
    if yy <= 0:
        raise DegenerateResponseError(
            f"weighted response {m} of component {k} is identically zero")
    cross = float(Phi_k[m] @ state.xy[k, :, m])
    return float(_precision_root(yy, cross, state.nk[k]))


def soft_threshold_update(S: NDArray, a: NDArray, thresh: NDArray) -> NDArray:
    """Minimizer of ``a/2 phi^2 + S phi + thresh |phi|`` (elementwise, a > 0)."""
    return np.where(S > thresh, (-S + thresh) / a, np.where(S < -thresh, -(S + thresh) / a, 0.0))


def phi_coordinate_update(state: GemState, k: int, m: int, j: int, lam: float,
                          restriction: Optional[NDArray] = None,
                          pi_k: Optional[float] = None) -> float:
    """New [Phi_k]_{m,j} by soft thresholding at ``n lam pi_k``."""
    if restriction is not None and not restriction[m, j]:
        return 0.0
    a = state.gram[k, j, j]
    if a <= 0:
        return 0.0
    pi_k = state.params.pi[k] if pi_k is None else pi_k
    S = s_statistic(state, k, j)[m]
    return float(soft_threshold_update(S, a, state.n * lam * pi_k))


def group_shrink(S: NDArray, a: NDArray, c: float, n_bisect: int = 200,
                 tol: float = 1e-10) -> NDArray:
    """Minimizer of ``sum_k (a_k/2 phi_k^2 + S_k phi_k) + c ||phi||_2``.

    ``S`` and ``a`` have shape (K, ...) with the block along axis 0; trailing
    axes are independent problems. Zero when ``||S||_2 <= c``; otherwise
    ``phi_k = -S_k rho / (a_k rho + c)`` where the block norm ``rho`` solves
    ``sum_k S_k^2 / (a_k rho + c)^2 = 1``, found by bisection.
    """
    S = np.asarray(S, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float).reshape((-1,) + (1,) * (S.ndim - 1)), S.shape)
    norm = np.sqrt((S * S).sum(axis=0))
    if c <= 0:
        return -S / a
    active = norm > c
    out = np.zeros_like(S)
    if not np.any(active):
        return out
    Sa = S[:, active]
    aa = a[:, active]
    lo = np.zeros(Sa.shape[1:])
    hi = np.sqrt((Sa * Sa).sum(axis=0)) / aa.min(axis=0)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        h = (Sa * Sa / (aa * mid + c) ** 2).sum(axis=0) - 1.0
        lo = np.where(h > 0, mid, lo)
        hi = np.where(h > 0, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(hi, 1e-300)):
            break
    rho = 0.5 * (lo + hi)
    out[:, active] = -Sa * rho / (aa * rho + c)
    return out


def phi_group_update(state: GemState, m: int, j: int, lam: float,
                     restriction: Optional[NDArray] = None) -> NDArray:
    """New block ([Phi_1]_{m,j}, ..., [Phi_K]_{m,j}) under the Group-Lasso penalty."""
    K = state.params.K
    if restriction is not None and not restriction[m, j]:
        return np.zeros(K)
    a = state.gram[:, j, j]
    S = np.array([s_statistic(state, k, j)[m] for k in range(K)])
    out = np.zeros(K)
    ok = a > 0
    if np.any(ok):
        out[ok] = group_shrink(S[ok], a[ok], state.n * lam * np.sqrt(K))
    return out


# ---------------------------------------------------------------------------
# one iteration
# ---------------------------------------------------------------------------


@dataclass
class GemResult:
    params: MixtureParams
    tau: NDArray
    objective_trace: list
    converged: bool
    n_iter: int
    flags: tuple = ()

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _m_step(state: GemState, config: GemConfig, mask: Optional[NDArray], flags: set):
    """One pass pi -> P -> Phi; returns new (pi, Phi, P) arrays."""
    lam = config.effective_lam
    kind = config.penalty_kind
    K, q, p = state.params.K, state.params.q, state.params.p
    n = state.n

    pi, _ = pi_update(state, lam, kind, config.line_search_base, config.line_search_max)
    if np.any(pi < PI_FLOOR):
        pi = np.maximum(pi, PI_FLOOR)
        pi = pi / pi.sum()
        flags.add("pi_floor")

    Phi = np.array(state.params.Phi)
    P = np.array(state.params.P)
    cross = np.einsum("kmj,kjm->km", Phi, state.xy)
    ok = state.yy > 0
    if not ok.all():
        flags.add("degenerate_response")
        P[ok] = _precision_root(state.yy[ok], cross[ok], np.broadcast_to(state.nk[:, None], ok.shape)[ok])
    else:
        P = _precision_root(state.yy, cross, state.nk[:, None])

    if kind == "group_lasso":
        c = n * lam * np.sqrt(K)
        a_all = np.array([state.gram[k].diagonal() for k in range(K)])  # (K, p)
        for j in range(p):
            S = np.empty((K, q))
            for k in range(K):
                g = state.gram[k, j]
                S[k] = -P[k] * state.xy[k, j] + Phi[k] @ g - g[j] * Phi[k, :, j]
            ok = a_all[:, j] > 0
            new = np.zeros((K, q))
            if np.any(ok):
                new[ok] = group_shrink(S[ok], a_all[ok, j], c)
            if mask is not None:
                new[:, ~mask[:, j]] = 0.0
            Phi[:, :, j] = new
    else:
        # components are decoupled given tau, so sweeping j for all (k, m)
        # at once matches the sequential (k, m, j) order
        thresh = (n * lam * pi)[:, None]
        diag = np.einsum("kjj->kj", state.gram)
        for j in range(p):
            a = diag[:, j]
            g = state.gram[:, j, :]
            S = (-P * state.xy[:, j, :] + np.matmul(Phi, g[:, :, None])[:, :, 0]
                 - a[:, None] * Phi[:, :, j])
            new = np.maximum(np.abs(S) - thresh, 0.0) * -np.sign(S)
            with np.errstate(divide="ignore", invalid="ignore"):
                new = np.where(a[:, None] > 0, new / a[:, None], 0.0)
            if mask is not None:
                new = np.where(mask[:, j], new, 0.0)
            Phi[:, :, j] = new
    return pi, Phi, P


def _param_vector(params: MixtureParams) -> NDArray:
    return np.concatenate([params.pi, params.Phi.ravel(), params.P.ravel()])


def _restriction_mask(config: GemConfig, q: int, p: int) -> Optional[NDArray]:
    if config.restriction is None:
        return None
    if (config.restriction.q, config.restriction.p) != (q, p):
        raise InvalidInputError("restriction pattern does not match the data dimensions")
    return config.restriction.mask()


def _objective_from_log(log_terms: NDArray, params: MixtureParams, config: GemConfig) -> float:
    n = log_terms.shape[0]
    value = -float(row_logsumexp(log_terms).sum()) / n
    lam = config.effective_lam
    if lam > 0:
        value += lam * penalty(params, config.penalty_kind)
    return value


def iterate(data: Dataset, params: MixtureParams, config: GemConfig,
            max_iter: Optional[int] = None, min_iter: Optional[int] = None) -> GemResult:
    """Run GEM iterations from ``params`` until the stopping rule fires."""
    max_iter = config.max_iter if max_iter is None else max_iter
    min_iter = min(config.min_iter if min_iter is None else min_iter, max_iter)
    mask = _restriction_mask(config, data.q, data.p)
    if mask is not None and np.any(params.Phi[:, ~mask] != 0):
        Phi = np.array(params.Phi)
        Phi[:, ~mask] = 0.0
        params = MixtureParams(params.pi, Phi, params.P)
    y_sd = data.y.std(axis=0)
    y_sd = np.where(y_sd > 0, y_sd, 1.0)
    p_limit = 1.0 / (config.min_sd_ratio * y_sd)

    log_terms = component_log_densities(params, data.x, data.y)
    obj = _objective_from_log(log_terms, params, config)
    if not np.isfinite(obj):
        raise InvalidInputError("initial parameters give a non-finite objective")
    trace = [obj]
    flags: set = set()
    converged = False
    it = 0
    while it < max_iter:
        tau = _tau_from_log(log_terms)
        state = GemState.build(params, data, tau)
        pi, Phi, P = _m_step(state, config, mask, flags)
        if (not (np.all(np.isfinite(P)) and np.all(np.isfinite(Phi)))
                or np.any(P > p_limit) or np.any(P <= 0)):
            flags.add("degenerate_variance")
            break
        new_params = MixtureParams(pi, Phi, P)
        new_log_terms = component_log_densities(new_params, data.x, data.y)
        new_obj = _objective_from_log(new_log_terms, new_params, config)
        if not np.isfinite(new_obj):
            flags.add("degenerate_variance")
            break
        it += 1
        old_vec = _param_vector(params)
        delta = np.abs(_param_vector(new_params) - old_vec)
        params, log_terms = new_params, new_log_terms
        trace.append(new_obj)
        small_obj = abs(new_obj - obj) <= config.eps_loglik * (1.0 + abs(obj))
        small_par = bool(np.all(delta <= config.eps_param * (1.0 + np.abs(old_vec))))
        obj = new_obj
        if it >= min_iter and small_obj and small_par:
            converged = True
            break
    tau = _tau_from_log(log_terms)
    return GemResult(params=params, tau=tau, objective_trace=trace, converged=converged,
                     n_iter=it, flags=tuple(sorted(flags)))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _params_from_partition(data: Dataset, labels: NDArray, K: int,
                           mask: Optional[NDArray]) -> MixtureParams:
    x, y = data.x, data.y
    q, p = data.q, data.p
    y_var = y.var(axis=0)
    var_floor = np.where(y_var > 0, 1e-6 * y_var, 1e-12)
    pi = np.empty(K)
    B = np.zeros((K, q, p))
    sigma2 = np.empty((K, q))
    for k in range(K):
        rows = labels == k
        xk, yk = x[rows], y[rows]
        pi[k] = rows.sum() / data.n
        gram = xk.T @ xk
        scale = max(np.trace(gram) / p, 1e-300)
        # a cluster with no more points than predictors would be interpolated
        # exactly (zero residual variance), so it gets a full-strength ridge
        ridge = 1e-8 * scale if rows.sum() > p else scale
        Bk = np.linalg.solve(gram + ridge * np.eye(p), xk.T @ yk).T
        if mask is not None:
            Bk = np.where(mask, Bk, 0.0)
        B[k] = Bk
        resid = yk - xk @ Bk.T
        sigma2[k] = np.maximum((resid ** 2).mean(axis=0), var_floor)
    return MixtureParams.from_regression(pi, B, sigma2)


def _kmeans_labels(z: NDArray, K: int, seed: int) -> NDArray:
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=K, n_init=1, random_state=seed)
    return km.fit_predict(z)


def start_partitions(data: Dataset, K: int, config: GemConfig) -> list:
    """The ``config.n_init`` seeded k-means partitions of the couples (x_i, y_i).

    A start whose partition leaves a cluster empty is reseeded (at most ten
    attempts); starts that never succeed are skipped.
    """
    if K == 1:
        return [np.zeros(data.n, dtype=int)]
    z = np.hstack([data.x, data.y])
    out = []
    for start in range(config.n_init):
        for attempt in range(10):
            seed = int(np.random.SeedSequence([config.seed, start, attempt]).generate_state(1)[0])
            cand = _kmeans_labels(z, K, seed)
            if np.bincount(cand, minlength=K).min() > 0:
                out.append(cand)
                break
    return out


def initialize(data: Dataset, K: int, config: GemConfig,
               return_result: bool = False, partitions: Optional[list] = None):
    """Start values from k-means on the couples (x_i, y_i).

    Each of ``config.n_init`` seeded k-means partitions yields per-cluster
    least-squares fits; ``config.init_iter`` GEM iterations are run from each
    and the start with the smallest penalized objective is kept.
    ``partitions`` can supply precomputed :func:`start_partitions`.
    """
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    if data.n < K:
        raise InvalidInputError(f"need at least K={K} observations, got {data.n}")
    mask = _restriction_mask(config, data.q, data.p)
    if partitions is None:
        partitions = start_partitions(data, K, config)
    best = None
    for labels in partitions:
        params = _params_from_partition(data, labels, K, mask)
        result = iterate(data, params, config, max_iter=config.init_iter,
                         min_iter=config.init_iter)
        if best is None or result.objective < best.objective:
            best = result
    if best is None:
        raise NumericalError("every k-means start produced an empty cluster")
    return best if return_result else best.params


def run_gem(data: Dataset, K: int, config: GemConfig,
            init: Optional[MixtureParams] = None) -> GemResult:
    """Full GEM run: initialization (unless ``init`` is given) then iteration to convergence."""
    if init is None:
        init = initialize(data, K, config)
    elif init.K != K:
        raise InvalidInputError(f"init has {init.K} components, expected {K}")
    result = iterate(data, init, config)
    if not result.converged:
        logger.debug("GEM stopped after %d iterations without converging (flags=%s)",
                     result.n_iter, result.flags)
    return result
