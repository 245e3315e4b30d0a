"""Entropy-regularized optimal transport between two N-point empirical
distributions with uniform weights 1/N.

The regularized problem

    minimize  sum_ij C_ij P_ij - eps * H(P)   over couplings P

with H(P) = -sum_ij P_ij (log P_ij - 1) is solved by alternating diagonal
scaling of the Gibbs kernel K = exp(-C/eps).  Scalings are kept in the log
domain by default because C/eps routinely exceeds the range of double
exponentials; a linear-domain fast path is available for well-scaled
problems.  The exact (eps = 0) assignment baseline lives here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import InvalidArgumentError, NonConvergenceError, NumericRangeError

__all__ = [
    "GibbsKernel",
    "ScalingState",
    "Assignment",
    "SinkhornResult",
    "gibbs_kernel",
    "sinkhorn_step",
    "sinkhorn_solve",
    "sinkhorn_partial",
    "coupling_from_scalings",
    "marginal_violation",
    "barycentric_projection",
    "entropy",
    "transport_objective",
    "entropic_cost",
    "exact_assignment",
]

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000


def _check_cost(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidArgumentError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidArgumentError("cost matrix contains non-finite entries")
    if (C < 0).any():
        raise InvalidArgumentError("cost matrix contains negative entries")
    return C


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    # all inputs are finite by construction, so no -inf guards needed
    m = a.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(a - m).sum(axis=axis))


@dataclass(frozen=True, eq=False)
class GibbsKernel:
    """Gibbs kernel of a cost matrix, stored in the log domain.

    ``log_K = -C / epsilon``; the linear kernel ``exp(log_K)`` is only
    materialized on demand (it underflows for strongly separated costs).
    """

    log_K: np.ndarray
    epsilon: float

    @property
    def n(self) -> int:
        return self.log_K.shape[0]

    @property
    def K(self) -> np.ndarray:
        """Linear-domain kernel; may underflow to exact zeros."""
        return np.exp(self.log_K)


@dataclass(frozen=True, eq=False)
class ScalingState:
    """Positive Sinkhorn scaling pair, stored as logs.

    Scalings are projective: states whose (alpha, beta) pairs differ by a
    positive factor describe the same coupling.
    """

    log_alpha: np.ndarray
    log_beta: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)


@dataclass(frozen=True)
class Assignment:
    """A permutation ``sigma`` (agent i -> target sigma[i]) and its cost."""

    sigma: tuple[int, ...]
    cost: float


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    scalings: ScalingState
    coupling: np.ndarray
    iterations: int


def gibbs_kernel(C, epsilon: float) -> GibbsKernel:
    """Build the Gibbs kernel ``K_ij = exp(-C_ij / epsilon)`` in log form."""
    C = _check_cost(C)
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    log_K = -C / epsilon
    log_K.setflags(write=False)
    return GibbsKernel(log_K=log_K, epsilon=float(epsilon))


def _log_alpha_of(alpha, n: int) -> np.ndarray:
    """Accept a linear scaling vector, a ScalingState, or None (ones)."""
    if alpha is None:
        return np.zeros(n)
    if isinstance(alpha, ScalingState):
        return np.asarray(alpha.log_alpha, dtype=float).copy()
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (n,):
        raise InvalidArgumentError(f"scaling must have shape ({n},), got {alpha.shape}")
    if not np.all(np.isfinite(alpha)) or (alpha <= 0).any():
        raise InvalidArgumentError("scaling must be strictly positive and finite")
    return np.log(alpha)


def _log_pair_update(log_K: np.ndarray, log_alpha: np.ndarray):
    """One paired Sinkhorn update in the log domain.

    beta = (1/N) / (K' alpha), then alpha = (1/N) / (K beta); the pair is
    rescaled so max(alpha) = 1, which leaves the coupling untouched.
    """
    log_n = np.log(log_K.shape[0])
    log_beta = -log_n - _logsumexp(log_K + log_alpha[:, None], axis=0)
    log_alpha = -log_n - _logsumexp(log_K + log_beta[None, :], axis=1)
    shift = log_alpha.max()
    return log_alpha - shift, log_beta + shift


def _linear_pair_update(K: np.ndarray, alpha: np.ndarray):
    n = K.shape[0]
    beta = (1.0 / n) / (K.T @ alpha)
    alpha = (1.0 / n) / (K @ beta)
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise NumericRangeError(
            "linear-domain Sinkhorn update produced non-finite scalings; "
            "use the log-domain mode"
        )
    c = alpha.max()
    return alpha / c, beta * c


def sinkhorn_step(kernel: GibbsKernel, alpha, *, log_domain: bool = True):
    """One paired Sinkhorn update; returns linear scalings ``(alpha, beta)``.

    The returned pair is normalized so ``max(alpha) = 1``.  The coupling
    ``alpha^ K beta^`` built from it has rows summing exactly to 1/N.
    """
    log_alpha = _log_alpha_of(alpha, kernel.n)
    if log_domain:
        log_alpha, log_beta = _log_pair_update(kernel.log_K, log_alpha)
        alpha_next, beta = np.exp(log_alpha), np.exp(log_beta)
        if not (np.all(np.isfinite(alpha_next)) and np.all(np.isfinite(beta))):
            raise NumericRangeError(
                "scalings exceed the linear double range; keep them in log form "
                "via sinkhorn_solve/sinkhorn_partial"
            )
        return alpha_next, beta
    return _linear_pair_update(kernel.K, np.exp(log_alpha))


def coupling_from_scalings(kernel: GibbsKernel, alpha, beta=None) -> np.ndarray:
    """Coupling ``P_ij = alpha_i K_ij beta_j`` (assembled in the log domain).

    ``alpha`` may be a :class:`ScalingState` (then ``beta`` is ignored) or
    a linear vector paired with a linear ``beta``.
    """
    if isinstance(alpha, ScalingState):
        log_alpha, log_beta = alpha.log_alpha, alpha.log_beta
    else:
        if beta is None:
            raise InvalidArgumentError("beta is required when alpha is a plain vector")
        log_alpha = _log_alpha_of(alpha, kernel.n)
        log_beta = _log_alpha_of(beta, kernel.n)
    return np.exp(log_alpha[:, None] + kernel.log_K + log_beta[None, :])


def marginal_violation(P: np.ndarray) -> float:
    """L1 distance of both marginals of ``P`` from the uniform 1/N vector."""
    n = P.shape[0]
    return float(
        np.abs(P.sum(axis=1) - 1.0 / n).sum() + np.abs(P.sum(axis=0) - 1.0 / n).sum()
    )


def sinkhorn_solve(
    kernel: GibbsKernel,
    alpha0=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    log_domain: bool = True,
) -> SinkhornResult:
    """Iterate paired Sinkhorn updates until both marginals are within ``tol``.

    Parameters
    ----------
    kernel : GibbsKernel
    alpha0 : array, ScalingState, or None
        Warm-start scaling (linear vector, or a previous state whose
        log-alpha is reused).  ``None`` starts from all ones.
    tol : float
        Stopping threshold on the summed L1 marginal violation of the
        current coupling.
    max_iter : int
        Iteration cap; exceeding it raises :class:`NonConvergenceError`
        carrying the last violation.

    Returns
    -------
    SinkhornResult
        Fixed-point scalings, the coupling, and the iteration count.
    """
    if not tol > 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    log_alpha = _log_alpha_of(alpha0, kernel.n)
    if log_domain:
        K = None
        alpha = None
    else:
        K = kernel.K
        alpha = np.exp(log_alpha)
    violation = np.inf
    for it in range(1, max_iter + 1):
        if log_domain:
            log_alpha, log_beta = _log_pair_update(kernel.log_K, log_alpha)
            P = np.exp(log_alpha[:, None] + kernel.log_K + log_beta[None, :])
        else:
            alpha, beta = _linear_pair_update(K, alpha)
            P = alpha[:, None] * K * beta[None, :]
        violation = marginal_violation(P)
        if violation < tol:
            if not log_domain:
                log_alpha, log_beta = np.log(alpha), np.log(beta)
            state = ScalingState(log_alpha=log_alpha, log_beta=log_beta)
            return SinkhornResult(scalings=state, coupling=P, iterations=it)
    raise NonConvergenceError(
        f"Sinkhorn did not reach tol={tol:.1e} within {max_iter} iterations "
        f"(last violation {violation:.3e})",
        violation=float(violation),
        iterations=max_iter,
    )


def sinkhorn_partial(
    kernel: GibbsKernel,
    alpha0,
    S: int,
    *,
    log_domain: bool = True,
) -> SinkhornResult:
    """Exactly ``S`` paired Sinkhorn updates from warm start ``alpha0``.

    Returns the coupling built from the last (alpha, beta) pair together
    with the advanced alpha scaling, which is the warm start for the next
    control step.  Rows of the coupling sum exactly to 1/N regardless of
    how far the columns still are from uniform.
    """
    if not (isinstance(S, (int, np.integer)) and S >= 1):
        raise InvalidArgumentError(f"S must be an integer >= 1, got {S!r}")
    log_alpha = _log_alpha_of(alpha0, kernel.n)
    if log_domain:
        for _ in range(int(S)):
            log_alpha, log_beta = _log_pair_update(kernel.log_K, log_alpha)
        P = np.exp(log_alpha[:, None] + kernel.log_K + log_beta[None, :])
    else:
        K = kernel.K
        alpha = np.exp(log_alpha)
        for _ in range(int(S)):
            alpha, beta = _linear_pair_update(K, alpha)
        P = alpha[:, None] * K * beta[None, :]
        log_alpha, log_beta = np.log(alpha), np.log(beta)
    state = ScalingState(log_alpha=log_alpha, log_beta=log_beta)
    return SinkhornResult(scalings=state, coupling=P, iterations=int(S))


def barycentric_projection(P: np.ndarray, points) -> np.ndarray:
    """Coupling-weighted targets ``x_i = N sum_j P_ij points_j``.

    When the rows of ``P`` sum to 1/N each output is a convex combination
    of ``points`` and therefore stays inside their norm ball.
    """
    P = np.asarray(P, dtype=float)
    if (P < 0).any():
        raise InvalidArgumentError("coupling must be nonnegative")
    points = np.asarray(points, dtype=float)
    return P.shape[0] * (P @ points)


def entropy(P) -> float:
    """Entropy ``H(P) = -sum_ij P_ij (log P_ij - 1)`` with 0 log 0 = 0."""
    P = np.asarray(P, dtype=float)
    if (P < 0).any():
        raise InvalidArgumentError("coupling must be nonnegative")
    pos = P > 0
    terms = np.zeros_like(P)
    terms[pos] = P[pos] * (np.log(P[pos]) - 1.0)
    return float(-terms.sum())


def transport_objective(C, P, epsilon: float) -> float:
    """Regularized transport objective ``sum C P - epsilon H(P)``."""
    C = np.asarray(C, dtype=float)
    return float((C * P).sum() - epsilon * entropy(P))


def entropic_cost(
    C,
    epsilon: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    alpha0=None,
) -> float:
    """Optimal value of the entropy-regularized transport problem.

    Evaluates the objective at the Sinkhorn fixed point for cost ``C`` and
    regularization ``epsilon``.
    """
    C = _check_cost(C)
    kernel = gibbs_kernel(C, epsilon)
    result = sinkhorn_solve(kernel, alpha0=alpha0, tol=tol, max_iter=max_iter)
    return transport_objective(C, result.coupling, epsilon)


def _lexicographic_refine(C: np.ndarray, sigma: np.ndarray, opt: float) -> np.ndarray:
    """Smallest-permutation tie-break among cost-optimal assignments.

    Greedily fixes rows in order, committing the smallest column that still
    completes to the optimal total.  A column-minima lower bound prunes
    candidates, so the reduced solves below only run on actual ties.
    """
    N = C.shape[0]
    tol = 1e-12 * (1.0 + abs(opt))
    sigma = sigma.copy()
    prefix = 0.0
    used = np.zeros(N, dtype=bool)
    for i in range(N):
        current = sigma[i]
        for j in np.flatnonzero(~used):
            if j >= current:
                break
            rest_cols = np.flatnonzero(~used)
            rest_cols = rest_cols[rest_cols != j]
            if i + 1 < N:
                sub = C[np.ix_(np.arange(i + 1, N), rest_cols)]
                if prefix + C[i, j] + sub.min(axis=1).sum() > opt + tol:
                    continue
                rows, cols = scipy.optimize.linear_sum_assignment(sub)
                total = prefix + C[i, j] + sub[rows, cols].sum()
                if total <= opt + tol:
                    sigma[i] = j
                    sigma[i + 1 :] = rest_cols[cols]
                    break
            elif prefix + C[i, j] <= opt + tol:
                sigma[i] = j
                break
        used[sigma[i]] = True
        prefix += C[i, sigma[i]]
    return sigma


def exact_assignment(C) -> Assignment:
    """Minimum-cost permutation via the Hungarian method.

    Ties are broken toward the lexicographically smallest permutation so
    the unregularized baseline is deterministic.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidArgumentError(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidArgumentError("cost matrix contains non-finite entries")
    rows, cols = scipy.optimize.linear_sum_assignment(C)
    opt = float(C[rows, cols].sum())
    sigma = _lexicographic_refine(C, cols, opt)
    cost = float(C[np.arange(C.shape[0]), sigma].sum())
    return Assignment(sigma=tuple(int(j) for j in sigma), cost=cost)
