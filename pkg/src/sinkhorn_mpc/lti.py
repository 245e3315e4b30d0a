"""Linear-systems kernel: discretization, Gramians, gains, and spectral
certificates for the per-agent minimum-energy control laws.

Continuous agents follow ``x' = A x + B u``; discrete agents follow
``x[k+1] = A x[k] + B u[k]``.  All heavy lifting happens on small dense
matrices (n <= 8 in practice), so everything uses direct dense solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    InfeasibleTargetError,
    InvalidArgumentError,
    NearSingularGramianError,
)

__all__ = [
    "ContinuousAgent",
    "DiscreteAgent",
    "AgentGains",
    "TargetSet",
    "matrix_exponential",
    "zoh_discretize",
    "continuous_gramian",
    "reachability_gramian",
    "equilibrium_input",
    "build_target_set",
    "spectral_radius",
    "kappa_bound",
]

#: condition number beyond which a Gramian is treated as singular
GRAMIAN_COND_LIMIT = 1e12


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return M


def _check_system(A: np.ndarray, B: np.ndarray) -> None:
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidArgumentError(f"A must be square, got shape {A.shape}")
    if B.shape[0] != n or B.shape[1] < 1:
        raise InvalidArgumentError(
            f"B must have {n} rows and at least one column, got shape {B.shape}"
        )


@dataclass(frozen=True)
class ContinuousAgent:
    """Continuous-time LTI agent ``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        _check_system(A, B)
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class DiscreteAgent:
    """Discrete-time LTI agent ``x[k+1] = A x[k] + B u[k]`` with sampling
    period ``h`` (carried along for time axes and accumulated costs)."""

    A: np.ndarray
    B: np.ndarray
    h: float

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        _check_system(A, B)
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidArgumentError(f"sampling period h must be positive, got {self.h}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class AgentGains:
    """Precomputed gains for one agent and one horizon.

    Attributes
    ----------
    agent : ContinuousAgent | DiscreteAgent
        The system the gains were computed for.
    horizon : float | int
        Prediction horizon: a time span for continuous agents, a step
        count for discrete agents.
    W : ndarray
        Minimum-energy Gramian over the horizon (continuous
        controllability Gramian of ``(-A, B)``, or the discrete
        reachability Gramian).
    W_inv : ndarray
        Inverse of ``W``; satisfies ``W @ W_inv = I`` to working accuracy.
    G_weight : ndarray
        Weight of the quadratic transport cost ``(x - y)' G_weight (x - y)``.
        Equals ``W_inv`` for continuous agents.
    feedback_gain : ndarray
        State-feedback gain ``F`` with closed loop ``A_cl = A - B @ F``.
    A_cl : ndarray
        Closed-loop matrix under the minimum-energy MPC law.
    rho : float
        Spectral radius of ``A_cl``.
    exp_neg_AT : ndarray | None
        ``expm(-A' T)`` (continuous agents only); used by stationarity
        diagnostics.
    """

    agent: ContinuousAgent | DiscreteAgent
    horizon: float | int
    W: np.ndarray
    W_inv: np.ndarray
    G_weight: np.ndarray
    feedback_gain: np.ndarray
    A_cl: np.ndarray
    rho: float
    exp_neg_AT: np.ndarray | None = None
    kappa_table: dict = field(default_factory=dict, repr=False)

    @property
    def mode(self) -> str:
        return "continuous" if isinstance(self.agent, ContinuousAgent) else "discrete"

    def kappa(self, nu: float) -> float:
        """Memoized power-growth constant ``kappa_bound(self.A_cl, nu)``."""
        key = float(nu)
        if key not in self.kappa_table:
            self.kappa_table[key] = kappa_bound(self.A_cl, nu, rho=self.rho)
        return self.kappa_table[key]


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Target states plus the equilibrium-input table for a group of agents.

    ``ubar[i, j]`` is an input holding agent ``i`` at target ``j``;
    ``rbar`` is the largest target norm (the reach of the barycentric
    projection).
    """

    targets: np.ndarray  # (N, n)
    ubar: np.ndarray  # (N, N, m)
    rbar: float
    mode: str  # "continuous" | "discrete"


def matrix_exponential(M) -> np.ndarray:
    """Matrix exponential ``expm(M)`` of a square matrix.

    Thin validation wrapper over :func:`scipy.linalg.expm`
    (scaling-and-squaring with a Pade core).
    """
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"M must be square, got shape {M.shape}")
    return scipy.linalg.expm(M)


def zoh_discretize(agent: ContinuousAgent, h: float) -> DiscreteAgent:
    """Zero-order-hold discretization with sampling period ``h``.

    Returns the exact step matrices ``A_d = expm(A h)`` and
    ``B_d = (int_0^h expm(A s) ds) B``, both read off a single augmented
    matrix exponential.
    """
    if not (h > 0 and math.isfinite(h)):
        raise InvalidArgumentError(f"sampling period h must be positive, got {h}")
    n, m = agent.n, agent.m
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = agent.A
    aug[:n, n:] = agent.B
    E = matrix_exponential(aug * h)
    return DiscreteAgent(A=E[:n, :n], B=E[:n, n:], h=h)


def _invert_gramian(W: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(W)
    if not np.isfinite(cond) or cond > GRAMIAN_COND_LIMIT:
        raise NearSingularGramianError(
            f"{what} has condition number {cond:.3e} (> {GRAMIAN_COND_LIMIT:.0e}); "
            "the pair is uncontrollable or numerically degenerate"
        )
    W_inv = np.linalg.solve(W, np.eye(W.shape[0]))
    return 0.5 * (W_inv + W_inv.T)


def continuous_gramian(agent: ContinuousAgent, T_h: float) -> AgentGains:
    """Gains for the continuous minimum-energy law over horizon ``T_h``.

    Computes ``W = int_0^T expm(-A t) B B' expm(-A' t) dt`` with the
    Van Loan augmented-exponential identity (no quadrature step size to
    tune), the cost weight ``G_weight = W^-1``, the feedback gain
    ``B' G_weight`` and the closed loop ``A_cl = A - B B' G_weight``,
    which is verified to be Hurwitz.
    """
    if not (T_h > 0 and math.isfinite(T_h)):
        raise InvalidArgumentError(f"horizon T_h must be positive, got {T_h}")
    A, B = agent.A, agent.B
    n = agent.n
    # Van Loan block: expm([[-A, BB'], [0, A']] T) = [[expm(-A T), W expm(A' T)],
    #                                                 [0,          expm(A' T)]]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = -A
    aug[:n, n:] = B @ B.T
    aug[n:, n:] = A.T
    E = matrix_exponential(aug * T_h)
    exp_neg_AT = E[:n, :n].T.copy()  # expm(-A' T)
    W = E[:n, n:] @ E[:n, :n].T
    W = 0.5 * (W + W.T)

    G_weight = _invert_gramian(W, f"controllability Gramian (T_h={T_h})")
    feedback_gain = B.T @ G_weight
    A_cl = A - B @ feedback_gain
    eig = np.linalg.eigvals(A_cl)
    if eig.real.max() >= 0:
        raise NearSingularGramianError(
            f"closed-loop matrix is not Hurwitz (max Re(eig) = {eig.real.max():.3e}); "
            "Gramian inversion is unreliable for this pair"
        )
    return AgentGains(
        agent=agent,
        horizon=float(T_h),
        W=W,
        W_inv=G_weight,
        G_weight=G_weight,
        feedback_gain=feedback_gain,
        A_cl=A_cl,
        rho=float(np.abs(eig).max()),
        exp_neg_AT=exp_neg_AT,
    )


def reachability_gramian(agent: DiscreteAgent, tau_h: int) -> AgentGains:
    """Gains for the discrete minimum-energy law over ``tau_h`` steps.

    ``W`` is the reachability Gramian ``sum_k A^k B B' (A')^k`` summed
    directly, ``G_weight = (A^tau)' W^-1 A^tau`` weights the transport
    cost, and the feedback gain is ``B' (A')^(tau-1) W^-1 A^tau``.  The
    closed loop is Schur stable (spectral radius < 1) whenever ``W`` is
    invertible.
    """
    if not (isinstance(tau_h, (int, np.integer)) and tau_h >= 1):
        raise InvalidArgumentError(f"tau_h must be an integer >= 1, got {tau_h!r}")
    tau_h = int(tau_h)
    A, B = agent.A, agent.B
    n = agent.n

    W = np.zeros((n, n))
    P = B.copy()  # A^k B
    A_pow = np.eye(n)  # A^k
    for _ in range(tau_h):
        W += P @ P.T
        A_pow_prev = A_pow
        P = A @ P
        A_pow = A @ A_pow
    # after the loop: A_pow = A^tau, A_pow_prev = A^(tau-1)
    W = 0.5 * (W + W.T)

    W_inv = _invert_gramian(W, f"reachability Gramian (tau_h={tau_h})")
    G_weight = A_pow.T @ W_inv @ A_pow
    G_weight = 0.5 * (G_weight + G_weight.T)
    feedback_gain = B.T @ A_pow_prev.T @ W_inv @ A_pow
    A_cl = A - B @ feedback_gain
    rho = spectral_radius(A_cl)
    if rho >= 1:
        raise NearSingularGramianError(
            f"closed-loop spectral radius {rho:.6f} >= 1; Gramian inversion is "
            "unreliable for this pair"
        )
    return AgentGains(
        agent=agent,
        horizon=tau_h,
        W=W,
        W_inv=W_inv,
        G_weight=G_weight,
        feedback_gain=feedback_gain,
        A_cl=A_cl,
        rho=rho,
    )


def equilibrium_input(agent: ContinuousAgent | DiscreteAgent, target) -> np.ndarray:
    """Minimum-norm constant input holding ``target`` as an equilibrium.

    Solves ``B u = -A x`` (continuous) or ``B u = (I - A) x`` (discrete)
    in the least-squares sense and rejects targets whose residual exceeds
    ``1e-9 * (1 + |x|)``.
    """
    x = np.asarray(target, dtype=float)
    if x.shape != (agent.n,):
        raise InvalidArgumentError(f"target must have shape ({agent.n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("target contains non-finite entries")
    if isinstance(agent, ContinuousAgent):
        rhs = -agent.A @ x
    else:
        rhs = x - agent.A @ x
    ubar, *_ = np.linalg.lstsq(agent.B, rhs, rcond=None)
    residual = np.linalg.norm(agent.B @ ubar - rhs)
    tol = 1e-9 * (1.0 + np.linalg.norm(x))
    if residual > tol:
        raise InfeasibleTargetError(
            f"target {x} admits no constant equilibrium input "
            f"(residual {residual:.3e} > {tol:.3e})"
        )
    return ubar


def build_target_set(agents, targets) -> TargetSet:
    """Validate targets against every agent and tabulate equilibrium inputs.

    Raises :class:`InfeasibleTargetError` if any (agent, target) pair has
    no equilibrium input, i.e. the standing feasibility assumption fails.
    """
    agents = list(agents)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    N = len(agents)
    if targets.shape[0] != N:
        raise InvalidArgumentError(
            f"need one target per agent: {N} agents but {targets.shape[0]} targets"
        )
    n = agents[0].n
    m = agents[0].m
    if targets.shape[1] != n:
        raise InvalidArgumentError(
            f"targets must have shape ({N}, {n}), got {targets.shape}"
        )
    if any(a.n != n or a.m != m for a in agents):
        raise InvalidArgumentError("all agents must share state and input dimensions")
    modes = {isinstance(a, ContinuousAgent) for a in agents}
    if len(modes) != 1:
        raise InvalidArgumentError("cannot mix continuous and discrete agents")

    ubar = np.zeros((N, N, m))
    for i, agent in enumerate(agents):
        for j in range(N):
            ubar[i, j] = equilibrium_input(agent, targets[j])
    targets.setflags(write=False)
    ubar.setflags(write=False)
    return TargetSet(
        targets=targets,
        ubar=ubar,
        rbar=float(np.linalg.norm(targets, axis=1).max()),
        mode="continuous" if modes.pop() else "discrete",
    )


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix (dense eigensolve)."""
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"M must be square, got shape {M.shape}")
    return float(np.abs(np.linalg.eigvals(M)).max())


def kappa_bound(A_cl, nu: float, rho: float | None = None, max_power: int = 1_000_000) -> float:
    """Smallest constant ``kappa`` with ``|A_cl^k|_2 <= kappa (rho + nu)^k``.

    Scans matrix powers, tracking the running maximum of
    ``|A_cl^k|_2 / (rho + nu)^k``.  The scan stops once the ratio drops
    below 1: by submultiplicativity every later ratio is bounded by one
    already seen, so the running maximum is the global one.  Termination
    is guaranteed because ``rho < rho + nu``.
    """
    A_cl = _as_matrix(A_cl, "A_cl")
    if rho is None:
        rho = spectral_radius(A_cl)
    if not nu > 0:
        raise InvalidArgumentError(f"nu must be positive, got {nu}")
    gamma = rho + nu
    if gamma >= 1:
        raise InvalidArgumentError(
            f"rho + nu = {gamma:.6f} must be < 1 for a geometric power bound"
        )
    log_gamma = math.log(gamma)
    kappa = 1.0  # k = 0 term
    P = A_cl.copy()
    for k in range(1, max_power + 1):
        log_ratio = math.log(np.linalg.norm(P, 2)) - k * log_gamma
        if log_ratio < 0:
            break
        kappa = max(kappa, math.exp(log_ratio))
        P = P @ A_cl
    else:
        raise NearSingularGramianError(
            f"kappa power scan did not terminate within {max_power} iterations"
        )
    return kappa
