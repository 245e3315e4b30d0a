"""Independent reference implementations used to verify the package.

Everything here deliberately avoids the code paths under test: series
expansions instead of scaling-and-squaring, quadrature instead of
augmented exponentials, exhaustive enumeration instead of the Hungarian
method, primal mirror descent instead of kernel scaling, KKT elimination
instead of QR least-norm solves.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from sinkhorn_mpc import DiscreteAgent, reachability_gramian
from sinkhorn_mpc.errors import NearSingularGramianError


def taylor_expm(M: np.ndarray, terms: int = 30) -> np.ndarray:
    """Truncated power series for expm; accurate for ||M|| <~ 1."""
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ M / k
        out = out + term
    return out


def riemann_zoh_input_matrix(A: np.ndarray, B: np.ndarray, h: float, slices: int = 20000):
    """(int_0^h expm(A s) ds) B by midpoint quadrature on taylor/scipy expm."""
    import scipy.linalg

    acc = np.zeros((A.shape[0], B.shape[1]))
    ds = h / slices
    for k in range(slices):
        s = (k + 0.5) * ds
        acc += scipy.linalg.expm(A * s) @ B * ds
    return acc


def quadrature_min_energy_gramian(A: np.ndarray, B: np.ndarray, T: float, slices: int = 4000):
    """int_0^T expm(-A t) B B' expm(-A' t) dt by midpoint quadrature."""
    import scipy.linalg

    n = A.shape[0]
    acc = np.zeros((n, n))
    dt = T / slices
    for k in range(slices):
        t = (k + 0.5) * dt
        E = scipy.linalg.expm(-A * t) @ B
        acc += E @ E.T * dt
    return acc


def summed_reachability_gramian(A: np.ndarray, B: np.ndarray, tau: int) -> np.ndarray:
    """Reachability Gramian as R R' from the stacked controllability matrix."""
    blocks = [B]
    for _ in range(tau - 1):
        blocks.append(A @ blocks[-1])
    R = np.hstack(blocks)
    return R @ R.T


def power_iteration_radius(M: np.ndarray, iters: int = 5000, seed: int = 0) -> float:
    """Spectral radius by block power iteration (block size 2 to handle
    complex-conjugate dominant pairs); the projected 2x2 eigenvalues come
    from the quadratic formula, not a library eigensolver."""
    n = M.shape[0]
    if n == 1:
        return abs(float(M[0, 0]))
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, 2)))
    est = 0.0
    for _ in range(iters):
        Z = M @ Q
        Q, _ = np.linalg.qr(Z)
        T = Q.T @ M @ Q
        tr, det = T[0, 0] + T[1, 1], T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
        disc = complex(tr * tr - 4.0 * det) ** 0.5
        lam = max(abs((tr + disc) / 2.0), abs((tr - disc) / 2.0))
        if abs(lam - est) < 1e-13 * max(1.0, lam):
            return float(lam)
        est = lam
    return float(est)


def kappa_brute_force(A_cl: np.ndarray, nu: float, k_max: int = 200) -> float:
    rho = power_iteration_radius(A_cl)
    gamma = rho + nu
    P = np.eye(A_cl.shape[0])
    best = 1.0
    for k in range(1, k_max + 1):
        P = P @ A_cl
        best = max(best, np.linalg.norm(P, 2) / gamma**k)
    return best


def brute_force_assignment(C: np.ndarray):
    """Exhaustive minimum over all permutations; lexicographic tie-break."""
    n = C.shape[0]
    best_cost, best_sigma = math.inf, None
    for sigma in itertools.permutations(range(n)):
        cost = sum(C[i, sigma[i]] for i in range(n))
        if cost < best_cost - 1e-12:
            best_cost, best_sigma = cost, sigma
    return best_sigma, best_cost


def ipf_project(Q: np.ndarray, tol: float = 1e-13, max_sweeps: int = 20000) -> np.ndarray:
    """KL projection of a positive matrix onto uniform-marginal couplings
    by alternating proportional fitting."""
    n = Q.shape[0]
    P = Q.copy()
    target = 1.0 / n
    for _ in range(max_sweeps):
        P *= target / P.sum(axis=1, keepdims=True)
        P *= target / P.sum(axis=0, keepdims=True)
        if np.abs(P.sum(axis=1) - target).sum() < tol:
            return P
    return P


def entropic_objective(C: np.ndarray, P: np.ndarray, eps: float) -> float:
    pos = P > 0
    ent = -(P[pos] * (np.log(P[pos]) - 1.0)).sum()
    return float((C * P).sum() - eps * ent)


def mirror_descent_entropic_ot(
    C: np.ndarray,
    eps: float,
    step_factor: float = 0.5,
    stop: float = 1e-13,
    max_iter: int = 50_000,
):
    """Primal projected mirror descent for the entropic transport problem.

    Multiplicative gradient steps (mirror map = entropy) followed by a KL
    projection back onto the uniform-marginal polytope; the step is kept
    below 1/eps so the iteration is a genuine descent sequence rather
    than a one-shot reparameterization.
    """
    n = C.shape[0]
    P = np.full((n, n), 1.0 / n**2)
    eta = step_factor / eps
    for _ in range(max_iter):
        grad = C + eps * np.log(P)
        P_next = ipf_project(P * np.exp(-eta * grad))
        if np.abs(P_next - P).max() < stop:
            return P_next
        P = P_next
    return P


def entropic_2x2_bisection(C: np.ndarray, eps: float, iters: int = 200) -> np.ndarray:
    """2x2 entropic transport by bisection on the 1-D optimality condition.

    With uniform marginals the coupling is [[p, 1/2-p], [1/2-p, p]]; the
    objective derivative in p is monotone, so bisection pins the optimum.
    """
    d = C[0, 0] + C[1, 1] - C[0, 1] - C[1, 0]

    def dphi(p):
        return d + 2.0 * eps * (math.log(p) - math.log(0.5 - p))

    lo, hi = 1e-300, 0.5 - 1e-17
    if dphi(lo) > 0:
        p = lo
    elif dphi(hi) < 0:
        p = hi
    else:
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if dphi(mid) > 0:
                hi = mid
            else:
                lo = mid
        p = 0.5 * (lo + hi)
    return np.array([[p, 0.5 - p], [0.5 - p, p]])


def naive_sinkhorn_fixed_point(K: np.ndarray, iters: int = 20000) -> np.ndarray:
    """Plain linear-domain fixed-point iteration on the scaling pair."""
    n = K.shape[0]
    alpha = np.ones(n)
    for _ in range(iters):
        beta = (1.0 / n) / (K.T @ alpha)
        alpha = (1.0 / n) / (K @ beta)
    return alpha[:, None] * K * beta[None, :]


def min_energy_by_kkt(agent: DiscreteAgent, tau: int, x0, xf, ubar):
    """Endpoint-constrained least-norm control by dense KKT elimination."""
    A, B = agent.A, agent.B
    n, m = agent.n, agent.m
    blocks = [B]
    for _ in range(tau - 1):
        blocks.append(A @ blocks[-1])
    R = np.hstack(blocks[::-1])
    b = -np.linalg.matrix_power(A, tau) @ (np.asarray(x0) - np.asarray(xf))
    kkt = np.zeros((tau * m + n, tau * m + n))
    kkt[: tau * m, : tau * m] = 2.0 * np.eye(tau * m)
    kkt[: tau * m, tau * m :] = R.T
    kkt[tau * m :, : tau * m] = R
    rhs = np.concatenate([np.zeros(tau * m), b])
    sol = np.linalg.solve(kkt, rhs)
    v = sol[: tau * m].reshape(tau, m)
    return float((v**2).sum()), v + np.asarray(ubar)


def random_controllable_discrete(rng, n: int, m: int, tau: int, radius: float = 0.95):
    """Sample a discrete agent whose tau-step Gramian is comfortably invertible."""
    for _ in range(200):
        A = rng.standard_normal((n, n))
        A *= radius / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
        B = rng.standard_normal((n, m))
        agent = DiscreteAgent(A=A, B=B, h=1.0)
        try:
            reachability_gramian(agent, tau)
        except NearSingularGramianError:
            continue
        return agent
    raise RuntimeError("could not sample a controllable pair")


def feasible_discrete_target(agent: DiscreteAgent, rng):
    """Target with an exact equilibrium input: xf = (I - A)^-1 B u."""
    n = agent.n
    I_A = np.eye(n) - agent.A
    if abs(np.linalg.det(I_A)) < 1e-8:
        return np.zeros(n)  # the origin is always an equilibrium
    u = rng.standard_normal(agent.m)
    return np.linalg.solve(I_A, agent.B @ u)
