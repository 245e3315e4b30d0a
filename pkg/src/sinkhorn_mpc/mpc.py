"""Minimum-energy finite-horizon transport costs and the closed-form MPC
feedback laws built on them, plus a least-norm optimal-control solver used
as an independent oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, NearSingularGramianError
from .lti import (
    AgentGains,
    ContinuousAgent,
    DiscreteAgent,
    TargetSet,
    equilibrium_input,
    zoh_discretize,
)

__all__ = [
    "MpcLaw",
    "MinEnergySolution",
    "make_mpc_law",
    "transport_cost",
    "ubar_of_coupling",
    "mpc_input",
    "min_energy_oracle",
    "min_energy_oracle_continuous",
]


@dataclass(frozen=True, eq=False)
class MpcLaw:
    """Feedback law ``u = -F (x - x_tmp) + ubar(P)`` for one agent.

    ``feedback_gain`` is the ``F`` above; by construction
    ``A - B @ feedback_gain`` is exactly the stored closed-loop matrix of
    ``gains``.
    """

    gains: AgentGains
    targets: TargetSet
    agent_index: int
    mode: str
    feedback_gain: np.ndarray

    @property
    def ubar_row(self) -> np.ndarray:
        """Equilibrium inputs of this agent for every target, shape (N, m)."""
        return self.targets.ubar[self.agent_index]


def make_mpc_law(gains: AgentGains, targets: TargetSet, agent_index: int) -> MpcLaw:
    if targets.mode != gains.mode:
        raise InvalidArgumentError(
            f"target set is {targets.mode} but gains are {gains.mode}"
        )
    return MpcLaw(
        gains=gains,
        targets=targets,
        agent_index=agent_index,
        mode=gains.mode,
        feedback_gain=gains.feedback_gain,
    )


def transport_cost(gains: AgentGains, x, y) -> float:
    """Minimum-energy transport cost ``(x - y)' G_weight (x - y)``.

    Equals the optimal value of steering the agent from ``x`` to ``y``
    over the gains' horizon with a quadratic input penalty; zero iff
    ``x == y``.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(d @ gains.G_weight @ d)


def ubar_of_coupling(P_row, ubar_row) -> np.ndarray:
    """Barycentric equilibrium input ``N * sum_j P_ij ubar_ij`` for agent i.

    When the coupling row sums to 1/N this is a convex combination of the
    per-target equilibrium inputs and holds the barycentric target of the
    same row as an equilibrium.
    """
    P_row = np.asarray(P_row, dtype=float)
    ubar_row = np.asarray(ubar_row, dtype=float)
    return P_row.shape[0] * (P_row @ ubar_row)


def mpc_input(law: MpcLaw, x, x_tmp, ubar_P) -> np.ndarray:
    """First input of the minimum-energy MPC toward temporary target ``x_tmp``."""
    x = np.asarray(x, dtype=float)
    x_tmp = np.asarray(x_tmp, dtype=float)
    return -(law.feedback_gain @ (x - x_tmp)) + np.asarray(ubar_P, dtype=float)


@dataclass(frozen=True, eq=False)
class MinEnergySolution:
    cost: float
    inputs: np.ndarray  # (tau_h, m)
    ubar: np.ndarray  # (m,)


def min_energy_oracle(
    agent: DiscreteAgent, tau_h: int, x0, xf
) -> MinEnergySolution:
    """Exact minimum-energy steering from ``x0`` to ``xf`` in ``tau_h`` steps.

    Minimizes ``sum_k |u[k] - ubar|^2`` subject to the dynamics and both
    endpoint constraints, where ``ubar`` holds ``xf`` as an equilibrium.
    Solved as a least-norm problem on the stacked input-to-state map via a
    rank-revealing QR factorization, independently of any Gramian formula;
    intended for verification.
    """
    if not (isinstance(tau_h, (int, np.integer)) and tau_h >= 1):
        raise InvalidArgumentError(f"tau_h must be an integer >= 1, got {tau_h!r}")
    tau_h = int(tau_h)
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    A, B = agent.A, agent.B
    n, m = agent.n, agent.m

    ubar = equilibrium_input(agent, xf)

    # R = [A^(tau-1) B, ..., A B, B], so R @ vec(v) moves the shifted state
    blocks = [B]
    for _ in range(tau_h - 1):
        blocks.append(A @ blocks[-1])
    R = np.hstack(blocks[::-1])
    rhs = -np.linalg.matrix_power(A, tau_h) @ (x0 - xf)

    v, _, rank, _ = scipy.linalg.lstsq(R, rhs, lapack_driver="gelsy")
    if rank < n:
        raise NearSingularGramianError(
            f"endpoint map has rank {rank} < {n}: horizon tau_h={tau_h} does not "
            "reach the full state space"
        )
    residual = np.linalg.norm(R @ v - rhs)
    if residual > 1e-8 * (1.0 + np.linalg.norm(rhs)):
        raise NearSingularGramianError(
            f"endpoint constraint residual {residual:.3e} is too large"
        )
    v = v.reshape(tau_h, m)
    return MinEnergySolution(cost=float((v**2).sum()), inputs=v + ubar, ubar=ubar)


def min_energy_oracle_continuous(
    agent: ContinuousAgent, T_h: float, x0, xf, steps: int = 2000
) -> MinEnergySolution:
    """Continuous-horizon analogue of :func:`min_energy_oracle`.

    Realized by a fine zero-order-hold discretization (``steps`` slices of
    the horizon); the reported cost approximates the integral cost, so
    cross-checks against it should use a loose (~1e-4 relative) tolerance.
    """
    if not T_h > 0:
        raise InvalidArgumentError(f"horizon T_h must be positive, got {T_h}")
    h = T_h / steps
    disc = zoh_discretize(agent, h)
    sol = min_energy_oracle(disc, steps, x0, xf)
    return MinEnergySolution(cost=sol.cost * h, inputs=sol.inputs, ubar=sol.ubar)
