"""Exact fixed points of behavioural-metric operators on finite MDPs.

Three operators share the update ``F U(x, y) = |r_x - r_y| + gamma * E[U(x', y')]``
and differ only in how the successor pair is coupled:

* ``DETERMINISTIC``: successors are looked up (requires one-hot ``P^pi`` rows);
* ``WASSERSTEIN``: the optimal coupling, i.e. exact W1 with ``U`` as ground cost;
* ``INDEPENDENT``: the product coupling ``P(x'|x) P(y'|y)`` (MICo, and SimSR's
  fixed point).
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass

import numpy as np

from simsr.mdp import FiniteMDP, Policy, policy_reward, policy_transition, policy_value

# POT probes every installed array backend at import; only numpy is needed here.
for _key in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")
import ot  # noqa: E402

DIST_ATOL = 1e-9


class OperatorKind(enum.Enum):
    DETERMINISTIC = "deterministic"
    WASSERSTEIN = "wasserstein"
    INDEPENDENT = "independent"


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")


@dataclass(frozen=True)
class FixedPointReport:
    distances: np.ndarray
    iterations: int
    final_residual: float


@dataclass(frozen=True)
class BoundViolation:
    pair: tuple[int, int]
    value_gap: float
    distance: float
    excess: float


def check_distance_matrix(U: np.ndarray, atol: float = DIST_ATOL) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError(f"distance matrix must be square, got {U.shape}")
    if not np.all(np.isfinite(U)):
        raise ValueError("distance matrix has non-finite entries")
    if np.any(U < -atol):
        raise ValueError("distance matrix has negative entries")
    if not np.allclose(U, U.T, atol=atol, rtol=0):
        raise ValueError("distance matrix is not symmetric")
    return U


def _check_distribution(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < -DIST_ATOL) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} is not a probability vector")
    return np.clip(p, 0.0, None)


def _emd(p, q, C, log=False):
    rows, cols = np.flatnonzero(p > 0), np.flatnonzero(q > 0)
    sub = np.ascontiguousarray(C[np.ix_(rows, cols)])
    pr, qc = p[rows], q[cols]
    # POT insists on equal masses to ~1e-7; the supports were validated above.
    pr, qc = pr / pr.sum(), qc / qc.sum()
    if not log:
        return float(ot.emd2(pr, qc, sub)), None
    plan, info = ot.emd(pr, qc, sub, log=True)
    if info["warning"] is not None:
        raise RuntimeError(f"transport solver: {info['warning']}")
    return float(np.sum(plan * sub)), (rows, cols, plan, info["u"], info["v"], pr, qc, sub)


def w1_exact(p, q, ground, certify: bool | None = None) -> float:
    """Exact 1-Wasserstein distance between ``p`` and ``q`` under ``ground`` costs.

    With ``certify`` (default: on unless Python runs with ``-O``) the optimal
    plan is checked for primal feasibility, dual feasibility and a zero
    duality gap.
    """
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    C = np.asarray(ground, dtype=np.float64)
    if C.shape != (p.size, q.size):
        raise ValueError(f"ground cost shape {C.shape} does not match ({p.size}, {q.size})")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise ValueError("ground costs must be finite and nonnegative")
    if certify is None:
        certify = __debug__
    cost, cert = _emd(p, q, C, log=certify)
    if certify:
        _, _, plan, u, v, pr, qc, sub = cert
        scale = 1.0 + float(np.max(sub, initial=0.0))
        assert np.allclose(plan.sum(axis=1), pr, atol=1e-9)
        assert np.allclose(plan.sum(axis=0), qc, atol=1e-9)
        assert np.all(u[:, None] + v[None, :] <= sub + 1e-9 * scale), "dual infeasible"
        assert abs(cost - (u @ pr + v @ qc)) <= 1e-9 * scale, "duality gap"
    return cost


def _successors(P_pi: np.ndarray) -> np.ndarray:
    if not np.all(np.isclose(P_pi.max(axis=1), 1.0, atol=DIST_ATOL)):
        raise ValueError("deterministic operator needs one-hot policy transitions")
    return P_pi.argmax(axis=1)


def _step(U, r_pi, P_pi, gamma, kind):
    reward_gap = np.abs(r_pi[:, None] - r_pi[None, :])
    if kind is OperatorKind.INDEPENDENT:
        expected = P_pi @ U @ P_pi.T
    elif kind is OperatorKind.DETERMINISTIC:
        nxt = _successors(P_pi)
        expected = U[np.ix_(nxt, nxt)]
    elif kind is OperatorKind.WASSERSTEIN:
        n = U.shape[0]
        expected = np.empty_like(U)
        for x in range(n):
            for y in range(x, n):
                expected[x, y] = expected[y, x] = _emd(P_pi[x], P_pi[y], U)[0]
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    out = reward_gap + gamma * expected
    return 0.5 * (out + out.T)


def operator_step(U, mdp: FiniteMDP, policy: Policy, kind: OperatorKind) -> np.ndarray:
    """Apply one operator update to the distance matrix ``U``."""
    U = check_distance_matrix(U)
    if U.shape[0] != mdp.n_states:
        raise ValueError("distance matrix size does not match the MDP")
    return _step(U, policy_reward(mdp, policy), policy_transition(mdp, policy), mdp.discount, kind)


def iteration_budget(initial_residual: float, gamma: float, tol: float, safety: float = 2.0) -> int:
    if initial_residual <= tol:
        return 1
    return int(safety * (math.ceil(math.log(tol / initial_residual) / math.log(gamma)) + 1))


def solve_fixed_point(
    mdp: FiniteMDP,
    policy: Policy,
    kind: OperatorKind = OperatorKind.INDEPENDENT,
    tol: float = 1e-8,
    max_iter: int | None = None,
    init: np.ndarray | None = None,
) -> FixedPointReport:
    """Iterate the operator from ``init`` (zeros by default) until successive
    iterates differ by at most ``tol`` in sup-norm."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    r_pi = policy_reward(mdp, policy)
    P_pi = policy_transition(mdp, policy)
    gamma = mdp.discount
    if kind is OperatorKind.DETERMINISTIC:
        _successors(P_pi)
    U = np.zeros((mdp.n_states,) * 2) if init is None else check_distance_matrix(init).copy()

    U_next = _step(U, r_pi, P_pi, gamma, kind)
    residual = float(np.max(np.abs(U_next - U), initial=0.0))
    if max_iter is None:
        max_iter = iteration_budget(residual, gamma, tol)
    iterations = 1
    while residual > tol:
        if iterations >= max_iter:
            raise ConvergenceError(residual, iterations)
        U = U_next
        U_next = _step(U, r_pi, P_pi, gamma, kind)
        residual = float(np.max(np.abs(U_next - U)))
        iterations += 1
    return FixedPointReport(U_next, iterations, residual)


def value_bound_check(mdp: FiniteMDP, policy: Policy, U, tol: float = 1e-8) -> BoundViolation | None:
    """Check ``|V(x) - V(y)| <= U(x, y)`` for every pair, with slack for solver error.

    Returns ``None`` when the bound holds everywhere, otherwise the worst pair.
    """
    U = check_distance_matrix(U)
    gamma = mdp.discount
    V = policy_value(mdp, policy, tol * (1 - gamma) / 4)
    gap = np.abs(V[:, None] - V[None, :])
    excess = gap - U - tol * (1 + gamma) / (1 - gamma)
    x, y = np.unravel_index(np.argmax(excess), excess.shape)
    if excess[x, y] <= 0:
        return None
    return BoundViolation((int(x), int(y)), float(gap[x, y]), float(U[x, y]), float(excess[x, y]))


def write_distance_csv(U: np.ndarray, path) -> None:
    n = U.shape[0]
    lines = [",".join(str(i) for i in range(n))]
    lines += [",".join(repr(float(v)) for v in row) for row in U]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_distance_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    return np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
