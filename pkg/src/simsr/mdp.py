"""Finite MDPs, policies and exact value oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_ATOL = 1e-9


class DimensionError(ValueError):
    """Raised when array shapes disagree."""


class MDPValidationError(ValueError):
    """Raised when an MDP or policy violates its invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class FiniteMDP:
    """Tabular MDP with transition tensor ``P[s, a, s']`` and rewards ``r[s, a]``."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=np.float64)
        r = np.array(self.reward, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError(f"transition must be (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise DimensionError(f"reward must be {P.shape[:2]}, got {r.shape}")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))
        if self.validate:
            problems = validate_mdp(self)
            if problems:
                raise MDPValidationError(problems)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def gamma(self) -> float:
        return self.discount

    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.transition.max(axis=2), 1.0, atol=PROB_ATOL)))


@dataclass(frozen=True)
class Policy:
    """Stochastic policy table ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        pi = np.array(self.probs, dtype=np.float64)
        if pi.ndim != 2:
            raise DimensionError(f"policy must be (S, A), got {pi.shape}")
        bad = []
        for s in range(pi.shape[0]):
            if np.any(pi[s] < 0) or abs(pi[s].sum() - 1.0) > PROB_ATOL:
                bad.append(f"policy row {s} is not a distribution")
        if bad:
            raise MDPValidationError(bad)
        pi.setflags(write=False)
        object.__setattr__(self, "probs", pi)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])


def validate_mdp(mdp: FiniteMDP) -> list[str]:
    """Return every invariant violation of ``mdp`` (empty list when valid)."""
    problems = []
    P, r = mdp.transition, mdp.reward
    S, A, _ = P.shape
    for s in range(S):
        for a in range(A):
            for s2 in np.flatnonzero(P[s, a] < 0):
                problems.append(f"negative probability at (s={s}, a={a}, s'={s2})")
            total = P[s, a].sum()
            if abs(total - 1.0) > PROB_ATOL:
                problems.append(f"row (s={s}, a={a}) sums to {total!r}")
    for s, a in zip(*np.nonzero(~np.isfinite(r))):
        problems.append(f"non-finite reward at (s={s}, a={a})")
    if not 0.0 < mdp.discount < 1.0:
        problems.append(f"discount {mdp.discount!r} outside (0, 1)")
    return problems


def _check_shapes(mdp: FiniteMDP, policy: Policy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def policy_reward(mdp: FiniteMDP, policy: Policy) -> np.ndarray:
    _check_shapes(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def policy_transition(mdp: FiniteMDP, policy: Policy) -> np.ndarray:
    _check_shapes(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def value_iteration_budget(r_max: float, gamma: float, tol: float) -> int:
    """Sweeps needed for a sup-norm residual below ``tol`` starting from zero."""
    if r_max <= 0:
        return 1
    return max(1, math.ceil(math.log(tol * (1 - gamma) / r_max) / math.log(gamma)) + 1)


def policy_value(mdp: FiniteMDP, policy: Policy, tol: float = 1e-10) -> np.ndarray:
    """Evaluate ``policy`` by value iteration until the Bellman residual is at most ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = policy_reward(mdp, policy)
    P = policy_transition(mdp, policy)
    gamma = mdp.discount
    budget = value_iteration_budget(float(np.max(np.abs(r), initial=0.0)), gamma, tol)
    V = np.zeros(mdp.n_states)
    for _ in range(budget):
        V_new = r + gamma * P @ V
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual * gamma <= tol:
            break
    return V


def optimal_values(mdp: FiniteMDP, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Optimal state values and Q table by value iteration."""
    r_max = float(np.max(np.abs(mdp.reward), initial=0.0))
    budget = value_iteration_budget(r_max, mdp.discount, tol)
    V = np.zeros(mdp.n_states)
    for _ in range(budget):
        Q = mdp.reward + mdp.discount * mdp.transition @ V
        V_new = Q.max(axis=1)
        residual = np.max(np.abs(V_new - V))
        V = V_new
        if residual * mdp.discount <= tol:
            break
    Q = mdp.reward + mdp.discount * mdp.transition @ V
    return V, Q


def optimal_policy(mdp: FiniteMDP, tol: float = 1e-10) -> Policy:
    """Greedy policy with respect to the optimal Q table; ties go to the lowest action."""
    _, Q = optimal_values(mdp, tol)
    best = np.isclose(Q, Q.max(axis=1, keepdims=True), atol=1e-9)
    return Policy.deterministic(best.argmax(axis=1), mdp.n_actions)


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    seed: int,
    deterministic: bool = False,
    reward_range: tuple[float, float] = (0.0, 1.0),
) -> FiniteMDP:
    rng = np.random.default_rng(seed)
    if deterministic:
        P = np.zeros((n_states, n_actions, n_states))
        nxt = rng.integers(n_states, size=(n_states, n_actions))
        P[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
    else:
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(*reward_range, size=(n_states, n_actions))
    return FiniteMDP(P, r, gamma)


def random_policy(n_states: int, n_actions: int, seed: int) -> Policy:
    rng = np.random.default_rng(seed)
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


# Text format, one whitespace-separated record per line, '#' starts a comment:
#   line 1:              n_states n_actions gamma
#   next n_states lines: r[s, 0] ... r[s, A-1]
#   next S*A lines:      P[s, a, 0] ... P[s, a, S-1], ordered s-major then a
def dumps_mdp(mdp: FiniteMDP) -> str:
    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.discount!r}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in mdp.reward]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(" ".join(repr(float(v)) for v in mdp.transition[s, a]))
    return "\n".join(lines) + "\n"


def loads_mdp(text: str) -> FiniteMDP:
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or len(rows[0]) != 3:
        raise MDPValidationError(["header must be 'n_states n_actions gamma'"])
    S, A, gamma = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
    if len(rows) != 1 + S + S * A:
        raise MDPValidationError([f"expected {1 + S + S * A} records, found {len(rows)}"])
    try:
        r = np.array([[float(v) for v in row] for row in rows[1 : 1 + S]])
        P = np.array([[float(v) for v in row] for row in rows[1 + S :]])
    except ValueError as exc:
        raise MDPValidationError([f"ragged or non-numeric record: {exc}"]) from None
    if r.shape != (S, A) or P.shape != (S * A, S):
        raise MDPValidationError(["record lengths do not match header"])
    return FiniteMDP(P.reshape(S, A, S), r, gamma)


def save_mdp(mdp: FiniteMDP, path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path) -> FiniteMDP:
    return loads_mdp(Path(path).read_text())
