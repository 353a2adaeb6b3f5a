"""Discrete-action soft actor-critic on encoded latents.

Expectations over actions are exact sums over the softmax policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from simsr.nn import MLP, make_optimizer


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def huber(err: np.ndarray, delta: float = 1.0):
    """Elementwise Huber value and derivative."""
    a = np.abs(err)
    value = np.where(a <= delta, 0.5 * err**2, delta * (a - 0.5 * delta))
    return value, np.clip(err, -delta, delta)


@dataclass
class CriticParams:
    q1: MLP
    q2: MLP
    q1_target: MLP = field(default=None)
    q2_target: MLP = field(default=None)
    tau: float = 0.01
    target_update_period: int = 2
    n_updates: int = 0

    def __post_init__(self):
        if self.q1_target is None:
            self.q1_target = self.q1.copy()
        if self.q2_target is None:
            self.q2_target = self.q2.copy()

    @classmethod
    def init(cls, latent_dim: int, n_actions: int, hidden=(64,), seed: int = 0, **kw):
        s1, s2 = np.random.SeedSequence(seed).spawn(2)
        sizes = [latent_dim, *hidden, n_actions]
        return cls(MLP.init(sizes, np.random.default_rng(s1)), MLP.init(sizes, np.random.default_rng(s2)), **kw)

    @property
    def params(self):
        return self.q1.params + self.q2.params

    def q_min(self, z) -> np.ndarray:
        return np.minimum(self.q1(z), self.q2(z))

    def soft_update_targets(self):
        for net, tgt in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for t, o in zip(tgt.params, net.params):
                t[...] = (1 - self.tau) * t + self.tau * o


@dataclass
class ActorParams:
    mlp: MLP
    alpha: float = 0.1

    @classmethod
    def init(cls, latent_dim: int, n_actions: int, hidden=(64,), seed: int = 0, alpha: float = 0.1):
        return cls(MLP.init([latent_dim, *hidden, n_actions], np.random.default_rng(seed)), alpha)

    @property
    def params(self):
        return self.mlp.params

    def probs(self, z) -> np.ndarray:
        return np.exp(log_softmax(self.mlp(np.atleast_2d(z))))


def act(actor: ActorParams, latent, mode: str = "sample", rng: np.random.Generator | None = None) -> int:
    """Sample from ``softmax(logits)`` or take the argmax (lowest index on ties)."""
    logits = actor.mlp(np.atleast_2d(latent))[0]
    if mode == "greedy":
        return int(np.argmax(logits))
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    p = np.exp(log_softmax(logits))
    return int(rng.choice(len(p), p=p))


def soft_target(critic: CriticParams, actor: ActorParams, reward, z_next, gamma: float) -> np.ndarray:
    """``r + gamma * sum_a' pi(a'|s') [min target-Q(s', a') - alpha log pi(a'|s')]``."""
    logp = log_softmax(actor.mlp(z_next))
    q_next = np.minimum(critic.q1_target(z_next), critic.q2_target(z_next))
    v_next = np.sum(np.exp(logp) * (q_next - actor.alpha * logp), axis=1)
    return np.asarray(reward, dtype=np.float64) + gamma * v_next


def critic_loss(critic: CriticParams, z, action, y, huber_delta: float = 1.0):
    """Summed Huber loss of both heads against the fixed target ``y``.

    Returns ``(loss, [grads_q1, grads_q2], dloss/dz)``.
    """
    n = len(y)
    rows = np.arange(n)
    action = np.asarray(action)
    loss = 0.0
    head_grads = []
    grad_z = np.zeros_like(z)
    for net in (critic.q1, critic.q2):
        q, cache = net.forward(z)
        value, deriv = huber(q[rows, action] - y, huber_delta)
        loss += value.mean()
        g_q = np.zeros_like(q)
        g_q[rows, action] = deriv / n
        grads, g_in = net.backward(cache, g_q)
        head_grads.append(grads)
        grad_z += g_in
    return float(loss), head_grads, grad_z


def actor_loss(actor: ActorParams, critic: CriticParams, z):
    """``mean_s sum_a pi(a|s) [alpha log pi(a|s) - min Q(s, a)]`` with Q held fixed.

    Returns ``(loss, grads, mean_entropy)``.
    """
    n = z.shape[0]
    logits, cache = actor.mlp.forward(z)
    logp = log_softmax(logits)
    p = np.exp(logp)
    c = actor.alpha * logp - critic.q_min(z)
    per_state = np.sum(p * c, axis=1)
    g_logits = p * (c - per_state[:, None]) / n
    grads, _ = actor.mlp.backward(cache, g_logits)
    entropy = float(-np.sum(p * logp, axis=1).mean())
    return float(per_state.mean()), grads, entropy


@dataclass
class CriticLosses:
    loss: float
    mean_q: float


class SACAgent:
    """Critic and actor with their optimizers; works on latents supplied by the caller."""

    def __init__(
        self,
        latent_dim: int,
        n_actions: int,
        seed: int = 0,
        hidden: int = 64,
        learning_rate: float = 1e-3,
        optimizer: str = "adam",
        alpha: float = 0.1,
        critic_tau: float = 0.01,
        critic_target_update_period: int = 2,
        huber_delta: float = 1.0,
    ):
        s_critic, s_actor = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
        self.n_actions = n_actions
        self.critic = CriticParams.init(
            latent_dim, n_actions, (hidden,), s_critic,
            tau=critic_tau, target_update_period=critic_target_update_period,
        )
        self.actor = ActorParams.init(latent_dim, n_actions, (hidden,), s_actor, alpha)
        self.huber_delta = huber_delta
        self.critic_opt = make_optimizer(optimizer, learning_rate)
        self.actor_opt = make_optimizer(optimizer, learning_rate)

    def critic_update(self, z, action, reward, z_next, gamma: float):
        """One step on both heads toward the shared soft target; returns losses and
        the gradient w.r.t. ``z`` so the caller can push it into the encoder."""
        y = soft_target(self.critic, self.actor, reward, z_next, gamma)
        q_before = self.critic.q_min(z)
        loss, head_grads, grad_z = critic_loss(self.critic, z, action, y, self.huber_delta)
        self.critic_opt.step(self.critic.params, head_grads[0] + head_grads[1])
        self.critic.n_updates += 1
        if self.critic.n_updates % self.critic.target_update_period == 0:
            self.critic.soft_update_targets()
        mean_q = float(q_before[np.arange(len(y)), np.asarray(action)].mean())
        return CriticLosses(loss, mean_q), grad_z

    def actor_update(self, z):
        loss, grads, entropy = actor_loss(self.actor, self.critic, z)
        self.actor_opt.step(self.actor.params, grads)
        return loss, entropy


def critic_update(agent: SACAgent, z, action, reward, z_next, gamma: float):
    return agent.critic_update(z, action, reward, z_next, gamma)


def actor_update(agent: SACAgent, z):
    return agent.actor_update(z)
