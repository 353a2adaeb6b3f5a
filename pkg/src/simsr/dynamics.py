"""Ensemble of diagonal-Gaussian latent dynamics heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from simsr.nn import MLP

LOGVAR_MIN = float(np.log(1e-6))
LOGVAR_MAX = float(np.log(1e2))


@dataclass
class DynamicsEnsemble:
    """K heads, each an MLP ``(latent, one-hot action) -> (mean, log-variance)``."""

    heads: list[MLP]
    latent_dim: int
    n_actions: int

    @classmethod
    def init(cls, latent_dim: int, n_actions: int, k: int = 5, hidden=(64,), seed: int = 0):
        seeds = np.random.SeedSequence(seed).spawn(k)
        heads = [
            MLP.init([latent_dim + n_actions, *hidden, 2 * latent_dim], np.random.default_rng(s))
            for s in seeds
        ]
        return cls(heads, latent_dim, n_actions)

    @property
    def k(self) -> int:
        return len(self.heads)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for head in self.heads for p in head.params]

    def _inputs(self, latent, action):
        latent = np.atleast_2d(np.asarray(latent, dtype=np.float64))
        action = np.asarray(action)
        if action.ndim <= 1 and np.issubdtype(action.dtype, np.integer):
            action = np.eye(self.n_actions)[np.atleast_1d(action)]
        action = np.atleast_2d(action).astype(np.float64)
        if latent.shape[1] != self.latent_dim or action.shape[1] != self.n_actions:
            raise ValueError("latent/action dimensions do not match the ensemble")
        if latent.shape[0] != action.shape[0]:
            raise ValueError("latent and action batches differ in length")
        return np.concatenate([latent, action], axis=1)

    def head_forward(self, k: int, latent, action):
        """Mean, clamped log-variance and backprop cache of head ``k``."""
        x = self._inputs(latent, action)
        out, cache = self.heads[k].forward(x)
        mean, raw = out[:, : self.latent_dim], out[:, self.latent_dim :]
        logvar = np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)
        return mean, logvar, (cache, raw)

    def predict(self, latent, action):
        """Per-head means and variances, shape ``(K, n, latent_dim)``."""
        means, variances = [], []
        for k in range(self.k):
            mu, lv, _ = self.head_forward(k, latent, action)
            means.append(mu)
            variances.append(np.exp(lv))
        return np.stack(means), np.stack(variances)

    def predictive_variance(self, latent, action) -> np.ndarray:
        """Total variance of the uniform mixture over heads, per input (averaged over dims)."""
        means, variances = self.predict(latent, action)
        total = variances.mean(axis=0) + means.var(axis=0)
        return total.mean(axis=1)


def nll_loss(ensemble: DynamicsEnsemble, latent, action, next_latent_target):
    """Gaussian NLL averaged over heads, batch and latent dimensions.

    Returns ``(loss, grads)`` with one gradient list per head. The target is a
    constant: no gradient is produced for it.
    """
    target = np.atleast_2d(np.asarray(next_latent_target, dtype=np.float64))
    latent = np.atleast_2d(np.asarray(latent, dtype=np.float64))
    for arr in (latent, target, np.asarray(action, dtype=np.float64)):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite input to nll_loss")
    n, d = target.shape
    total = 0.0
    grads = []
    for k in range(ensemble.k):
        mu, lv, (cache, raw) = ensemble.head_forward(k, latent, action)
        inv_var = np.exp(-lv)
        err = target - mu
        total += np.mean(0.5 * lv + 0.5 * err**2 * inv_var)
        scale = 1.0 / (ensemble.k * n * d)
        g_mu = -err * inv_var * scale
        g_lv = (0.5 - 0.5 * err**2 * inv_var) * scale
        g_lv = g_lv * ((raw > LOGVAR_MIN) & (raw < LOGVAR_MAX))
        head_grads, _ = ensemble.heads[k].backward(cache, np.concatenate([g_mu, g_lv], axis=1))
        grads.append(head_grads)
    return total / ensemble.k, grads


def sample_next(ensemble: DynamicsEnsemble, latent, action, rng: np.random.Generator):
    """Pick one head uniformly, then draw ``mean + std * z`` for every row of the batch.

    Returns ``(samples, head_index)``; samples are not projected back onto the sphere.
    """
    head = int(rng.integers(ensemble.k))
    mu, lv, _ = ensemble.head_forward(head, latent, action)
    z = rng.standard_normal(mu.shape)
    sample = mu + np.exp(0.5 * lv) * z
    if np.ndim(latent) == 1:
        sample = sample[0]
    return sample, head
