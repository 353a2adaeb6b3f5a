"""SimSR representation loss, its bootstrapped targets, and the per-batch update."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from simsr.dynamics import DynamicsEnsemble, nll_loss, sample_next
from simsr.encoder import (
    Encoder,
    EncoderPair,
    cos_distance_unnormalized,
    ema_update,
    encode_backward,
)
from simsr.nn import make_optimizer


class TargetVariant(enum.Enum):
    OBSERVATION_SAMPLING = "observation_sampling"
    LATENT_DYNAMICS = "latent_dynamics"


@dataclass
class TrainConfig:
    gamma: float = 0.99
    batch_size: int = 128
    learning_rate: float = 1e-3
    momentum: float = 0.95
    loss_kind: str = "huber"
    huber_delta: float = 1.0
    target_variant: TargetVariant = TargetVariant.OBSERVATION_SAMPLING
    ensemble_size: int = 5
    optimizer: str = "sgd"
    latent_dim: int = 50
    hidden_dim: int = 64
    dynamics_hidden_dim: int = 64
    dynamics_learning_rate: float = 1e-3

    def __post_init__(self):
        self.target_variant = TargetVariant(self.target_variant)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.loss_kind not in ("mse", "huber"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        if self.target_variant is TargetVariant.LATENT_DYNAMICS and self.ensemble_size < 1:
            raise ValueError("latent-dynamics targets need an ensemble (ensemble_size >= 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_variant"] = self.target_variant.value
        return d


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.reward)


@dataclass
class StepMetrics:
    simsr_loss: float
    dynamics_loss: float
    mean_embedding_norm: float


def reward_gap(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    return np.abs(r[:, None] - r[None, :])


def simsr_target(
    rewards,
    pair: EncoderPair,
    variant: TargetVariant,
    gamma: float,
    next_obs=None,
    obs=None,
    actions=None,
    ensemble: DynamicsEnsemble | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Bootstrapped distance target ``|R_i - R_j| + gamma * cosdist(t_i, t_j)``.

    ``t`` is the momentum encoding of the next observations, or a latent sampled
    from one ensemble head (shared by the whole batch) applied to the momentum
    encoding of the current observations.
    """
    variant = TargetVariant(variant)
    if variant is TargetVariant.OBSERVATION_SAMPLING:
        t = pair.target.forward(next_obs)[0]
        next_dist = np.clip(1.0 - t @ t.T, 0.0, 2.0)
    else:
        if ensemble is None:
            raise ValueError("latent-dynamics targets need a dynamics ensemble")
        s = pair.target.forward(obs)[0]
        nxt, _ = sample_next(ensemble, s, np.asarray(actions), rng)
        next_dist = cos_distance_unnormalized(nxt, nxt)
    target = reward_gap(rewards) + gamma * next_dist
    return 0.5 * (target + target.T)


def simsr_loss(Z: np.ndarray, target: np.ndarray, loss_kind: str = "mse", huber_delta: float = 1.0):
    """Mean over all ``n^2`` pairs of the (squared or Huber) error between
    ``1 - Z Z^T`` and ``target``. Returns ``(loss, dloss/dZ)``."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if target.shape != (n, n):
        raise ValueError(f"target must be ({n}, {n}), got {target.shape}")
    err = (1.0 - Z @ Z.T) - target
    if loss_kind == "mse":
        loss = np.mean(err**2)
        g_dist = 2.0 * err / n**2
    elif loss_kind == "huber":
        abs_err = np.abs(err)
        quad = abs_err <= huber_delta
        per = np.where(quad, 0.5 * err**2, huber_delta * (abs_err - 0.5 * huber_delta))
        loss = np.mean(per)
        g_dist = np.clip(err, -huber_delta, huber_delta) / n**2
    else:
        raise ValueError(f"unknown loss_kind {loss_kind!r}")
    grad_Z = -(g_dist + g_dist.T) @ Z
    return float(loss), grad_Z


class SimSRLearner:
    """Owns the encoder pair, the dynamics ensemble and their optimizers."""

    def __init__(self, obs_dim: int, n_actions: int, config: TrainConfig, seed: int = 0):
        self.config = config
        self.n_actions = n_actions
        seeds = np.random.SeedSequence(seed).spawn(3)
        enc_seed, dyn_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
        hidden = (config.hidden_dim, config.hidden_dim)
        online = Encoder.init(obs_dim, config.latent_dim, hidden, seed=enc_seed)
        self.pair = EncoderPair(online, config.momentum)
        self.ensemble = None
        if config.ensemble_size > 0:
            self.ensemble = DynamicsEnsemble.init(
                config.latent_dim, n_actions, config.ensemble_size,
                hidden=(config.dynamics_hidden_dim,), seed=dyn_seed,
            )
        self.rng = np.random.default_rng(seeds[2])
        self.encoder_opt = make_optimizer(config.optimizer, config.learning_rate)
        self.dynamics_opt = make_optimizer(config.optimizer, config.dynamics_learning_rate)

    def encoder_gradients(self, batch: Batch):
        """SimSR loss, encoder gradients and the forward products they came from."""
        cfg = self.config
        Z, cache = self.pair.online.forward(batch.obs)
        target = simsr_target(
            batch.reward, self.pair, cfg.target_variant, cfg.gamma,
            next_obs=batch.next_obs, obs=batch.obs, actions=batch.action,
            ensemble=self.ensemble, rng=self.rng,
        )
        loss, grad_Z = simsr_loss(Z, target, cfg.loss_kind, cfg.huber_delta)
        grads = encode_backward(self.pair.online, cache, grad_Z)
        return loss, grads, Z, cache

    def dynamics_step(self, batch: Batch, Z: np.ndarray) -> float:
        """One NLL step for every head on ``Z -> encode(next_obs)``, both held constant."""
        if self.ensemble is None:
            return float("nan")
        z_next = self.pair.online.forward(batch.next_obs)[0]
        loss, grads = nll_loss(self.ensemble, Z, batch.action, z_next)
        self.dynamics_opt.step(self.ensemble.params, [g for head in grads for g in head])
        return float(loss)

    def apply_encoder_gradients(self, grads) -> None:
        self.encoder_opt.step(self.pair.online.params, grads)
        ema_update(self.pair)

    def train_step(self, batch: Batch) -> StepMetrics:
        """One encoder step on the SimSR loss, one dynamics step, then the EMA update.

        Losses are measured before the parameters move.
        """
        loss, grads, Z, cache = self.encoder_gradients(batch)
        dyn_loss = self.dynamics_step(batch, Z)
        self.apply_encoder_gradients(grads)
        return StepMetrics(loss, dyn_loss, float(np.mean(cache[2])))


def train_step(batch: Batch, learner: SimSRLearner) -> StepMetrics:
    return learner.train_step(batch)
