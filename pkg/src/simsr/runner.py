"""Training loops, evaluation and transfer studies on pixel gridworlds."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from simsr.agent import SACAgent, act
from simsr.encoder import Encoder, EncoderPair, encode_backward, encoder_pair_from_sections
from simsr.envs import GridWorldEnv, ReplayBuffer, ground_truth_bundle
from simsr.mdp import Policy, optimal_values, policy_value
from simsr.metrics import OperatorKind, solve_fixed_point
from simsr.nn import load_sections, save_sections
from simsr.training import SimSRLearner, TrainConfig

STEP_COLUMNS = ("step", "simsr_loss", "dynamics_loss", "mean_embedding_norm", "metric_approx_error")
EPISODE_COLUMNS = ("episode", "return", "length", "mean_q", "actor_entropy")
EVAL_COLUMNS = ("step", "eval_return", "greedy_value_ratio", "metric_approx_error")


class ConfigError(ValueError):
    pass


def _from_dict(cls, data: dict | None, section: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


@dataclass
class EnvConfig:
    height: int = 3
    width: int = 3
    goal: tuple = (2, 2)
    start: tuple = (0, 0)
    reward_scale: float = 1.0
    distractor_mode: str = "none"
    distractor_seed: int = 0
    horizon: int = 100

    def __post_init__(self):
        self.goal = tuple(self.goal)
        self.start = tuple(self.start)

    def make(self, gamma: float) -> GridWorldEnv:
        return GridWorldEnv(gamma=gamma, **dataclasses.asdict(self))


@dataclass
class AgentConfig:
    hidden: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    alpha: float = 0.1
    critic_tau: float = 0.01
    critic_target_update_period: int = 2
    huber_delta: float = 1.0


@dataclass
class RunSettings:
    mode: str = "agent"
    encoder: str = "learned"
    steps: int = 2000
    initial_steps: int = 1000
    eval_interval: int = 1000
    eval_episodes: int = 10
    checkpoint_interval: int = 1000
    buffer_capacity: int = 100_000
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.mode not in ("agent", "representation"):
            raise ValueError(f"mode must be 'agent' or 'representation', got {self.mode!r}")
        if self.encoder not in ("learned", "onehot", "frozen"):
            raise ValueError(f"encoder must be 'learned', 'onehot' or 'frozen', got {self.encoder!r}")
        if self.mode == "representation" and self.encoder != "learned":
            raise ValueError("representation mode trains the encoder; encoder must be 'learned'")
        self.seeds = [int(s) for s in self.seeds]


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunSettings = field(default_factory=RunSettings)
    transfer_env: EnvConfig | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {"env", "train", "agent", "run", "transfer_env"}
        unknown = sorted(set(data) - sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        return cls(
            env=_from_dict(EnvConfig, data.get("env"), "env"),
            train=_from_dict(TrainConfig, data.get("train"), "train"),
            agent=_from_dict(AgentConfig, data.get("agent"), "agent"),
            run=_from_dict(RunSettings, data.get("run"), "run"),
            transfer_env=(
                _from_dict(EnvConfig, data["transfer_env"], "transfer_env")
                if data.get("transfer_env") is not None else None
            ),
        )

    def to_dict(self) -> dict:
        out = {
            "env": _jsonable(dataclasses.asdict(self.env)),
            "train": self.train.to_dict(),
            "agent": dataclasses.asdict(self.agent),
            "run": dataclasses.asdict(self.run),
        }
        if self.transfer_env is not None:
            out["transfer_env"] = _jsonable(dataclasses.asdict(self.transfer_env))
        return out


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# -- evaluation helpers ----------------------------------------------------------


class Featurizer:
    """Maps observations to latents: the online encoder, a frozen encoder, or one-hot states."""

    def __init__(self, kind: str, env: GridWorldEnv, pair: EncoderPair | None = None):
        self.kind = kind
        self.env = env
        self.pair = pair

    @property
    def latent_dim(self) -> int:
        return self.env.n_states if self.kind == "onehot" else self.pair.online.latent_dim

    @property
    def trainable(self) -> bool:
        return self.kind == "learned"

    def online(self, obs) -> np.ndarray:
        if self.kind == "onehot":
            return np.atleast_2d(obs)[:, : self.env.n_states].copy()
        return self.pair.online.forward(obs)[0]

    def target(self, obs) -> np.ndarray:
        if self.kind == "learned":
            return self.pair.target.forward(obs)[0]
        return self.online(obs)


def state_observations(env: GridWorldEnv, phase: int = 0, episode: int = 0) -> np.ndarray:
    return np.stack([env.emitter.emit(s, phase, episode) for s in range(env.n_states)])


def learned_distances(encode, env: GridWorldEnv, phase: int = 0) -> np.ndarray:
    Z = encode(state_observations(env, phase))
    return np.clip(1.0 - Z @ Z.T, 0.0, 2.0)


def off_diagonal(M: np.ndarray) -> np.ndarray:
    return M[np.triu_indices(M.shape[0], 1)]


def metric_error(learned: np.ndarray, exact: np.ndarray) -> float:
    return float(np.mean(np.abs(off_diagonal(learned) - off_diagonal(exact))))


def exact_metric(env: GridWorldEnv, policy: Policy | None = None, tol: float = 1e-8) -> np.ndarray:
    mdp = ground_truth_bundle(env).mdp
    policy = policy or Policy.uniform(mdp.n_states, mdp.n_actions)
    return solve_fixed_point(mdp, policy, OperatorKind.INDEPENDENT, tol).distances


def _distractor_clocks(env: GridWorldEnv, n_static: int = 10):
    mode = env.emitter.distractor_mode
    if mode == "scrolling_pattern":
        return [(t, 0) for t in range(env.emitter.n_phases)]
    if mode == "static_noise":
        return [(0, e) for e in range(n_static)]
    return [(0, 0)]


def metric_quality(encoder: Encoder, env: GridWorldEnv, policy: Policy | None = None) -> dict:
    """Compare learned cosine distances over all states with the exact fixed point.

    The learned matrix is averaged over distractor clocks; the invariance gap is
    the largest cosine distance between two renderings of the same state.
    """
    exact = exact_metric(env, policy)
    clocks = _distractor_clocks(env)
    per_clock = []
    for t, ep in clocks:
        Z = encoder(state_observations(env, t, ep))
        per_clock.append(Z)
    stacked = np.stack(per_clock)  # (clocks, states, d)
    learned = np.mean([np.clip(1.0 - Z @ Z.T, 0.0, 2.0) for Z in per_clock], axis=0)
    gap = 0.0
    for s in range(env.n_states):
        Zs = stacked[:, s, :]
        gap = max(gap, float(np.max(np.clip(1.0 - Zs @ Zs.T, 0.0, 2.0))))
    diff = np.abs(off_diagonal(learned) - off_diagonal(exact))
    rho = spearmanr(off_diagonal(learned), off_diagonal(exact))[0]
    return {
        "max_abs_error": float(diff.max()),
        "mean_abs_error": float(diff.mean()),
        "spearman_rho": float(rho) if np.isfinite(rho) else 0.0,
        "invariance_gap": gap,
        "n_pairs": int(diff.size),
        "n_distractor_clocks": len(clocks),
    }


def greedy_policy(featurizer: Featurizer, agent: SACAgent, env: GridWorldEnv) -> Policy:
    logits = agent.actor.mlp(featurizer.online(state_observations(env)))
    return Policy.deterministic(np.argmax(logits, axis=1), env.n_actions)


def greedy_value_ratio(featurizer: Featurizer, agent: SACAgent, env: GridWorldEnv) -> float:
    mdp = ground_truth_bundle(env).mdp
    v_opt, _ = optimal_values(mdp)
    v = policy_value(mdp, greedy_policy(featurizer, agent, env))
    return float(v[env.start_state] / v_opt[env.start_state])


def evaluate_greedy(featurizer: Featurizer, agent: SACAgent, env: GridWorldEnv, episodes: int) -> float:
    rng = np.random.default_rng(0)
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        total, done = 0.0, False
        while not done:
            a = act(agent.actor, featurizer.online(obs), "greedy")
            tr = env.step(a, rng)
            total += tr.reward
            obs, done = tr.next_obs, tr.done
        returns.append(total)
    return float(np.mean(returns))


# -- training --------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    step_rows: list = field(default_factory=list)
    episode_rows: list = field(default_factory=list)
    eval_rows: list = field(default_factory=list)
    learner: SimSRLearner | None = None
    agent: SACAgent | None = None
    featurizer: Featurizer | None = None
    checkpoints: list = field(default_factory=list)


def checkpoint_sections(learner: SimSRLearner | None, agent: SACAgent | None, pair=None) -> dict:
    sections = {}
    pair = pair or (learner.pair if learner else None)
    if pair is not None:
        sections["encoder.online"] = pair.online.params
        sections["encoder.target"] = pair.target.params
        sections["encoder.momentum"] = [np.array([pair.momentum])]
    if learner is not None and learner.ensemble is not None:
        for k, head in enumerate(learner.ensemble.heads):
            sections[f"dynamics.head{k}"] = head.params
    if agent is not None:
        c = agent.critic
        sections["critic.q1"] = c.q1.params
        sections["critic.q2"] = c.q2.params
        sections["critic.q1_target"] = c.q1_target.params
        sections["critic.q2_target"] = c.q2_target.params
        sections["actor"] = agent.actor.params + [np.array([agent.actor.alpha])]
    return sections


def load_encoder_checkpoint(path) -> EncoderPair:
    sections = load_sections(path)
    if "encoder.online" not in sections:
        raise ConfigError(f"{path}: checkpoint has no encoder")
    return encoder_pair_from_sections(sections)


def train(
    cfg: ExperimentConfig,
    seed: int,
    env_cfg: EnvConfig | None = None,
    frozen: EncoderPair | None = None,
    checkpoint_dir: Path | None = None,
    track_metric: bool = True,
) -> RunResult:
    """Interleaved loop: act, record, sample, SimSR step, dynamics step,
    critic step (its encoder gradient joins the SimSR one), actor step.

    ``representation`` mode follows a uniform random policy and trains only the
    encoder and dynamics.
    """
    tcfg, run = cfg.train, cfg.run
    env_cfg = env_cfg or cfg.env
    env = env_cfg.make(tcfg.gamma)
    eval_env = env_cfg.make(tcfg.gamma)
    seeds = np.random.SeedSequence(seed).spawn(5)
    learner_seed, agent_seed, buffer_seed = (int(s.generate_state(1)[0]) for s in seeds[:3])
    act_rng = np.random.default_rng(seeds[3])
    env_rng = np.random.default_rng(seeds[4])
    agent_mode = run.mode == "agent"
    encoder_kind = "frozen" if frozen is not None else run.encoder

    learner = None
    if encoder_kind == "learned":
        learner = SimSRLearner(env.obs_dim, env.n_actions, tcfg, learner_seed)
        featurizer = Featurizer("learned", env, learner.pair)
    elif encoder_kind == "frozen":
        if frozen is None:
            raise ConfigError("encoder 'frozen' needs a checkpoint")
        if frozen.online.obs_dim != env.obs_dim:
            raise ConfigError("frozen encoder and environment disagree on observation size")
        featurizer = Featurizer("frozen", env, frozen)
    else:
        featurizer = Featurizer("onehot", env)
    agent = None
    if agent_mode:
        a = cfg.agent
        agent = SACAgent(
            featurizer.latent_dim, env.n_actions, agent_seed, a.hidden, a.learning_rate,
            a.optimizer, a.alpha, a.critic_tau, a.critic_target_update_period, a.huber_delta,
        )
    buffer = ReplayBuffer(run.buffer_capacity, env.obs_dim, buffer_seed)
    result = RunResult(seed, learner=learner, agent=agent, featurizer=featurizer)

    uniform_exact = exact_metric(env) if (track_metric and learner and not agent_mode) else None

    obs = env.reset()
    ep_return, ep_len, ep_q, ep_entropy = 0.0, 0, [], []
    for step in range(1, run.steps + 1):
        if not agent_mode or step <= run.initial_steps:
            action = int(act_rng.integers(env.n_actions))
        else:
            action = act(agent.actor, featurizer.online(obs), "sample", act_rng)
        tr = env.step(action, env_rng)
        buffer.push(tr)
        ep_return += tr.reward
        ep_len += 1
        obs = tr.next_obs
        if tr.done:
            result.episode_rows.append(
                (len(result.episode_rows), ep_return, ep_len,
                 float(np.mean(ep_q)) if ep_q else math.nan,
                 float(np.mean(ep_entropy)) if ep_entropy else math.nan)
            )
            obs = env.reset()
            ep_return, ep_len, ep_q, ep_entropy = 0.0, 0, [], []

        warm = len(buffer) >= tcfg.batch_size and (not agent_mode or step > run.initial_steps)
        if warm:
            batch = buffer.sample(tcfg.batch_size)
            metrics = (math.nan, math.nan, math.nan)
            if learner is not None:
                loss, grads, Z, cache = learner.encoder_gradients(batch)
                dyn_loss = learner.dynamics_step(batch, Z)
                if agent_mode:
                    z_next = featurizer.target(batch.next_obs)
                    closs, grad_z = agent.critic_update(Z, batch.action, batch.reward, z_next, tcfg.gamma)
                    ep_q.append(closs.mean_q)
                    extra = encode_backward(learner.pair.online, cache, grad_z)
                    grads = [g + e for g, e in zip(grads, extra)]
                learner.apply_encoder_gradients(grads)
                metrics = (loss, dyn_loss, float(np.mean(cache[2])))
            elif agent_mode:
                z = featurizer.online(batch.obs)
                closs, _ = agent.critic_update(
                    z, batch.action, batch.reward, featurizer.target(batch.next_obs), tcfg.gamma
                )
                ep_q.append(closs.mean_q)
            if agent_mode:
                _, entropy = agent.actor_update(featurizer.online(batch.obs))
                ep_entropy.append(entropy)
            approx = math.nan
            if uniform_exact is not None:
                approx = metric_error(learned_distances(featurizer.online, env), uniform_exact)
            result.step_rows.append((step, *metrics, approx))

        if agent_mode and step % run.eval_interval == 0:
            ret = evaluate_greedy(featurizer, agent, eval_env, run.eval_episodes)
            ratio = greedy_value_ratio(featurizer, agent, eval_env)
            approx = math.nan
            if track_metric and featurizer.kind != "onehot":
                pi = Policy(agent.actor.probs(featurizer.online(state_observations(eval_env))))
                approx = metric_error(learned_distances(featurizer.online, eval_env),
                                      exact_metric(eval_env, pi))
            result.eval_rows.append((step, ret, ratio, approx))

        if checkpoint_dir is not None and run.checkpoint_interval and step % run.checkpoint_interval == 0:
            path = Path(checkpoint_dir) / f"step_{step:07d}.bin"
            save_sections(path, checkpoint_sections(learner, agent, featurizer.pair))
            result.checkpoints.append(path)
    return result


def area_under_curve(eval_rows) -> float:
    """Mean evaluation return over the evaluation points (equal spacing)."""
    if not eval_rows:
        return math.nan
    return float(np.mean([row[1] for row in eval_rows]))


def transfer(cfg: ExperimentConfig, frozen: EncoderPair, seed: int):
    """Fresh agents on the transfer environment: one on top of the frozen encoder,
    one learning its encoder from scratch, under the same seed and budget."""
    target_env = cfg.transfer_env or cfg.env
    frozen_run = train(cfg, seed, target_env, frozen=frozen, track_metric=False)
    scratch_cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, encoder="learned"))
    scratch_run = train(scratch_cfg, seed, target_env, track_metric=False)
    return frozen_run, scratch_run
