"""Acceptance criteria, one test per criterion.

Each test prints a ``[criterion N] PASS|FAIL ...`` line; the lines are also
collected and repeated in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import self_loop_mdp, uniform_mixing_mdp
from simsr import experiments as ex
from simsr.agent import ActorParams, CriticParams, actor_loss, critic_loss
from simsr.cli import main
from simsr.dynamics import DynamicsEnsemble, nll_loss
from simsr.encoder import Encoder, cos_distance, encode_backward
from simsr.mdp import Policy, policy_reward, policy_transition, random_mdp, random_policy
from simsr.metrics import OperatorKind, operator_step, solve_fixed_point, value_bound_check
from simsr.nn import central_difference, relative_error
from simsr.training import Batch, SimSRLearner, TargetVariant, TrainConfig, simsr_loss, simsr_target

pytestmark = pytest.mark.acceptance

RESULTS = []


def report(n, ok, detail, started):
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'} {detail} ({time.time() - started:.1f}s)"
    RESULTS.append(line)
    print(line)
    return ok


def random_case(rng, max_states, gamma=None):
    n = int(rng.integers(2, max_states + 1))
    seed = int(rng.integers(2**31))
    gamma = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    return random_mdp(n, int(rng.integers(1, 4)), gamma, seed=seed), seed


def test_criterion_01_exact_fixed_points():
    t = time.time()
    one = Policy(np.ones((2, 1)))
    U = solve_fixed_point(self_loop_mdp(0.5), one, OperatorKind.INDEPENDENT, tol=1e-10).distances
    V = solve_fixed_point(uniform_mixing_mdp(0.5), one, OperatorKind.INDEPENDENT, tol=1e-10).distances
    errs = [abs(U[0, 1] - 2.0), abs(U[1, 0] - 2.0), *np.abs(np.diag(U)),
            *np.abs(np.diag(V) - 0.5), abs(V[0, 1] - 1.5), abs(V[1, 0] - 1.5)]
    ok = max(errs) <= 1e-6 and time.time() - t < 1.0
    assert report(1, ok, f"max error {max(errs):.2e}", t)


def test_criterion_02_shared_fixed_point():
    t = time.time()
    rng = np.random.default_rng(2)
    worst_init, worst_linear = 0.0, 0.0
    for _ in range(50):
        mdp, seed = random_case(rng, 12)
        pi = random_policy(mdp.n_states, mdp.n_actions, seed)
        A = rng.uniform(0, 5, (mdp.n_states,) * 2)
        from_zero = solve_fixed_point(mdp, pi, tol=1e-9).distances
        from_rand = solve_fixed_point(mdp, pi, tol=1e-9, init=0.5 * (A + A.T)).distances
        # independent route: direct linear solve of the fixed-point equation
        r, P, n = policy_reward(mdp, pi), policy_transition(mdp, pi), mdp.n_states
        lin = np.linalg.solve(np.eye(n * n) - mdp.discount * np.kron(P, P), np.abs(r[:, None] - r).ravel()).reshape(n, n)
        worst_init = max(worst_init, np.max(np.abs(from_zero - from_rand)))
        worst_linear = max(worst_linear, np.max(np.abs(from_zero - lin)))
    ok = worst_init <= 1e-6 and worst_linear <= 1e-6 and time.time() - t < 30
    assert report(2, ok, f"init gap {worst_init:.1e}, linear-solve gap {worst_linear:.1e} over 50 MDPs", t)


def test_criterion_03_contraction():
    t = time.time()
    rng = np.random.default_rng(3)
    worst = {}
    for kind in OperatorKind:
        slack = -np.inf
        for _ in range(200):
            n = int(rng.integers(2, 9))
            gamma = float(rng.uniform(0.1, 0.99))
            seed = int(rng.integers(2**31))
            if kind is OperatorKind.DETERMINISTIC:
                mdp = random_mdp(n, 2, gamma, seed=seed, deterministic=True)
                pi = Policy.deterministic(rng.integers(2, size=n), 2)
            else:
                mdp, pi = random_mdp(n, 2, gamma, seed=seed), random_policy(n, 2, seed)
            U1, U2 = (0.5 * (A + A.T) for A in rng.uniform(0, 4, (2, n, n)))
            ratio = np.max(np.abs(operator_step(U1, mdp, pi, kind) - operator_step(U2, mdp, pi, kind))) / np.max(np.abs(U1 - U2))
            slack = max(slack, ratio - gamma)
        worst[kind.value] = slack
    ok = all(s <= 1e-9 for s in worst.values()) and time.time() - t < 30
    detail = ", ".join(f"{k} max(ratio-gamma) {v:.1e}" for k, v in worst.items())
    assert report(3, ok, detail, t)


def test_criterion_04_value_bound():
    t = time.time()
    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(100):
        mdp, seed = random_case(rng, 10)
        pi = random_policy(mdp.n_states, mdp.n_actions, seed + 1)
        U = solve_fixed_point(mdp, pi, tol=1e-9).distances
        violations += value_bound_check(mdp, pi, U, tol=1e-9) is not None
    ok = violations == 0 and time.time() - t < 60
    assert report(4, ok, f"{violations} violations over 100 MDPs", t)


def test_criterion_05_coupling_ordering():
    t = time.time()
    rng = np.random.default_rng(5)
    worst = -np.inf
    for _ in range(50):
        mdp, seed = random_case(rng, 10)
        pi = random_policy(mdp.n_states, mdp.n_actions, seed)
        was = solve_fixed_point(mdp, pi, OperatorKind.WASSERSTEIN, tol=1e-9).distances
        ind = solve_fixed_point(mdp, pi, OperatorKind.INDEPENDENT, tol=1e-9).distances
        worst = max(worst, np.max(was - ind))
    ok = worst <= 1e-7 and time.time() - t < 120
    assert report(5, ok, f"max(W - I) {worst:.1e} over 50 MDPs", t)


def _fd(f, params):
    return central_difference(f, params, eps=1e-5)


def gradient_errors(instances=20):
    errs = {k: [] for k in ("encoder", "dynamics_nll", "simsr_observation", "simsr_latent", "actor", "critic")}
    for i in range(instances):
        rng = np.random.default_rng(600 + i)
        enc = Encoder.init(6, 5, (7, 6), seed=i)
        obs, G = rng.normal(size=(4, 6)), rng.normal(size=(4, 5))
        z, cache = enc.forward(obs)
        errs["encoder"].append(relative_error(encode_backward(enc, cache, G), _fd(lambda: np.sum(G * enc.forward(obs)[0]), enc.params)))

        ens = DynamicsEnsemble.init(3, 2, k=2, hidden=(6,), seed=i)
        zl, a, tgt = rng.normal(size=(5, 3)), rng.integers(2, size=5), rng.normal(size=(5, 3))
        _, g = nll_loss(ens, zl, a, tgt)
        errs["dynamics_nll"].append(relative_error([x for h in g for x in h], _fd(lambda: nll_loss(ens, zl, a, tgt)[0], ens.params)))

        for variant, key in ((TargetVariant.OBSERVATION_SAMPLING, "simsr_observation"), (TargetVariant.LATENT_DYNAMICS, "simsr_latent")):
            cfg = TrainConfig(latent_dim=4, hidden_dim=6, dynamics_hidden_dim=6, ensemble_size=2,
                              target_variant=variant, loss_kind=("mse", "huber")[i % 2], huber_delta=0.3)
            learner = SimSRLearner(5, 3, cfg, i)
            batch = Batch(rng.normal(size=(6, 5)), rng.integers(3, size=6), rng.uniform(size=6), rng.normal(size=(6, 5)), np.zeros(6, bool))
            state = learner.rng.bit_generator.state
            _, grads, _, _ = learner.encoder_gradients(batch)
            learner.rng.bit_generator.state = state
            T = simsr_target(batch.reward, learner.pair, variant, cfg.gamma, batch.next_obs, batch.obs, batch.action, learner.ensemble, learner.rng)
            f = lambda: simsr_loss(learner.pair.online.forward(batch.obs)[0], T, cfg.loss_kind, cfg.huber_delta)[0]
            errs[key].append(relative_error(grads, _fd(f, learner.pair.online.params)))

        actor = ActorParams.init(3, 4, (6,), seed=i, alpha=0.2)
        critic = CriticParams.init(3, 4, (6,), seed=i + 1000)
        zs = rng.normal(size=(5, 3))
        _, g, _ = actor_loss(actor, critic, zs)
        errs["actor"].append(relative_error(g, _fd(lambda: actor_loss(actor, critic, zs)[0], actor.params)))

        act_, y = rng.integers(4, size=5), rng.normal(scale=2, size=5)
        _, (g1, g2), gz = critic_loss(critic, zs, act_, y, 0.7)
        f = lambda: critic_loss(critic, zs, act_, y, 0.7)[0]
        errs["critic"].append(max(relative_error(g1 + g2, _fd(f, critic.params)), relative_error([gz], _fd(f, [zs]))))
    return errs


def test_criterion_06_gradient_suites():
    t = time.time()
    errs = gradient_errors(20)
    worst = {k: max(v) for k, v in errs.items()}
    ok = all(len(v) >= 20 for v in errs.values()) and max(worst.values()) < 1e-4 and time.time() - t < 120
    assert report(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), t)


def test_criterion_07_unit_length():
    t = time.time()
    enc = Encoder.init(18, 50, seed=7)
    Z = enc(np.random.default_rng(7).uniform(-1, 1, size=(1000, 18)))
    norm_err = float(np.max(np.abs(np.linalg.norm(Z, axis=1) - 1)))
    self_dist = max(cos_distance(z, z) for z in Z)
    ok = norm_err <= 1e-6 and self_dist <= 1e-12
    assert report(7, ok, f"max |norm-1| {norm_err:.1e}, max self-distance {self_dist:.1e}", t)


def test_criterion_08_metric_learning():
    t = time.time()
    outs = [ex.metric_learning(ex.METRIC_LEARNING, s) for s in ex.SEEDS]
    good = [o.spearman_rho >= 0.9 and o.mean_abs_error <= 0.15 for o in outs]
    ok = sum(good) >= 4
    detail = f"{sum(good)}/5 seeds; rho {ex.summarize([o.spearman_rho for o in outs])}; MAE {ex.summarize([o.mean_abs_error for o in outs])}"
    assert report(8, ok, detail, t)


def test_criterion_09_robustness():
    t = time.time()
    outs = [ex.metric_learning(ex.ROBUSTNESS, s) for s in ex.SEEDS]
    good = [o.invariance_gap <= 0.1 and o.spearman_rho >= 0.9 for o in outs]
    gaps_ok = all(o.invariance_gap <= 0.1 for o in outs)
    ok = sum(good) >= 3 and gaps_ok
    detail = (f"{sum(good)}/5 seeds; gap {ex.summarize([o.invariance_gap for o in outs])}; "
              f"rho {ex.summarize([o.spearman_rho for o in outs])}")
    assert report(9, ok, detail, t)


def test_criterion_10_agent_learning():
    t = time.time()
    outs = [ex.agent_learning(ex.AGENT, s) for s in ex.SEEDS]
    good = [o.steps_to_threshold is not None and o.steps_to_threshold <= 30_000 for o in outs]
    ok = sum(good) >= 4
    detail = f"{sum(good)}/5 seeds reach 90% of optimal; steps {[o.steps_to_threshold for o in outs]}; final ratios {[round(o.final_value_ratio, 3) for o in outs]}"
    assert report(10, ok, detail, t)


def test_criterion_11_transfer():
    t = time.time()
    outs = [ex.transfer_learning(s) for s in ex.SEEDS]
    good = [o.advantage >= 0 for o in outs]
    ok = sum(good) >= 3 and time.time() - t < 1800
    for o in outs:
        print(f"  seed {o.seed} frozen {[round(r) for _, r in o.frozen_curve]}")
        print(f"  seed {o.seed} scratch {[round(r) for _, r in o.scratch_curve]}")
    strict = sum(o.advantage > 0 for o in outs)
    detail = (f"{sum(good)}/5 seeds frozen AUC >= scratch ({strict}/5 strictly greater); "
              f"advantages {[round(o.advantage, 2) for o in outs]}")
    assert report(11, ok, detail, t)


def _outputs(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_12_determinism(tmp_path):
    t = time.time()
    import json

    solve = tmp_path / "solve.json"
    solve.write_text(json.dumps({"mdp": {"random": {"n_states": 6, "n_actions": 3}}, "policy": {"random": 1},
                                 "solver": {"kind": "wasserstein"}}))
    run = tmp_path / "run.json"
    run.write_text(json.dumps({
        "train": {"gamma": 0.9, "batch_size": 32, "latent_dim": 8, "hidden_dim": 16, "ensemble_size": 2,
                  "dynamics_hidden_dim": 16, "target_variant": "latent_dynamics"},
        "agent": {"hidden": 16},
        "run": {"steps": 400, "initial_steps": 100, "eval_interval": 200, "eval_episodes": 1, "checkpoint_interval": 200},
        "transfer_env": {"goal": [0, 0]},
    }))
    outs = {}
    for rep in ("a", "b"):
        d = tmp_path / rep
        codes = [
            main(["solve-metric", "--config", str(solve), "--out", str(d / "solve"), "--seed", "3"]),
            main(["train", "--config", str(run), "--out", str(d / "train"), "--seed", "5"]),
        ]
        ckpt = d / "train" / "seed_5" / "checkpoints" / "step_0000400.bin"
        codes.append(main(["eval-metric-quality", "--config", str(run), "--out", str(d / "eval"), "--checkpoint", str(ckpt)]))
        codes.append(main(["transfer", "--config", str(run), "--out", str(d / "transfer"), "--checkpoint", str(ckpt), "--seed", "5"]))
        assert codes == [0, 0, 0, 0]
        outs[rep] = _outputs(d)
    csvs = [k for k in outs["a"] if k.suffix == ".csv"]
    same = outs["a"].keys() == outs["b"].keys() and all(outs["a"][k] == outs["b"][k] for k in outs["a"])
    ok = same and len(csvs) >= 8
    assert report(12, ok, f"{len(outs['a'])} output files ({len(csvs)} CSV) byte-identical across reruns", t)
