import numpy as np
import pytest

from simsr.dynamics import LOGVAR_MAX, LOGVAR_MIN, DynamicsEnsemble, nll_loss, sample_next
from simsr.nn import MLP, Adam, central_difference, relative_error


def constant_ensemble(means, logvars, n_actions=2):
    """Heads whose output ignores the input: zero weights, bias = (mean, logvar)."""
    d = len(means[0])
    heads = [MLP([np.zeros((d + n_actions, 2 * d)), np.concatenate([m, lv]).astype(float)]) for m, lv in zip(means, logvars)]
    return DynamicsEnsemble(heads, d, n_actions)


def reference_nll(ens, latent, action, target):
    """Per-element loop over heads, rows and dimensions."""
    total = 0.0
    for k in range(ens.k):
        mu, lv, _ = ens.head_forward(k, latent, action)
        acc = 0.0
        for i in range(mu.shape[0]):
            for j in range(mu.shape[1]):
                acc += 0.5 * lv[i, j] + 0.5 * (target[i, j] - mu[i, j]) ** 2 / np.exp(lv[i, j])
        total += acc / mu.size
    return total / ens.k


def test_nll_exact_prediction_unit_variance_is_zero():
    ens = constant_ensemble([np.array([0.3, -0.2])], [np.zeros(2)])
    loss, _ = nll_loss(ens, np.zeros((3, 2)), np.array([0, 1, 0]), np.tile([0.3, -0.2], (3, 1)))
    assert loss == pytest.approx(0.0)


def test_nll_unit_error_unit_variance_is_half():
    ens = constant_ensemble([np.zeros(2)], [np.zeros(2)])
    loss, _ = nll_loss(ens, np.zeros((2, 2)), np.array([0, 1]), np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert loss == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(5))
def test_nll_matches_loop(seed):
    rng = np.random.default_rng(seed)
    ens = DynamicsEnsemble.init(3, 2, k=3, hidden=(5,), seed=seed)
    z, a, t = rng.normal(size=(4, 3)), rng.integers(2, size=4), rng.normal(size=(4, 3))
    assert nll_loss(ens, z, a, t)[0] == pytest.approx(reference_nll(ens, z, a, t), rel=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_nll_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ens = DynamicsEnsemble.init(3, 2, k=2, hidden=(6,), seed=seed)
    z, a, t = rng.normal(size=(5, 3)), rng.integers(2, size=5), rng.normal(size=(5, 3))
    _, grads = nll_loss(ens, z, a, t)
    flat = [g for head in grads for g in head]
    numeric = central_difference(lambda: nll_loss(ens, z, a, t)[0], ens.params, eps=1e-5)
    assert relative_error(flat, numeric) < 1e-4


def test_clamped_logvar_gets_no_gradient():
    ens = constant_ensemble([np.zeros(1)], [np.array([50.0])], n_actions=1)
    _, lv, _ = ens.head_forward(0, np.zeros((1, 1)), np.array([0]))
    assert lv[0, 0] == LOGVAR_MAX
    _, grads = nll_loss(ens, np.zeros((1, 1)), np.array([0]), np.ones((1, 1)))
    assert grads[0][1][1] == 0.0
    assert LOGVAR_MIN < 0 < LOGVAR_MAX


def test_nll_rejects_non_finite():
    ens = DynamicsEnsemble.init(2, 2, k=1, seed=0)
    with pytest.raises(ValueError):
        nll_loss(ens, np.zeros((1, 2)), np.array([0]), np.array([[np.nan, 0.0]]))


def test_one_hot_actions_match_integer_actions():
    ens = DynamicsEnsemble.init(2, 3, k=1, seed=0)
    z = np.random.default_rng(0).normal(size=(2, 2))
    a = ens.head_forward(0, z, np.array([2, 0]))[0]
    b = ens.head_forward(0, z, np.eye(3)[[2, 0]])[0]
    assert np.array_equal(a, b)


def test_head_choice_is_uniform():
    ens = constant_ensemble([np.full(1, float(k)) for k in range(5)], [np.full(1, LOGVAR_MIN)] * 5, n_actions=1)
    rng = np.random.default_rng(0)
    heads = np.array([sample_next(ens, np.zeros((1, 1)), np.array([0]), rng)[1] for _ in range(100_000)])
    freqs = np.bincount(heads, minlength=5) / heads.size
    assert np.all(np.abs(freqs - 0.2) < 0.01)


def test_single_head_always_chosen():
    ens = DynamicsEnsemble.init(2, 2, k=1, seed=0)
    rng = np.random.default_rng(0)
    assert {sample_next(ens, np.zeros(2), 0, rng)[1] for _ in range(20)} == {0}


def test_near_deterministic_sample_is_the_mean():
    ens = constant_ensemble([np.array([0.5, -0.5])], [np.full(2, LOGVAR_MIN)])
    sample, head = sample_next(ens, np.zeros(2), 1, np.random.default_rng(0))
    assert head == 0
    assert sample.shape == (2,)
    assert np.allclose(sample, [0.5, -0.5], atol=3 * np.sqrt(1e-6))


def test_sample_spread_matches_variance():
    ens = constant_ensemble([np.zeros(1)], [np.array([np.log(4.0)])], n_actions=1)
    s, _ = sample_next(ens, np.zeros((20_000, 1)), np.zeros(20_000, dtype=int), np.random.default_rng(1))
    assert s.std() == pytest.approx(2.0, rel=0.03)


def linear_system(n, rng):
    A = np.array([[0.8, 0.1], [-0.2, 0.9]])
    shift = np.array([[0.5, 0.0], [0.0, -0.5]])
    z = rng.uniform(-1, 1, size=(n, 2))
    a = rng.integers(2, size=n)
    return z, a, z @ A.T + shift[a]


def fit(ens, z, a, t, steps=1500, lr=3e-3):
    opt = Adam(lr)
    for _ in range(steps):
        _, grads = nll_loss(ens, z, a, t)
        opt.step(ens.params, [g for head in grads for g in head])


def test_training_fits_held_out_transitions():
    rng = np.random.default_rng(0)
    ens = DynamicsEnsemble.init(2, 2, k=3, hidden=(32,), seed=0)
    fit(ens, *linear_system(256, rng))
    z, a, t = linear_system(200, rng)
    means, _ = ens.predict(z, a)
    assert np.mean(np.linalg.norm(means.mean(axis=0) - t, axis=1)) < 0.1
    flat = [np.concatenate([p.ravel() for p in h.params]) for h in ens.heads]
    assert max(np.linalg.norm(a - b) for a in flat for b in flat) > 0


def test_disagreement_grows_off_distribution():
    rng = np.random.default_rng(1)
    ens = DynamicsEnsemble.init(2, 2, k=5, hidden=(32,), seed=1)
    fit(ens, *linear_system(256, rng))
    z_in, a_in, _ = linear_system(100, rng)
    z_out = z_in + 6.0
    assert ens.predictive_variance(z_out, a_in).mean() > ens.predictive_variance(z_in, a_in).mean()


def test_input_validation():
    ens = DynamicsEnsemble.init(2, 2, k=1, seed=0)
    with pytest.raises(ValueError):
        ens.head_forward(0, np.zeros((2, 3)), np.array([0, 1]))
    with pytest.raises(ValueError):
        ens.head_forward(0, np.zeros((2, 2)), np.array([0]))
