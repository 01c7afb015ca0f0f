"""PPO math: GAE, gaussian densities, loss gradients, optimizer, learning."""

import math

import numpy as np
import pytest
from scipy import stats as sps

from crib_lab import nets as N
from crib_lab import ppo as P


# -- GAE ---------------------------------------------------------------------


def gae_oracle(rewards, values, dones, last_value, gamma, lam):
    """Direct forward sum A_t = sum_l (gamma*lam)^l * delta_{t+l}, truncated
    at episode ends."""
    T = len(rewards)
    v_next = np.append(values[1:], last_value)
    deltas = rewards + gamma * v_next * (1.0 - dones) - values
    adv = np.zeros(T)
    for t in range(T):
        coef = 1.0
        for l in range(t, T):
            adv[t] += coef * deltas[l]
            if dones[l]:
                break
            coef *= gamma * lam
    return adv


def test_gae_matches_forward_sum(rng):
    T = 50
    rewards = rng.normal(0, 1, T)
    values = rng.normal(0, 1, T)
    dones = rng.random(T) < 0.1
    adv, ret = P.compute_gae(rewards, values, dones, last_value=0.37,
                             gamma=0.99, lam=0.95)
    want = gae_oracle(rewards, values, dones, 0.37, 0.99, 0.95)
    np.testing.assert_allclose(adv, want, atol=1e-10)
    np.testing.assert_allclose(ret, want + values, atol=1e-12)


def test_gae_hand_example():
    # two steps, no terminal, bootstrap value 2.0:
    #   delta1 = 1 + 0.9*2.0 - 0.2 = 2.6
    #   delta0 = 0 + 0.9*0.2 - 1.0 = -0.82; A0 = -0.82 + (0.9*0.8)*2.6
    adv, _ = P.compute_gae(np.array([0.0, 1.0]), np.array([1.0, 0.2]),
                           np.array([False, False]), last_value=2.0,
                           gamma=0.9, lam=0.8)
    assert adv[1] == pytest.approx(2.6)
    assert adv[0] == pytest.approx(-0.82 + 0.72 * 2.6)


def test_gae_terminal_cuts_bootstrap():
    adv, _ = P.compute_gae(np.array([1.0]), np.array([0.4]), np.array([True]),
                           last_value=100.0, gamma=0.99, lam=0.95)
    assert adv[0] == pytest.approx(1.0 - 0.4)


# -- gaussian densities ---------------------------------------------------------


def test_logp_matches_scipy(rng):
    mu = rng.normal(0, 1, (6, 3))
    sigma = rng.uniform(0.3, 2.0, (6, 3))
    a = rng.normal(0, 1, (6, 3))
    mine = P.gaussian_logp(a, mu, sigma)
    want = sps.norm.logpdf(a, loc=mu, scale=sigma).sum(axis=1)
    np.testing.assert_allclose(mine, want, atol=1e-12)


def test_entropy_matches_scipy(rng):
    sigma = rng.uniform(0.2, 3.0, (4, 5))
    mine = P.gaussian_entropy(sigma)
    want = sps.norm.entropy(scale=sigma).sum(axis=1)
    np.testing.assert_allclose(mine, want, atol=1e-12)


def test_sampling_moments():
    rng = np.random.default_rng(0)
    mu = np.array([[0.5, -1.0]])
    sigma = np.array([[0.3, 1.5]])
    draws = np.stack([P.sample_action(mu, sigma, rng)[0]
                      for _ in range(20000)])
    np.testing.assert_allclose(draws.mean(axis=0), mu[0], atol=0.03)
    np.testing.assert_allclose(draws.std(axis=0), sigma[0], atol=0.03)


# -- loss and its gradients -------------------------------------------------------


def make_batch(rng, B=8, D=3):
    mu = rng.normal(0, 0.5, (B, D))
    sigma = rng.uniform(0.5, 1.5, (B, D))
    value = rng.normal(0, 1, B)
    actions = rng.normal(0, 1, (B, D))
    logp_old = P.gaussian_logp(actions, mu, sigma) + rng.normal(0, 0.1, B)
    advantages = rng.normal(0, 1, B)
    returns = rng.normal(0, 1, B)
    return mu, sigma, value, actions, logp_old, advantages, returns


def test_loss_grads_match_finite_differences(rng):
    cfg = P.PpoConfig(clip=0.2, value_coef=0.5, entropy_coef=0.01)
    mu, sigma, value, actions, logp_old, adv, ret = make_batch(rng)
    loss, dmu, dsigma, dvalue, _ = P.ppo_loss_and_grads(
        mu, sigma, value, actions, logp_old, adv, ret, cfg)
    h = 1e-6

    def loss_at(m, s, v):
        return P.ppo_loss_and_grads(m, s, v, actions, logp_old, adv, ret, cfg)[0]

    for arr, grad in ((mu, dmu), (sigma, dsigma)):
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + h
            hi = loss_at(mu, sigma, value)
            arr[i] = orig - h
            lo = loss_at(mu, sigma, value)
            arr[i] = orig
            num[i] = (hi - lo) / (2 * h)
        np.testing.assert_allclose(grad, num, atol=5e-8)
    num_v = np.zeros_like(value)
    for i in range(len(value)):
        orig = value[i]
        value[i] = orig + h
        hi = loss_at(mu, sigma, value)
        value[i] = orig - h
        lo = loss_at(mu, sigma, value)
        value[i] = orig
        num_v[i] = (hi - lo) / (2 * h)
    np.testing.assert_allclose(dvalue, num_v, atol=5e-8)


def test_fresh_policy_has_unit_ratio(rng):
    cfg = P.PpoConfig()
    mu, sigma, value, actions, _, adv, ret = make_batch(rng)
    logp_old = P.gaussian_logp(actions, mu, sigma)
    _, _, _, _, stats = P.ppo_loss_and_grads(mu, sigma, value, actions,
                                             logp_old, adv, ret, cfg)
    assert stats.clip_fraction == 0.0
    assert stats.approx_kl == pytest.approx(0.0, abs=1e-12)


def test_zero_advantage_silences_policy_gradient(rng):
    cfg = P.PpoConfig(entropy_coef=0.0)
    mu, sigma, value, actions, logp_old, _, ret = make_batch(rng)
    _, dmu, dsigma, dvalue, _ = P.ppo_loss_and_grads(
        mu, sigma, value, actions, logp_old, np.zeros(len(value)), ret, cfg)
    np.testing.assert_array_equal(dmu, 0.0)
    np.testing.assert_array_equal(dsigma, 0.0)
    assert np.any(dvalue != 0.0)


def test_clipped_samples_contribute_no_policy_gradient(rng):
    cfg = P.PpoConfig(clip=0.2, entropy_coef=0.0, value_coef=0.0)
    mu, sigma, value, actions, _, _, ret = make_batch(rng, B=4)
    # force every ratio far above 1+clip with positive advantage
    logp_old = P.gaussian_logp(actions, mu, sigma) - 2.0
    adv = np.ones(4)
    _, dmu, dsigma, dvalue, stats = P.ppo_loss_and_grads(
        mu, sigma, value, actions, logp_old, adv, ret, cfg)
    np.testing.assert_array_equal(dmu, 0.0)
    np.testing.assert_array_equal(dsigma, 0.0)
    assert stats.clip_fraction == 1.0


# -- optimizer ---------------------------------------------------------------------


class FakeParam:
    def __init__(self, value):
        self.value = value
        self.grad = np.zeros_like(value)


def test_adam_matches_reference_update():
    p = FakeParam(np.array([1.0, -2.0]))
    params = {"w": p}
    opt = P.Adam(params, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    m = np.zeros(2)
    v = np.zeros(2)
    x_ref = p.value.copy()
    rng = np.random.default_rng(4)
    for t in range(1, 6):
        g = rng.normal(0, 1, 2)
        p.grad = g.copy()
        opt.step(params)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x_ref -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.value, x_ref, atol=1e-12)


def test_adam_minimizes_quadratic():
    p = FakeParam(np.array([5.0]))
    params = {"x": p}
    opt = P.Adam(params, lr=0.05)
    for _ in range(2000):
        p.grad = 2.0 * p.value
        opt.step(params)
    assert abs(p.value[0]) < 1e-3


def test_adam_state_roundtrip():
    p = FakeParam(np.array([1.0, 2.0, 3.0]))
    params = {"w": p}
    opt = P.Adam(params, lr=0.01)
    rng = np.random.default_rng(1)
    for _ in range(7):
        p.grad = rng.normal(0, 1, 3)
        opt.step(params)
    saved = {k: v.copy() for k, v in opt.state_arrays().items()}
    value_saved = p.value.copy()

    fresh = P.Adam({"w": FakeParam(np.zeros(3))}, lr=0.01)
    fresh.load_state(saved)
    g = rng.normal(0, 1, 3)
    p.grad = g.copy()
    opt.step(params)
    q = FakeParam(value_saved)
    q.grad = g.copy()
    fresh.step({"w": q})
    np.testing.assert_allclose(q.value, p.value, atol=1e-15)


def test_grad_norm_clip():
    p = FakeParam(np.zeros(4))
    p.grad = np.full(4, 3.0)       # norm 6
    raw = P.clip_grad_norm({"w": p}, max_norm=0.5)
    assert raw == pytest.approx(6.0)
    assert np.linalg.norm(p.grad) == pytest.approx(0.5)
    p.grad = np.full(4, 0.1)       # norm 0.2, untouched
    P.clip_grad_norm({"w": p}, max_norm=0.5)
    np.testing.assert_allclose(p.grad, 0.1)


# -- end-to-end learning sanity ------------------------------------------------------


def test_trainer_moves_policy_toward_rewarded_action():
    """A one-state bandit: actions near 0.6 get high advantage. After a few
    updates the policy mean must move toward 0.6 on every dimension."""
    net = N.TouchPolicyNet(touch_dim=2, proprio_dim=2, action_dim=2,
                           touch_hidden=(8,), proprio_hidden=(8,),
                           fusion_dim=8, trunk_hidden=(8,), seed=0,
                           dtype=np.float64)
    cfg = P.PpoConfig(learning_rate=3e-3, epochs=4, minibatch_size=64,
                      entropy_coef=0.001)
    trainer = P.PpoTrainer(net, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    obs = (np.ones((256, 2)), np.ones((256, 2)))
    target = 0.6

    def batch():
        mu, sigma, _ = net.forward(*obs)
        actions = P.sample_action(mu, sigma, rng)
        logp = P.gaussian_logp(actions, mu, sigma)
        reward = -np.sum((actions - target) ** 2, axis=1)
        adv = reward - reward.mean()
        returns = reward
        return obs, actions, logp, adv, returns

    mu0 = net.forward(np.ones((1, 2)), np.ones((1, 2)))[0]
    for _ in range(40):
        trainer.update(*batch())
    mu1 = net.forward(np.ones((1, 2)), np.ones((1, 2)))[0]
    assert np.all(np.abs(mu1 - target) < np.abs(mu0 - target))
    assert np.all(np.abs(mu1 - target) < 0.2)


def test_rollout_buffer_lifecycle():
    buf = P.RolloutBuffer(3, obs_shapes=[(4,), (2,)], action_dim=2)
    assert not buf.full
    for t in range(3):
        buf.add([np.full(4, t), np.full(2, t)], np.zeros(2), -1.0, float(t),
                t == 2, 0.5)
    assert buf.full
    with pytest.raises(RuntimeError):
        buf.add([np.zeros(4), np.zeros(2)], np.zeros(2), 0.0, 0.0, False, 0.0)
    np.testing.assert_array_equal(buf.rewards, [0.0, 1.0, 2.0])
    assert buf.dones[2] and not buf.dones[0]
    buf.reset()
    assert buf.pos == 0
