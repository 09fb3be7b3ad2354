"""Policy network, GAE, PPO updates, and checkpointing."""

import json

import numpy as np
import pytest
from scipy import stats

from asrrl.agent import (
    Adam,
    CheckpointError,
    PolicyNetwork,
    RolloutBatch,
    UpdateRejected,
    action_log_prob,
    gae,
    gaussian_log_prob,
    load_checkpoint,
    ppo_loss_and_grads,
    ppo_update,
    save_checkpoint,
    select_action,
    tanh_correction,
)
from asrrl.core import RLConfig, SSAction, StateLayout


def _policy(scenario="ss", encoder="segments", hidden=4, d_t=2, d_e=2, k=2,
            seed=0):
    layout = StateLayout(d_t=d_t, d_e=d_e)
    return PolicyNetwork(layout, scenario, k=k, hidden=hidden, encoder=encoder,
                         rng=np.random.default_rng(seed))


# -- GAE -------------------------------------------------------------------

def test_gae_hand_computed():
    adv, ret = gae([1.0, 1.0, 1.0], [0.0, 0.0, 0.0],
                   [False, False, True], gamma=0.5, gae_lambda=1.0)
    np.testing.assert_allclose(adv, [1.75, 1.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(ret, adv, atol=1e-12)


def test_gae_gamma_zero_is_td_residual():
    r = np.array([0.3, -0.2, 0.5])
    v = np.array([0.1, 0.4, -0.1])
    adv, _ = gae(r, v, [False, False, True], gamma=0.0, gae_lambda=0.95)
    np.testing.assert_allclose(adv, r - v, atol=1e-12)


def test_gae_zero_inputs():
    adv, ret = gae(np.zeros(5), np.zeros(5),
                   [False] * 4 + [True], 0.9, 0.95)
    assert not adv.any() and not ret.any()


def test_gae_does_not_leak_across_episodes():
    # two concatenated episodes must match two separate computations
    r = [1.0, 2.0, 3.0, 4.0]
    v = [0.5, 0.1, 0.2, 0.3]
    d = [False, True, False, True]
    adv, _ = gae(r, v, d, 0.9, 0.9)
    a1, _ = gae(r[:2], v[:2], d[:2], 0.9, 0.9)
    a2, _ = gae(r[2:], v[2:], d[2:], 0.9, 0.9)
    np.testing.assert_allclose(adv, np.concatenate([a1, a2]), atol=1e-12)


def test_gae_validates_inputs():
    with pytest.raises(ValueError):
        gae([1.0], [1.0, 2.0], [True], 0.9, 0.9)
    with pytest.raises(ValueError):
        gae([1.0], [0.0], [True], 1.5, 0.9)


# -- distributions ---------------------------------------------------------

def test_gaussian_log_prob_matches_scipy():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((5, 3))
    mean = rng.standard_normal((5, 3))
    log_std = np.array([-0.5, 0.0, 0.3])
    got = gaussian_log_prob(raw, mean, log_std)
    want = stats.norm.logpdf(raw, loc=mean, scale=np.exp(log_std)).sum(axis=1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_tanh_correction_matches_naive_formula():
    u = np.linspace(-3, 3, 13).reshape(1, -1)
    naive = np.log(1.0 - np.tanh(u) ** 2).sum(axis=1)
    np.testing.assert_allclose(tanh_correction(u), naive, rtol=1e-10)


def test_tanh_correction_stable_for_large_inputs():
    assert np.isfinite(tanh_correction(np.array([[50.0, -50.0]]))).all()


def test_select_action_mode_deterministic_and_bounded():
    policy = _policy("ss")
    state = np.arange(policy.state_dim, dtype=float)
    a1, lp1, v1, _ = select_action(policy, state, mode="mode")
    a2, lp2, v2, _ = select_action(policy, state, mode="mode")
    np.testing.assert_array_equal(a1.delta, a2.delta)
    assert lp1 == lp2 and v1 == v2
    assert np.max(np.abs(a1.delta)) <= 1.0


def test_select_action_log_prob_recomputed_independently():
    policy = _policy("ss")
    rng = np.random.default_rng(3)
    state = rng.standard_normal(policy.state_dim)
    action, lp, _, raw = select_action(policy, state, rng=rng)
    mean, log_std, _, _ = policy.forward(state)
    base = stats.norm.logpdf(raw, loc=mean[0], scale=np.exp(log_std)).sum()
    corr = np.log(1.0 - np.tanh(raw) ** 2).sum()
    assert abs(lp - (base - corr)) <= 1e-9
    np.testing.assert_allclose(action.delta, np.tanh(raw), atol=1e-15)


def test_select_action_fs_returns_logits():
    policy = _policy("fs", k=3)
    action, lp, _, raw = select_action(policy, np.zeros(policy.state_dim),
                                       rng=np.random.default_rng(0))
    assert action.logits.shape == (3,)
    np.testing.assert_array_equal(action.logits, raw)
    assert np.isfinite(lp)


def test_select_action_sampling_needs_rng():
    policy = _policy("ss")
    with pytest.raises(ValueError):
        select_action(policy, np.zeros(policy.state_dim))


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_forward_raises_on_nonfinite_params():
    policy = _policy("ss")
    policy.params["mean.W"][:] = np.inf
    with pytest.raises(FloatingPointError, match="parameter norms"):
        policy.forward(np.zeros(policy.state_dim))


# -- PPO -------------------------------------------------------------------

def _batch(policy, n=32, seed=0):
    rng = np.random.default_rng(seed)
    states = rng.standard_normal((n, policy.state_dim))
    mean, log_std, value, _ = policy.forward(states)
    raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    lp = action_log_prob(policy, raw, mean, log_std)
    rewards = rng.standard_normal(n) * 0.1
    dones = np.zeros(n, dtype=bool)
    dones[2::3] = True
    dones[-1] = True
    return RolloutBatch(
        states=states, raw_actions=raw, log_probs=lp, rewards=rewards,
        values=value, dones=dones,
    ).compute_advantages(0.3, 0.95)


@pytest.mark.parametrize("scenario", ["ss", "fs"])
@pytest.mark.parametrize("encoder", ["segments", "mlp"])
def test_gradients_match_finite_differences(scenario, encoder):
    policy = _policy(scenario, encoder=encoder)
    assert policy.parameter_count() <= 200
    batch = _batch(policy)

    def loss():
        val, _, _ = ppo_loss_and_grads(policy, batch, clip_epsilon=0.2,
                                       value_coef=0.5, entropy_coef=0.01)
        return val

    _, grads, _ = ppo_loss_and_grads(policy, batch, clip_epsilon=0.2,
                                     value_coef=0.5, entropy_coef=0.01)
    h = 1e-6
    worst = 0.0
    for name, arr in policy.params.items():
        flat = arr.ravel()
        g = grads[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            dn = loss()
            flat[i] = keep
            fd = (up - dn) / (2 * h)
            denom = max(abs(fd), abs(g[i]), 1e-8)
            worst = max(worst, abs(fd - g[i]) / denom)
    assert worst <= 1e-4, f"max relative gradient error {worst:.3e}"


def test_ppo_update_moves_toward_advantage():
    policy = _policy("ss", hidden=8)
    batch = _batch(policy, n=64)
    before = [ppo_loss_and_grads(policy, batch, clip_epsilon=0.2,
                                 value_coef=0.5, entropy_coef=0.0)[0]]
    report = ppo_update(policy, batch, update_epochs=10, learning_rate=1e-2,
                        entropy_coef=0.0)
    after = ppo_loss_and_grads(policy, batch, clip_epsilon=0.2,
                               value_coef=0.5, entropy_coef=0.0)[0]
    assert after < before[0]
    assert {"loss", "policy_loss", "value_loss", "entropy",
            "approx_kl", "max_ratio"} <= set(report)


def test_ppo_rejects_exploded_ratio():
    policy = _policy("ss")
    batch = _batch(policy)
    batch.log_probs = batch.log_probs - 50.0  # fake stale behavior policy
    with pytest.raises(UpdateRejected):
        ppo_loss_and_grads(policy, batch, clip_epsilon=0.2,
                           value_coef=0.5, entropy_coef=0.01)


def test_log_std_stays_clamped_after_updates():
    policy = _policy("ss")
    policy.params["log_std"][:] = 1.9
    batch = _batch(policy)
    ppo_update(policy, batch, update_epochs=3, learning_rate=10.0)
    assert np.all(policy.params["log_std"] <= 2.0)
    assert np.all(policy.params["log_std"] >= -5.0)


def test_advantage_normalization():
    policy = _policy("ss")
    batch = _batch(policy, n=64)
    assert abs(batch.advantages.mean()) <= 1e-9
    assert abs(batch.advantages.std() - 1.0) <= 1e-9


def test_adam_first_step_size_is_lr():
    params = {"x": np.array([1.0])}
    opt = Adam(params, lr=0.05)
    opt.step(params, {"x": np.array([3.7])})
    # bias-corrected first step moves by ~lr regardless of gradient scale
    assert params["x"][0] == pytest.approx(1.0 - 0.05, abs=1e-6)


# -- checkpoints -----------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    policy = _policy("ss", hidden=8)
    rng = np.random.default_rng(42)
    rng.standard_normal(17)  # advance the stream to a nontrivial state
    path = tmp_path / "ck.json"
    save_checkpoint(policy, path, config=RLConfig(d_e=2, d_t=2, hidden=8),
                    step=123, rng=rng)
    loaded, cfg, step, rng2 = load_checkpoint(path)
    assert step == 123 and cfg.hidden == 8
    for name, arr in policy.params.items():
        np.testing.assert_array_equal(loaded.params[name], arr)
    np.testing.assert_array_equal(rng2.standard_normal(8),
                                  rng.standard_normal(8))
    states = np.random.default_rng(1).standard_normal((100, policy.state_dim))
    for s in states:
        a1, _, _, _ = select_action(policy, s, mode="mode")
        a2, _, _, _ = select_action(loaded, s, mode="mode")
        np.testing.assert_array_equal(a1.delta, a2.delta)


def test_checkpoint_truncated_file_reports_offset(tmp_path):
    policy = _policy("ss")
    path = tmp_path / "ck.json"
    save_checkpoint(policy, path, config=RLConfig(d_e=2, d_t=2))
    blob = path.read_text()
    path.write_text(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="offset"):
        load_checkpoint(path)


def test_checkpoint_version_gate(tmp_path):
    policy = _policy("ss")
    path = tmp_path / "ck.json"
    save_checkpoint(policy, path, config=RLConfig(d_e=2, d_t=2))
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_names_parameter(tmp_path):
    policy = _policy("ss")
    path = tmp_path / "ck.json"
    save_checkpoint(policy, path, config=RLConfig(d_e=2, d_t=2, hidden=4, k=2))
    doc = json.loads(path.read_text())
    doc["params"]["mean.b"]["data"].append(0.0)
    doc["params"]["mean.b"]["shape"] = [3]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="mean.b"):
        load_checkpoint(path)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.json")
