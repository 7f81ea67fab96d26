import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from optomech_rl.control import StatePrepEnv, vectorize_state
from optomech_rl.hilbert import SystemConfig
from optomech_rl.rl import (
    CheckpointError,
    DDPGAgent,
    DDPGConfig,
    HermitianCodec,
    Mlp,
    ReplayBuffer,
    actor_forward,
    critic_action_gradient,
    critic_forward,
    load_actor,
    make_actor,
    make_critic,
    noise_sigma,
    read_checkpoint,
    save_checkpoint,
    select_action,
    soft_update,
    train,
    update_networks,
)
from optomech_rl.targets import fock


def random_hermitian_obs(d, rng):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return vectorize_state(g + g.conj().T)


def zero_net(net):
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def tiny_env(S=3):
    cfg = SystemConfig.single(0.839, kappa=0.002, gamma_m=0.0004, nc=2, nm=3)
    return StatePrepEnv(cfg, fock(2), float(S), S)


def fd_gradient(net, obs, action, h=1e-6):
    out = np.zeros_like(action)
    for i in range(action.size):
        ap, am = action.copy(), action.copy()
        ap[i] += h
        am[i] -= h
        out[i] = (critic_forward(net, obs, ap) - critic_forward(net, obs, am)) / (2 * h)
    return out


def test_actor_examples():
    torch.manual_seed(0)
    actor = make_actor(8, 2, 0.2, (16, 16))
    obs = np.random.default_rng(0).normal(size=8) * 100
    out = actor_forward(actor, obs)
    assert out.shape == (2,) and np.all(np.abs(out) <= 0.2)
    np.testing.assert_array_equal(actor_forward(actor, obs), out)
    torch.manual_seed(0)
    np.testing.assert_array_equal(actor_forward(make_actor(8, 2, 0.2, (16, 16)), obs), out)
    assert np.all(actor_forward(zero_net(actor), obs) == 0.0)
    with pytest.raises(ValueError):
        actor_forward(actor, np.zeros(7))
    assert actor.activations == ["relu", "relu", "tanh"]


def test_critic_examples():
    critic = make_critic(8, 2, (16, 16))
    rng = np.random.default_rng(1)
    assert np.isfinite(critic_forward(critic, rng.normal(size=8), rng.uniform(-0.2, 0.2, 2)))
    assert critic_forward(zero_net(critic), np.ones(8), np.ones(2)) == 0.0
    with pytest.raises(ValueError):
        critic_forward(critic, np.ones(8), np.ones(3))
    with pytest.raises(ValueError):
        Mlp([4])


def test_critic_action_gradient_matches_finite_differences():
    torch.manual_seed(3)
    critic = make_critic(18, 3, (32, 32)).double()
    rng = np.random.default_rng(3)
    for _ in range(5):
        obs = rng.normal(size=18)
        action = rng.uniform(-0.2, 0.2, 3)
        g = critic_action_gradient(critic, obs, action)
        fd = fd_gradient(critic, obs, action)
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_soft_update_convex(tau, seed):
    torch.manual_seed(seed)
    a, b = make_critic(4, 1, (8,)), make_critic(4, 1, (8,))
    before = [p.detach().clone() for p in b.parameters()]
    soft_update(b, a, tau)
    for pa, pb, p0 in zip(a.parameters(), b.parameters(), before):
        lo = torch.minimum(pa, p0) - 1e-7
        hi = torch.maximum(pa, p0) + 1e-7
        assert torch.all(pb >= lo) and torch.all(pb <= hi)


def test_soft_update_extremes():
    torch.manual_seed(0)
    a, b = make_critic(4, 1, (8,)), make_critic(4, 1, (8,))
    saved = [p.detach().clone() for p in b.parameters()]
    soft_update(b, a, 0.0)
    assert all(torch.equal(p, q) for p, q in zip(b.parameters(), saved))
    soft_update(b, a, 1.0)
    assert all(torch.equal(p, q) for p, q in zip(b.parameters(), a.parameters()))


def make_batch(rng, n, obs_size, n_actions):
    d = int(np.sqrt(obs_size // 2))
    obs = np.stack([random_hermitian_obs(d, rng) for _ in range(n)])
    nxt = np.stack([random_hermitian_obs(d, rng) for _ in range(n)])
    return (obs, rng.uniform(-0.2, 0.2, (n, n_actions)), rng.normal(size=n), nxt, np.zeros(n))


def test_update_tau_and_discount():
    hyper = DDPGConfig(hidden=(16, 16), batch=8, capacity=8)
    agent = DDPGAgent(8, 2, 0.2, hyper)
    batch = make_batch(np.random.default_rng(0), 8, 8, 2)
    agent.update(batch, tau=1.0)
    for net, tgt in ((agent.actor, agent.target_actor), (agent.critic, agent.target_critic)):
        assert all(torch.equal(p, q) for p, q in zip(net.parameters(), tgt.parameters()))
    saved = [p.detach().clone() for p in agent.target_critic.parameters()]
    agent.update(batch, tau=0.0)
    assert all(torch.equal(p, q) for p, q in zip(agent.target_critic.parameters(), saved))


def test_zero_discount_regresses_to_rewards():
    torch.manual_seed(1)
    actor, critic = make_actor(8, 2, 0.2, (8,)), make_critic(8, 2, (8,))
    t_actor, t_critic = make_actor(8, 2, 0.2, (8,)), make_critic(8, 2, (8,))
    batch = make_batch(np.random.default_rng(1), 16, 8, 2)
    q = critic(torch.cat([torch.as_tensor(batch[0], dtype=torch.float32),
                          torch.as_tensor(batch[1], dtype=torch.float32)], 1)).detach().numpy().ravel()
    expected = np.mean((q - batch[2]) ** 2)
    losses = update_networks(actor, critic, t_actor, t_critic, batch, 0.1, 0.0,
                             torch.optim.Adam(actor.parameters()), torch.optim.Adam(critic.parameters()))
    assert losses.critic == pytest.approx(expected, rel=1e-5)


def test_hermitian_codec_round_trip():
    rng = np.random.default_rng(0)
    codec = HermitianCodec(4)
    obs = random_hermitian_obs(4, rng)
    assert codec.encode(obs).size == 16
    np.testing.assert_allclose(codec.decode(codec.encode(obs).astype(np.float32)), obs, rtol=1e-6)


def test_replay_fifo_and_capacity():
    buf = ReplayBuffer(3, 8, 1)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        buf.sample(1, rng)
    for k in range(5):
        obs = np.zeros(8)
        obs[0] = k
        buf.add(obs, [k / 10], float(k), obs, done=(k == 4))
        assert len(buf) <= 3
    assert len(buf) == 3 and buf.oldest_index() == 2
    assert [buf.get(i).reward for i in range(3)] == [2.0, 3.0, 4.0]
    assert buf.get(2).done and not buf.get(0).done
    o, a, r, n, d = buf.sample(2, rng)
    assert o.shape == (2, 8) and a.shape == (2, 1)
    with pytest.raises(IndexError):
        buf.get(3)
    with pytest.raises(ValueError):
        ReplayBuffer(3, 7, 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 20))
def test_replay_never_exceeds_capacity(cap, n):
    buf = ReplayBuffer(cap, 2, 1)
    for k in range(n):
        buf.add(np.array([k, 0.0]), [0.0], float(k), np.zeros(2))
    assert len(buf) == min(cap, n)
    assert [buf.get(i).reward for i in range(len(buf))] == [float(k) for k in range(max(0, n - cap), n)]


def test_select_action_rules():
    rng = np.random.default_rng(0)
    actor = zero_net(make_actor(8, 2, 0.2, (8,)))
    obs = np.zeros(8)
    np.testing.assert_array_equal(select_action(actor, obs, 0.0, 5, 0, 0.2, rng), [0.0, 0.0])
    warm = np.array([select_action(actor, obs, 0.0, 0, 3, 0.2, rng) for _ in range(200)])
    assert np.all(np.abs(warm) <= 0.2) and warm.std() > 0.05
    noisy = np.array([select_action(actor, obs, 50.0, 5, 0, 0.2, rng) for _ in range(50)])
    assert np.all(np.abs(noisy) <= 0.2)
    assert noise_sigma(DDPGConfig(), 0.2, 0) == pytest.approx(0.04)
    assert noise_sigma(DDPGConfig(), 0.2, 10) == pytest.approx(0.04 * 0.999 ** 10)


def test_config_validation():
    with pytest.raises(ValueError):
        DDPGConfig(tau=1.5)
    with pytest.raises(ValueError):
        DDPGConfig(batch=10, capacity=5)


def test_train_single_random_epoch():
    env = tiny_env()
    report = train(env, DDPGConfig(epochs=1, warmup=1, hidden=(8,), batch=2, capacity=10))
    assert len(report.epochs) == 1 and report.best_epoch == 0
    assert report.best_amplitudes.shape == (3, 2)
    assert np.all(np.abs(report.best_amplitudes) <= env.omega_max)


def test_train_best_is_running_max_and_deterministic():
    hyper = DDPGConfig(epochs=4, warmup=1, hidden=(8,), batch=2, capacity=20, noise=0.0, seed=5)
    a = train(tiny_env(), hyper)
    b = train(tiny_env(), hyper)
    assert a.epochs == b.epochs
    best = a.best_curve
    assert np.all(np.diff(best) >= 0)
    np.testing.assert_array_equal(best, np.maximum.accumulate(a.fidelities))


def test_train_stops_on_callback():
    hyper = DDPGConfig(epochs=5, warmup=5, hidden=(8,), batch=2, capacity=20)
    report = train(tiny_env(), hyper, on_epoch=lambda rep: len(rep.epochs) == 2)
    assert len(report.epochs) == 2


def test_checkpoint_round_trip(tmp_path):
    env = tiny_env()
    hyper = DDPGConfig(epochs=2, warmup=1, hidden=(8, 8), batch=2, capacity=20, seed=7, checkpoint_every=1)
    report = train(env, hyper, checkpoint_dir=tmp_path)
    assert len(report.checkpoints) == 2
    header, tensors = read_checkpoint(report.checkpoints[-1])
    assert header["D"] == 6 and header["L"] == 2 and header["seed"] == 7 and header["epoch"] == 2
    assert header["actor_sizes"] == [72, 8, 8, 2]
    assert header["activations"]["actor"][-1] == "tanh"
    actor = load_actor(report.checkpoints[-1])
    obs = env.reset()
    assert actor_forward(actor, obs).shape == (2,)
    assert set(tensors) >= {"actor.layers.0.weight", "critic.layers.2.bias"}


def test_checkpoint_rejects_corruption(tmp_path):
    env = tiny_env()
    agent = DDPGAgent(env.obs_size, env.n_actions, env.omega_max, DDPGConfig(hidden=(8,)))
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, agent, env, 3)
    raw = path.read_bytes()
    (tmp_path / "bad_magic.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    (tmp_path / "short.ckpt").write_bytes(raw[:-10])
    for name in ("bad_magic.ckpt", "short.ckpt"):
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / name)
