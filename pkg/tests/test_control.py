import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optomech_rl.control import (
    EpisodeFinished,
    StatePrepEnv,
    devectorize_state,
    reward,
    reward_from_fidelity,
    target_fidelity,
    vectorize_state,
)
from optomech_rl.diagnostics import fidelity, mechanical_state
from optomech_rl.dynamics import product_state
from optomech_rl.hilbert import SystemConfig
from optomech_rl.targets import (
    TargetSpec,
    bell,
    fock,
    format_target,
    parse_target,
    superposition,
)

SMALL = SystemConfig.single(0.839, kappa=0.002, gamma_m=0.0004, nc=2, nm=5)


def small_env(target=None, S=6, T=6.0, **kw):
    return StatePrepEnv(SMALL, target or fock(2), T, S, **kw)


def test_vectorize_examples():
    np.testing.assert_array_equal(vectorize_state(np.diag([1.0, 0.0]).astype(complex)), [1, 0, 0, 0, 0, 0, 0, 0])
    assert vectorize_state(np.eye(30) / 30).size == 1800
    rho = np.array([[0.5, 0.1 - 0.2j], [0.1 + 0.2j, 0.5]])
    np.testing.assert_array_equal(vectorize_state(rho), [0.5, 0.1, 0.1, 0.5, 0, -0.2, 0.2, 0])


@settings(max_examples=30)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_vectorize_round_trip(d, seed):
    rng = np.random.default_rng(seed)
    rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    np.testing.assert_array_equal(devectorize_state(vectorize_state(rho)), rho)


def test_devectorize_rejects_bad_length():
    with pytest.raises(ValueError):
        devectorize_state(np.zeros(7))


def test_reward_examples():
    assert reward_from_fidelity(0.0) == 0.0
    assert reward_from_fidelity(0.9) == pytest.approx(10.0, abs=1e-12)
    assert reward_from_fidelity(0.935) == pytest.approx(-10 * math.log10(0.065), abs=1e-12)
    assert reward_from_fidelity(0.935) == pytest.approx(11.87, abs=5e-3)
    assert reward_from_fidelity(1.0) == pytest.approx(120.0, rel=1e-3)
    assert math.isfinite(reward_from_fidelity(1.5))


@given(st.floats(0, 1 - 1e-11), st.floats(0, 1 - 1e-11))
def test_reward_monotone(f1, f2):
    if f1 + 1e-13 < f2:
        assert reward_from_fidelity(f1) < reward_from_fidelity(f2)


def test_target_fidelity_modes():
    cav = np.array([0.6, 0.8])
    mech = np.zeros(5)
    mech[2] = 1.0
    rho = product_state(cav, mech)
    assert target_fidelity(rho, fock(2), SMALL) == pytest.approx(1.0)
    assert target_fidelity(rho, fock(2), SMALL, "joint") == pytest.approx(0.36)
    assert reward(rho, fock(1), SMALL) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        target_fidelity(rho, fock(2), SMALL, "other")
    assert target_fidelity(rho, fock(2), SMALL) == fidelity(mechanical_state(rho, SMALL), fock(2))


def test_reset_contract():
    env = small_env(fock(0))
    obs = env.reset()
    assert obs.size == env.obs_size == 2 * 100
    assert np.trace(devectorize_state(obs)).real == 1.0
    assert env.fidelity == 1.0
    env2 = small_env(fock(2))
    env2.reset()
    assert reward_from_fidelity(env2.fidelity) == 0.0


def test_zero_action_keeps_reward_zero():
    env = small_env(fock(2))
    env.reset()
    for _ in range(env.S):
        obs, r, done = env.step(np.zeros(env.n_actions))
        assert obs.size == env.obs_size
        assert abs(r) < 1e-9
    assert done


def test_episode_contract():
    env = small_env(superposition([0, 2]), S=3, T=3.0)
    with pytest.raises(EpisodeFinished):
        env.step([0.0, 0.0])
    env.reset()
    flags = [env.step([0.1, -0.1])[2] for _ in range(3)]
    assert flags == [False, False, True]
    with pytest.raises(EpisodeFinished):
        env.step([0.0, 0.0])
    env.reset()
    with pytest.raises(ValueError):
        env.step([0.0])


def test_action_clipping_and_schedule():
    env = small_env(S=2, T=2.0, omega_max=0.2)
    env.reset()
    env.step([0.5, -3.0])
    sched = env.schedule()
    np.testing.assert_array_equal(sched.amplitudes, [[0.2, -0.2], [0.0, 0.0]])
    assert sched.omega_max == 0.2


def test_environment_determinism():
    actions = np.random.default_rng(4).uniform(-0.2, 0.2, (6, 2))
    runs = []
    for _ in range(2):
        env = small_env()
        out = [env.reset()]
        for a in actions:
            obs, r, _ = env.step(a)
            out.extend([obs, np.array([r])])
        runs.append(np.concatenate(out))
    assert runs[0].tobytes() == runs[1].tobytes()


def test_rollout_matches_stepping():
    amps = np.random.default_rng(2).uniform(-0.2, 0.2, (6, 2))
    env = small_env()
    fids, states = env.rollout(amps)
    assert fids.shape == (7,) and len(states) == 7
    env2 = small_env()
    env2.reset()
    for a in amps:
        env2.step(a)
    assert env2.fidelity == fids[-1]


def test_env_does_not_mutate_inputs():
    target = superposition([0, 2])
    cfg_before, target_before = repr(SMALL), repr(target)
    env = StatePrepEnv(SMALL, target, 2.0, 2)
    env.reset()
    env.step([0.2, 0.2])
    assert repr(SMALL) == cfg_before and repr(target) == target_before


def test_env_rejects_bad_settings():
    with pytest.raises(ValueError):
        StatePrepEnv(SMALL, fock(2), 5.0, 0)
    with pytest.raises(ValueError):
        StatePrepEnv(SMALL, fock(2), 5.0, 5, fidelity_mode="bogus")
    with pytest.raises(ValueError):
        StatePrepEnv(SMALL, fock(2), 5.0, 5, omega_max=0.0)


def test_target_spec_normalization():
    with pytest.raises(ValueError):
        TargetSpec("fock", (((0,), 0.5),))
    sup = superposition([0, 2])
    np.testing.assert_allclose(sup.state_vector((4,)), [1 / math.sqrt(2), 0, 1 / math.sqrt(2), 0])
    assert sup.max_index() == (2,)
    with pytest.raises(ValueError):
        fock(5).state_vector((4,))


def test_bell_vectors():
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(bell("phi+").state_vector((2, 2)), [r, 0, 0, r])
    np.testing.assert_allclose(bell("phi-").state_vector((2, 2)), [r, 0, 0, -r])
    np.testing.assert_allclose(bell("psi+").state_vector((2, 2)), [0, r, r, 0])
    np.testing.assert_allclose(bell("psi-").state_vector((2, 2)), [0, -r, r, 0])
    with pytest.raises(ValueError):
        bell("chi")


def test_target_text_round_trip():
    for text in ("fock:2", "sup:0,2", "bell:phi+", "bell:psi+"):
        t = parse_target(text)
        assert parse_target(format_target(t)) == t
    assert parse_target("fock:6") == fock(6)
    with pytest.raises(ValueError):
        parse_target("cat:2")
