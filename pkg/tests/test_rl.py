import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpgate.perception import N_CATEGORIES, N_CELLS
from cpgate.rl import (
    DISCARD,
    TRANSMIT,
    AgentObservation,
    CheckpointError,
    DQNLearner,
    LinearQ,
    ObservationWindow,
    QNetwork,
    ReceiverView,
    ReplayBuffer,
    RewardConfig,
    Sgd,
    TrainConfig,
    Transition,
    action_reward,
    decode,
    encode,
    history_factor,
    reward_per_pair,
    select_action,
    tabular_q_update,
    train_step,
)
from cpgate.rl.dqn import greedy, infer, td_loss_and_grads
from cpgate.rl.network import CONV_LAYERS
from cpgate.rl.reward import NEVER, action_reward_arrays
from oracles import CHAIN_MDP as MDP, finite_difference_errors

W = 10
STATE_DIM = W * N_CELLS + 1


def random_raw(rng, n, window=W):
    grids = rng.integers(1, N_CATEGORIES + 1, (n, window * N_CELLS))
    psi = rng.integers(1, 6, (n, 1))
    return np.concatenate([grids, psi], axis=1).astype(np.int8)


observations = st.builds(
    lambda cats, psi: AgentObservation(np.array(cats, dtype=np.int8).reshape(W, N_CELLS), psi),
    st.lists(st.integers(1, N_CATEGORIES), min_size=W * N_CELLS, max_size=W * N_CELLS),
    st.integers(1, 5),
)


# ---- encoding ------------------------------------------------------------------

def test_all_empty_window_encoding():
    obs = ObservationWindow(W).observe(1)
    enc = encode(obs)
    assert enc.image.shape == (N_CATEGORIES, W, N_CELLS)
    assert np.all(enc.image[0] == 1) and np.all(enc.image[1:] == 0)
    assert enc.load == pytest.approx(0.2)


def test_single_cell_one_hot_placement():
    win = ObservationWindow(W)
    grid = np.ones(N_CELLS, dtype=np.int8)
    grid[4] = 7
    win.push(grid)
    enc = encode(win.observe(3))
    assert enc.image[6].sum() == 1 and enc.image[6, W - 1, 4] == 1
    assert enc.load == pytest.approx(0.6)


@settings(max_examples=60, deadline=None)
@given(obs=observations)
def test_encode_decode_round_trip(obs):
    enc = encode(obs)
    assert np.all(enc.image.sum(axis=0) == 1)
    assert 0 < enc.load <= 1
    assert decode(enc) == obs


@settings(max_examples=60, deadline=None)
@given(a=observations, b=observations)
def test_encoding_is_injective(a, b):
    ea, eb = encode(a), encode(b)
    same = np.array_equal(ea.image, eb.image) and ea.load == eb.load
    assert same == (a == b)


def test_observation_validation():
    with pytest.raises(ValueError):
        AgentObservation(np.ones((W, 14), dtype=np.int8), 1)
    with pytest.raises(ValueError):
        AgentObservation(np.zeros((W, N_CELLS), dtype=np.int8), 1)
    with pytest.raises(ValueError):
        AgentObservation(np.ones((W, N_CELLS), dtype=np.int8), 6)


def test_window_keeps_oldest_first():
    win = ObservationWindow(3)
    for c in (2, 3, 4, 5):
        win.push(np.full(N_CELLS, c))
    assert win.observe(1).grids[:, 0].tolist() == [3, 4, 5]


# ---- history factor and reward --------------------------------------------------

@pytest.mark.parametrize("t,tau,expected", [(20, 9, 0.0), (20, 15, 0.2), (20, 20, 1.0), (20, 10, 0.1), (5, NEVER, 0.0)])
def test_history_factor(t, tau, expected):
    assert history_factor(t, tau, 10) == pytest.approx(expected, abs=1e-15)


def test_history_factor_rejects_future():
    with pytest.raises(ValueError):
        history_factor(3, 5, 10)


def test_reward_examples():
    assert reward_per_pair(True, 1, 0.0, 1) == pytest.approx(0.85, abs=1e-12)
    assert reward_per_pair(False, 3, 1.0, 5) == pytest.approx(-0.75, abs=1e-12)
    assert reward_per_pair(True, 3, 0.5, 2, RewardConfig(-1e-300, -1e-300, -1e-300)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        reward_per_pair(True, 0, 0.0, 1)


def test_penalty_sign_validation():
    RewardConfig().validate_penalties()
    with pytest.raises(ValueError):
        RewardConfig(mu_cpm=0.1).validate_penalties()


@settings(max_examples=200, deadline=None)
@given(theta=st.integers(1, 20), phi=st.floats(0, 1), c=st.integers(1, 5),
       dt=st.integers(0, 5), dphi=st.floats(0, 1), dc=st.integers(0, 4))
def test_reward_sign_and_monotonicity(theta, phi, c, dt, dphi, dc):
    r = reward_per_pair(False, theta, phi, c)
    assert r <= 0
    assert reward_per_pair(False, theta + dt, min(phi + dphi, 1.0), min(c + dc, 5)) <= r + 1e-15
    assert reward_per_pair(True, theta, phi, c) == pytest.approx(r + 1.0)


def test_action_reward_aggregation():
    # receiver 1 does not see object 5: 1 - 0.1 - 0 - 0.05 = 0.85
    # receiver 2 sees it right now at load 5: 0 - 0.1 - 0.2 - 0.25 = -0.55
    rx = [ReceiverView(1, frozenset(), {}, 1), ReceiverView(2, frozenset({5}), {5: 30}, 5)]
    assert action_reward(TRANSMIT, [5], rx, {5: 1}, 30) == pytest.approx(0.15, abs=1e-12)
    assert action_reward(DISCARD, [5], rx, {5: 1}, 30) == 0.0
    assert action_reward(TRANSMIT, [5], [], {5: 1}, 30) == 0.0


def test_action_reward_skips_the_receiver_itself():
    rx = [ReceiverView(5, frozenset(), {}, 1)]
    assert action_reward(TRANSMIT, [5, 6], rx, {5: 1, 6: 1}, 0) == pytest.approx(0.85)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_vectorized_reward_matches_reference(seed):
    rng = np.random.default_rng(seed)
    n_cv, n = 6, 12
    cv = np.arange(n_cv)
    tick = 40
    detected = rng.random((n_cv, n)) < 0.4
    last = np.where(rng.random((n_cv, n)) < 0.3, NEVER, tick - rng.integers(0, 15, (n_cv, n)))
    last[detected] = tick
    psi = rng.integers(1, 6, n_cv)
    theta = rng.integers(1, 5, n)
    obj = rng.choice(n, size=rng.integers(1, 6), replace=False)
    rows = rng.choice(n_cv, size=rng.integers(1, n_cv + 1), replace=False)
    views = [ReceiverView(int(cv[r]), frozenset(np.flatnonzero(detected[r]).tolist()),
                          {int(o): int(last[r, o]) for o in range(n)}, int(psi[r])) for r in rows]
    ref = action_reward(TRANSMIT, obj.tolist(), views, {int(o): int(theta[o]) for o in range(n)}, tick)
    fast = action_reward_arrays(obj, np.stack([rows, cv[rows]], axis=1), detected, last, psi, theta, tick)
    assert fast == pytest.approx(ref, abs=1e-12)


# ---- action selection and tabular update ------------------------------------------------

def test_select_action_rules():
    rng = np.random.default_rng(0)
    assert select_action((0.2, 0.7), 0.0, rng) == DISCARD
    assert select_action((0.5, 0.5), 0.0, rng) == TRANSMIT
    assert select_action((0.9, 0.1), 0.0, rng) == TRANSMIT
    assert greedy(np.array([[0.5, 0.5], [0.1, 0.2]])).tolist() == [TRANSMIT, DISCARD]


def test_uniform_exploration_frequency():
    rng = np.random.default_rng(123)
    draws = [select_action((1.0, 0.0), 1.0, rng) for _ in range(10_000)]
    freq = draws.count(TRANSMIT) / len(draws)
    assert abs(freq - 0.5) <= 0.02


def test_tabular_examples():
    q = np.zeros((2, 2))
    q[1] = [2.0, 1.0]
    assert tabular_q_update(q, 0, 0, 1.0, 1, 0.5, 0.9)[0, 0] == pytest.approx(1.4, abs=1e-12)
    q2 = np.arange(4.0).reshape(2, 2)
    assert np.array_equal(tabular_q_update(q2, 0, 1, 5.0, 1, 0.0, 0.9), q2)
    assert tabular_q_update(q2, 1, 0, 0.0, 0, 1.0, 0.0)[1, 0] == 0.0
    with pytest.raises(ValueError):
        tabular_q_update(q2, 0, 0, 0.0, None, 1.5, 0.9)


def test_epsilon_schedule():
    cfg = TrainConfig(total_steps=1000)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(250) == pytest.approx(0.525)
    assert cfg.epsilon(500) == pytest.approx(0.05)
    assert cfg.epsilon(900) == pytest.approx(0.05)


@pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(learning_rate=1.5), dict(discount=1.0), dict(batch_size=0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ---- Q-network -------------------------------------------------------------------

def test_layer_shapes():
    net = QNetwork.create(W, seed=0)
    shapes = {k: v.shape for k, v in net.params.items()}
    assert shapes["conv1_w"] == (32, 13, 8, 8)
    assert shapes["conv2_w"] == (64, 32, 4, 4)
    assert shapes["conv3_w"] == (64, 64, 3, 3)
    assert shapes["fc1_w"] == (64 * 3 * 4 + 1, 512)
    assert shapes["fc2_w"] == (512, 2)
    assert [c[0] for c in CONV_LAYERS] == ["conv1", "conv2", "conv3"]


def test_zero_output_layer_gives_zero_q():
    net = QNetwork.create(W, seed=3, zero_output=True)
    x = net.prepare(random_raw(np.random.default_rng(0), 4))
    assert np.array_equal(infer(net, x), [0.0, 0.0])


def test_inference_is_deterministic_and_finite():
    net = QNetwork.create(W, seed=1)
    x = net.prepare(random_raw(np.random.default_rng(1), 1))
    a, b = infer(net, x), infer(net, x)
    assert np.array_equal(a, b) and np.all(np.isfinite(a))


def test_zero_input_with_zero_biases():
    net = QNetwork.create(W, seed=2)
    q, _ = net.forward((np.zeros((3, 13, W, N_CELLS)), np.zeros(3)))
    assert np.array_equal(q, np.zeros((3, 2)))


def test_gradient_check_every_layer():
    net = QNetwork.create(W, seed=5)
    rng = np.random.default_rng(5)
    for p in net.params.values():
        if p.ndim == 1:
            p += rng.normal(0, 0.05, p.shape)  # non-zero biases exercise their gradients
    inputs = net.prepare(random_raw(rng, 3))
    errs = finite_difference_errors(net, inputs, rng.normal(size=(3, 2)))
    assert set(errs) == set(net.params)
    assert max(errs.values()) < 1e-4, errs


def test_td_loss_gradient_matches_finite_differences():
    net = QNetwork.create(W, seed=8)
    rng = np.random.default_rng(8)
    inputs = net.prepare(random_raw(rng, 4))
    actions = np.array([0, 1, 1, 0])
    targets = rng.normal(size=4)
    loss, grads = td_loss_and_grads(net, inputs, actions, targets)
    p = net.params["fc1_w"]
    for _ in range(5):
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + 1e-6
        up = td_loss_and_grads(net, inputs, actions, targets)[0]
        p[idx] = old - 1e-6
        down = td_loss_and_grads(net, inputs, actions, targets)[0]
        p[idx] = old
        fd = (up - down) / 2e-6
        assert abs(fd - grads["fc1_w"][idx]) <= 1e-4 * max(abs(fd), 1e-6) + 1e-9


def test_checkpoint_round_trip(tmp_path):
    net = QNetwork.create(W, seed=4)
    path = tmp_path / "net.npz"
    net.save(path, TrainConfig().to_dict(), {"step": 7})
    loaded, meta = QNetwork.load(path, window=W)
    assert meta["extra"]["step"] == 7
    assert meta["train_config"]["discount"] == 0.95
    for k in net.params:
        assert np.array_equal(net.params[k], loaded.params[k])


def test_checkpoint_mismatch_raises(tmp_path):
    net = QNetwork.create(W, seed=4)
    path = tmp_path / "net.npz"
    net.save(path)
    with pytest.raises(CheckpointError):
        QNetwork.load(path, window=W + 1)
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        QNetwork.load(bad)
    small = dict(net.params)
    small["fc2_w"] = small["fc2_w"][:10]
    np.savez(tmp_path / "short.npz", __meta__=np.load(path)["__meta__"], **small)
    with pytest.raises(CheckpointError):
        QNetwork.load(tmp_path / "short.npz")


# ---- DQN updates -------------------------------------------------------------------

def test_train_step_needs_a_full_batch():
    net = QNetwork.create(W)
    cfg = TrainConfig(batch_size=4)
    replay = ReplayBuffer(10, STATE_DIM)
    assert train_step(replay, net, net.copy(), Sgd(), cfg, np.random.default_rng(0)) is None


def test_fixed_point_transition_has_zero_loss():
    net = QNetwork.create(W, seed=6)
    raw = random_raw(np.random.default_rng(6), 1)[0]
    q = infer(net, net.prepare(raw[None, :]))
    replay = ReplayBuffer(8, STATE_DIM)
    for _ in range(8):
        replay.add(Transition(raw, TRANSMIT, float(q[TRANSMIT]), raw, True))
    before = {k: v.copy() for k, v in net.params.items()}
    loss = train_step(replay, net, net.copy(), Sgd(1e-2), TrainConfig(batch_size=8), np.random.default_rng(0))
    assert loss == pytest.approx(0.0, abs=1e-20)
    for k in before:
        assert np.allclose(before[k], net.params[k], atol=1e-15)


def test_transition_rejects_non_finite_reward():
    raw = np.ones(STATE_DIM, dtype=np.int8)
    with pytest.raises(ValueError):
        Transition(raw, 0, math.nan, raw, False)


def test_bandit_converges_to_rewarding_action():
    cfg = TrainConfig(learning_rate=1e-3, batch_size=8, total_steps=2000, target_sync=100)
    net = QNetwork.create(W, seed=9)
    learner = DQNLearner(net, cfg, STATE_DIM)
    raw = ObservationWindow(W).observe(1).to_raw()
    rng = np.random.default_rng(9)
    for _ in range(cfg.total_steps):
        a = int(rng.integers(2))
        learner.observe(Transition(raw, a, 1.0 if a == TRANSMIT else 0.0, raw, True))
        learner.update()
    q = learner.q_values(raw[None, :])[0]
    assert learner.updates == cfg.total_steps - (cfg.batch_size - 1)  # waits for one full batch
    assert q[TRANSMIT] > q[DISCARD]
    assert q[TRANSMIT] == pytest.approx(1.0, abs=0.2)


def test_tabular_three_updates_match_hand_values():
    q = np.zeros((3, 2))
    for s, a in [(1, TRANSMIT), (0, TRANSMIT), (1, TRANSMIT)]:
        nxt, r = MDP[(s, a)]
        q = tabular_q_update(q, s, a, r, nxt, 0.5, 0.9)
    expected = np.array([[0.225, 0.0], [0.75, 0.0], [0.0, 0.0]])
    assert np.max(np.abs(q - expected)) < 1e-12


def test_table_capacity_dqn_matches_tabular_policy():
    rng = np.random.default_rng(0)
    q = np.zeros((3, 2))
    for _ in range(300):
        for (s, a), (nxt, r) in MDP.items():
            q = tabular_q_update(q, s, a, r, nxt, 0.5, 0.9)
    tab_policy = np.argmax(q, axis=1)

    cfg = TrainConfig(learning_rate=0.2, momentum=0.0, batch_size=6, target_sync=20, total_steps=3000,
                      discount=0.9, max_grad_norm=None)
    learner = DQNLearner(LinearQ.create(3), cfg, 1)
    for (s, a), (nxt, r) in MDP.items():
        learner.observe(Transition(np.array([s]), a, r, np.array([0 if nxt is None else nxt]), nxt is None))
    learner.rng = rng
    while not learner.done:
        learner.update()
    dqn_q = learner.q_values(np.arange(3)[:, None])
    assert np.array_equal(greedy(dqn_q), np.where(tab_policy == 0, TRANSMIT, DISCARD))
    assert np.allclose(dqn_q, q, atol=0.05)
