import numpy as np
import pytest

from cpgate.harness.episode import SimConfig, run_episode
from cpgate.perception import DetectedObject, N_CELLS
from cpgate.protocols import (
    BaselinePolicy,
    LearnedPolicy,
    RandomPolicy,
    baseline_decide,
    learned_decide,
    parse_policy,
)
from cpgate.rl import DISCARD, TRANSMIT, CheckpointError, ObservationWindow, QNetwork
from cpgate.world import Kind, ScenarioConfig, generate_scenario

W = 10
SCENE = ScenarioConfig(map_id="map2", vehicle_count=10, episode_ticks=60, rng_seed=11)


def det(i):
    return DetectedObject(i, Kind.CAR, 10.0, 0.0, 0.0, 0)


class BiasedNet(QNetwork):
    """Network whose output bias alone decides the action."""

    @classmethod
    def with_preference(cls, action):
        net = cls.create(W, seed=0, zero_output=True)
        net.params["fc2_b"][:] = 0.0
        net.params["fc2_b"][action] = 1.0
        return net


def test_baseline_rule():
    assert baseline_decide([]).action == DISCARD
    assert baseline_decide([det(1)]).action == TRANSMIT
    assert BaselinePolicy().decide(np.array([True, False]), None, 0)[1].action == DISCARD


def test_learned_rule_follows_argmax_and_never_sends_empty():
    obs = ObservationWindow(W).observe(2)
    for action in (TRANSMIT, DISCARD):
        d = learned_decide(obs, BiasedNet.with_preference(action), detections=[det(3)])
        assert d.action == action and d.q_values is not None
    d = learned_decide(obs, BiasedNet.with_preference(TRANSMIT), detections=[])
    assert d.action == DISCARD and d.q_values is None


def test_learned_rule_rejects_window_mismatch():
    with pytest.raises(CheckpointError):
        learned_decide(ObservationWindow(W - 1).observe(1), QNetwork.create(W))


def test_parse_policy(tmp_path):
    assert isinstance(parse_policy("baseline"), BaselinePolicy)
    rp = parse_policy("random(0.25)")
    assert isinstance(rp, RandomPolicy) and rp.p == 0.25
    path = tmp_path / "n.npz"
    QNetwork.create(W).save(path)
    assert isinstance(parse_policy(f"learned({path})"), LearnedPolicy)
    with pytest.raises(ValueError):
        parse_policy("sometimes")
    with pytest.raises(ValueError):
        RandomPolicy(1.5)


def test_random_policy_is_seeded_and_respects_empty():
    has = np.array([True] * 500 + [False] * 10)
    a = [d.action for d in RandomPolicy(0.3, seed=4).decide(has, None, 7)]
    b = [d.action for d in RandomPolicy(0.3, seed=4).decide(has, None, 7)]
    assert a == b
    assert all(x == DISCARD for x in a[500:])
    assert abs(a[:500].count(TRANSMIT) / 500 - 0.3) < 0.07


@pytest.fixture(scope="module")
def scene():
    return generate_scenario(SCENE)


def run(policy, scene):
    return run_episode(SCENE, policy, SimConfig(), world_and_routes=scene)


def test_baseline_sends_one_cpm_per_nonempty_tick(scene):
    log = run(BaselinePolicy(), scene)
    assert np.array_equal(log.cpm_sent_per_vehicle, log.nonempty_ticks_per_vehicle)
    assert log.cpm_sent == log.nonempty_ticks_per_vehicle.sum() > 0


def test_all_transmit_network_reproduces_baseline(scene):
    base = run(BaselinePolicy(), scene)
    learned = run(LearnedPolicy(BiasedNet.with_preference(TRANSMIT)), scene)
    assert learned.cpm_records_sent == base.cpm_records_sent
    assert learned.network_log == base.network_log
    assert learned.known == base.known


def test_learned_records_never_exceed_baseline(scene):
    base = run(BaselinePolicy(), scene)
    for policy in (LearnedPolicy(QNetwork.create(W, seed=3)), RandomPolicy(0.5, 1),
                   LearnedPolicy(BiasedNet.with_preference(DISCARD))):
        log = run(policy, scene)
        assert np.all(log.cpm_sent_per_vehicle <= base.nonempty_ticks_per_vehicle)
        assert log.cpm_records_sent <= base.cpm_records_sent
    assert run(LearnedPolicy(BiasedNet.with_preference(DISCARD)), scene).cpm_sent == 0


def test_episode_is_deterministic(scene):
    net = QNetwork.create(W, seed=5)
    a = run(LearnedPolicy(net), scene)
    b = run(LearnedPolicy(net), scene)
    assert a.network_log == b.network_log and a.known == b.known and a.targets == b.targets


def test_projection_grids_have_valid_categories(scene):
    seen = []

    class Spy(BaselinePolicy):
        needs_observation = True

        def decide(self, has, raw, tick):
            seen.append(raw.copy())
            return super().decide(has, raw, tick)

    run(Spy(), scene)
    grids = np.stack(seen)[:, :, :W * N_CELLS]
    assert grids.min() >= 1 and grids.max() <= 13
    assert 1 <= np.stack(seen)[:, :, -1].min() and np.stack(seen)[:, :, -1].max() <= 5
