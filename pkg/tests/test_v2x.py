import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpgate.perception import DetectedObject
from cpgate.v2x import (
    BSM_BITS,
    ChannelConfig,
    CongestionConfig,
    CongestionMeter,
    Cpm,
    congestion_level,
    count_object_reports,
    deliver,
    level_from_count,
    make_bsm,
    make_cpm,
    reception_probability,
    report_counts,
)
from cpgate.world import Entity, Kind, WorldState

CFG = ChannelConfig()


def cars(xs):
    return WorldState.from_entities([Entity(i, Kind.CAR, x, 0.0, 0.0, 0.0, 4.54, 1.76, True) for i, x in enumerate(xs)])


def fake_records(n, start=1000):
    return [DetectedObject(start + k, Kind.PEDESTRIAN, 10.0, 0.0, 0.0, 0) for k in range(n)]


# ---- reception probability ------------------------------------------------------

def test_reception_examples():
    assert reception_probability(0, 5000) == 1.0
    assert reception_probability(10, 3200) == pytest.approx(math.exp(-10 * 3200 / 6e5), abs=1e-15)
    assert reception_probability(10, 3200) == pytest.approx(0.9481, abs=5e-5)
    assert reception_probability(100, 2000) == pytest.approx(math.exp(-1 / 3), abs=1e-15)
    assert reception_probability(100, 2000) == pytest.approx(0.7165, abs=5e-5)


def test_reception_rejects_negative_inputs():
    with pytest.raises(ValueError):
        reception_probability(-1, 10)
    with pytest.raises(ValueError):
        reception_probability(1, -10)


def test_reception_is_clamped_above_zero():
    p = reception_probability(1e6, 1e9)
    assert 0.0 < p <= 1.0


@settings(max_examples=200, deadline=None)
@given(lam=st.integers(0, 500), s=st.integers(0, 200_000), dl=st.integers(1, 50), ds=st.integers(1, 10_000))
def test_reception_monotone(lam, s, dl, ds):
    p = reception_probability(lam, s)
    assert (p == 1.0) == (lam * s == 0)
    if s > 0:
        assert reception_probability(lam + dl, s) < p or p < 1e-300
    if lam > 0:
        assert reception_probability(lam, s + ds) < p or p < 1e-300


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(comm_range=600.0)
    with pytest.raises(ValueError):
        ChannelConfig(data_rate=0.0)


# ---- delivery -------------------------------------------------------------------

def test_lone_sender_closed_form():
    w = cars([0.0, 100.0])
    cpm = make_cpm(w, 0, fake_records(5), CFG)
    out = deliver([make_bsm(w, 0)], [cpm], w, CFG, seed=0)
    # the sender is the only transmitter: lambda = 1, s = its own CPM
    assert out.lam[0] == 1
    assert out.probability[0] == pytest.approx(math.exp(-cpm.size_bits / 600_000.0), abs=1e-15)
    assert out.probability[0] > 0.99


def test_no_delivery_beyond_comm_range():
    w = cars([0.0, 400.0])
    for seed in range(20):
        out = deliver([make_bsm(w, 0)], [make_cpm(w, 0, fake_records(1), CFG)], w, CFG, seed=seed)
        assert out.inboxes[1] == []
        assert all(row[4] == 0 for row in out.log)


def test_interference_counts_transmitters_near_the_sender():
    w = cars([0.0, 200.0, 450.0, 900.0])
    bsms = [make_bsm(w, i) for i in range(4)]
    out = deliver(bsms, [], w, CFG, seed=1)
    assert out.lam == {0: 3, 1: 3, 2: 4, 3: 2}
    # BSM-only transmitters add no CPM bits
    assert all(v == 0.0 for v in out.mean_cpm_bits.values())
    assert all(v == 1.0 for v in out.probability.values())


def test_mean_cpm_size_includes_silent_transmitters():
    w = cars([0.0, 100.0])
    cpm = make_cpm(w, 0, fake_records(10), CFG)
    out = deliver([make_bsm(w, 0), make_bsm(w, 1)], [cpm], w, CFG, seed=0)
    assert out.lam[0] == 2
    assert out.mean_cpm_bits[0] == pytest.approx(cpm.size_bits / 2)


def test_monte_carlo_matches_closed_form():
    n_rx = 50
    w = cars([0.0] + [5.0 * (k + 1) for k in range(n_rx)])
    cpm = make_cpm(w, 0, fake_records(1000), CFG)
    bsms = [make_bsm(w, i) for i in range(n_rx + 1)]
    p = reception_probability(n_rx + 1, cpm.size_bits / (n_rx + 1))
    delivered = trials = 0
    for tick in range(2000):
        w.tick = tick
        out = deliver(bsms, [cpm], w, CFG, seed=42)
        row = [r for r in out.log if r[2] == "CPM"][0]
        trials += row[4]
        delivered += row[5]
    assert trials == 100_000
    sigma = math.sqrt(p * (1 - p) / trials)
    assert abs(delivered / trials - p) <= 3 * sigma


def test_delivered_messages_are_from_this_tick_and_in_range():
    rng = np.random.default_rng(3)
    w = cars(rng.uniform(0, 800, 30))
    w.tick = 17
    bsms = [make_bsm(w, i) for i in range(30)]
    cpms = [make_cpm(w, i, fake_records(3), CFG) for i in range(0, 30, 3)]
    out = deliver(bsms, cpms, w, CFG, seed=9, keep_records=True)
    for r, box in out.inboxes.items():
        for m in box:
            assert m.tick == 17
            assert abs(w.x[m.sender] - w.x[r]) <= CFG.comm_range
            assert m.sender != r


def test_delivery_is_deterministic_given_seed():
    w = cars(np.linspace(0, 250, 12))
    bsms = [make_bsm(w, i) for i in range(12)]
    cpms = [make_cpm(w, i, fake_records(60), CFG) for i in range(12)]
    a = deliver(bsms, cpms, w, CFG, seed=5)
    b = deliver(bsms, cpms, w, CFG, seed=5)
    assert a.log == b.log


def test_ideal_bsm_channel_flag():
    w = cars(np.linspace(0, 250, 12))
    bsms = [make_bsm(w, i) for i in range(12)]
    cpms = [make_cpm(w, i, fake_records(3000), CFG) for i in range(12)]
    out = deliver(bsms, cpms, w, ChannelConfig(bsm_lossy=False), seed=5)
    for row in out.log:
        if row[2] == "BSM":
            assert row[4] == row[5]


def test_message_sizes():
    w = cars([0.0])
    assert make_bsm(w, 0).size_bits == BSM_BITS
    assert make_cpm(w, 0, fake_records(4), CFG).size_bits == 400 + 4 * 280


# ---- congestion level -------------------------------------------------------------

def test_congestion_examples():
    assert congestion_level([]) == 1
    assert congestion_level([[None] * 201]) == 5
    assert level_from_count(20) == 1
    assert level_from_count(21) == 2
    assert level_from_count(60) == 2
    assert level_from_count(200) == 4


def test_congestion_window_only_counts_recent_ticks():
    history = [[None] * 100] + [[None] * 2] * 10
    assert congestion_level(history, window_ticks=10) == 1
    assert congestion_level(history, window_ticks=11) == 3


@settings(max_examples=100, deadline=None)
@given(counts=st.lists(st.integers(0, 60), min_size=1, max_size=15), extra=st.integers(0, 50))
def test_congestion_monotone_and_order_invariant(counts, extra):
    boxes = [[None] * c for c in counts]
    lvl = congestion_level(boxes)
    assert 1 <= lvl <= 5
    recent = boxes[-10:]
    assert congestion_level(list(reversed(recent))) == lvl
    bumped = boxes[:-1] + [[None] * (counts[-1] + extra)]
    assert congestion_level(bumped) >= lvl


def test_meter_tracks_rolling_window():
    meter = CongestionMeter(CongestionConfig(window_ticks=2))
    for c in (100, 30, 30):
        meter.push(7, c)
    assert meter.level(7) == 2
    assert meter.level(8) == 1


# ---- redundancy count ------------------------------------------------------------

def _cpm(sender, ids, tick=0):
    return Cpm(sender, tick, (0.0, 0.0), 0.0, tuple(DetectedObject(i, Kind.CAR, 5.0, 0.0, 0.0, tick) for i in ids))


def test_object_report_counts():
    cpms = [_cpm(1, [9, 4]), _cpm(2, [9]), _cpm(3, [9, 5])]
    assert count_object_reports(cpms, 9, 0) == 3
    assert count_object_reports(cpms, 4, 0) == 1
    assert count_object_reports(cpms, 77, 0) == 0
    assert count_object_reports(cpms, 9, 1) == 0
    assert report_counts(cpms) == {9: 3, 4: 1, 5: 1}
