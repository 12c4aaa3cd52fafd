import numpy as np
import pytest

from conftest import make_config
from mmlink.channel import LinkOutcome
from mmlink.controllers.mab import MabController, init_explore
from mmlink.env import MmWaveEnv, SlotResult
from mmlink.errors import CheckpointError
from mmlink.pomdp import Action, ObservableState


def obs(q, d2d=(), track=None, n_ue=None):
    n_ue = n_ue or len(q)
    b_d2d = np.zeros(n_ue, dtype=bool)
    b_d2d[[u - 1 for u in d2d]] = True
    b_track = np.zeros(n_ue, dtype=bool)
    if track is not None:
        b_track[track - 1] = True
    return ObservableState(np.asarray(q), b_d2d, b_track, np.full(n_ue, 100))


def controller(n_ue=5, rng_seed=0, **kwargs):
    cfg = make_config(n_ue, mab_init=0, **kwargs.pop('cfg', {}))
    return MabController(cfg, np.random.default_rng(rng_seed), **kwargs)


def link(mcs=5, rate=1.25e9, coeff=1.0, packets=100):
    return LinkOutcome(rss=-55.0, mcs=mcs, rate=rate, eff_coeff=coeff, packets=packets)


def slot(action, main, departures, d2d=None, d2d_pair=None, n_ue=5):
    departures = np.asarray(departures)
    return SlotResult(slot=0, action=action, departures=departures, delivered=departures,
                      arrivals=np.zeros(n_ue, dtype=int), main=main, d2d=d2d, d2d_pair=d2d_pair)


def test_maxweight_schedules_largest_product():
    c = controller(n_ue=3)
    c.d_hat[:] = [1.0, 3.0, 0.5]
    assert c.schedule_dest(obs([10, 5, 4])) == 2


def test_tracking_commitment_overrides_maxweight():
    c = controller()
    c.d_hat[:] = 1.0
    assert c.schedule_dest(obs([100, 0, 0, 0, 0], track=4)) == 4


def test_d2d_members_are_not_scheduled():
    c = controller()
    c.d_hat[:] = 1.0
    assert c.schedule_dest(obs([1, 100, 1, 1, 1], d2d=(2, 5))) != 2


def test_service_estimate_running_mean():
    c = controller()
    c.update_service_estimate(0, 100.0)
    assert c.d_hat[0] == 100.0
    c.update_service_estimate(0, 50.0)
    assert c.d_hat[0] == 75.0
    c.update_service_estimate(1, 100.0, via_d2d=True)
    assert c.d_hat[1] == 50.0


def test_relaying_counts_as_an_empty_service_sample():
    c = controller()
    c.observe(slot(Action(3, 3, 1), link(), [0, 0, 80, 0, 0]))
    assert c.d_hat[2] == 80.0
    c.observe(slot(Action(1, 3, 2), link(), [0] * 5))
    assert c.n_rx[2] == 2
    assert c.d_hat[2] == 40.0


def test_service_estimate_matches_replayed_samples():
    cfg = make_config(mab_init=1)
    env = MmWaveEnv(cfg, np.random.default_rng(13))
    c = MabController(cfg, np.random.default_rng(14))
    samples = [[] for _ in range(cfg.n_ue)]
    for _ in range(600):
        result = env.execute_slot(c.act(env.observe()))
        c.observe(result)
        rx = result.action.rx
        samples[rx - 1].append(float(result.departures[rx - 1]))
        if result.d2d is not None:
            u = result.d2d_pair[1]
            samples[u - 1].append(0.5 * float(result.departures[u - 1]))
    np.testing.assert_array_equal(c.n_rx, [len(s) for s in samples])
    np.testing.assert_allclose(c.d_hat, [np.mean(s) if s else 0.0 for s in samples])


def test_thompson_sampling_settles_on_the_better_codebook():
    c = controller(n_ue=3, cfg={'codebook_beams': (24, 32)})
    channel = np.random.default_rng(15)
    picks = []
    for _ in range(2000):
        k = c.select_codebook(1)
        picks.append(k)
        mcs = (10 if channel.random() < 0.9 else 0) if k == 1 else 3
        c.observe(slot(Action(1, 1, k), link(mcs=mcs, packets=0), [0] * 3, n_ue=3))
    assert picks.count(1) / len(picks) > 0.9


def test_concentrated_relay_posterior_wins():
    c = controller()
    c.alpha_relay[-1, 2, 0] = 1000.0
    picks = [c.select_relay(1, obs([0] * 5)) for _ in range(1000)]
    assert picks.count(3) >= 950


def test_flat_priors_choose_relays_uniformly():
    c = controller()
    picks = np.bincount([c.select_relay(1, obs([0] * 5)) for _ in range(1000)], minlength=6)[1:]
    sigma = np.sqrt(1000 * 0.2 * 0.8)
    assert np.all(np.abs(picks - 200) <= 4 * sigma)


def test_relay_candidates_exclude_d2d_members():
    c = controller()
    for _ in range(200):
        assert c.select_relay(1, obs([0] * 5, d2d=(2, 3))) not in (2, 3)


def test_concentrated_codebook_posterior_wins():
    c = controller()
    c.alpha_cb[-1, 2, 0] = 1000.0
    picks = [c.select_codebook(1) for _ in range(1000)]
    assert picks.count(3) >= 950


def test_flat_priors_choose_codebooks_uniformly():
    c = controller()
    picks = np.bincount([c.select_codebook(2) for _ in range(1200)], minlength=7)[1:]
    sigma = np.sqrt(1200 * (1 / 6) * (5 / 6))
    assert np.all(np.abs(picks - 200) <= 4 * sigma)


def test_single_codebook_always_chosen():
    c = controller(cfg={'codebook_beams': (24,)})
    assert {c.select_codebook(1) for _ in range(50)} == {1}


def test_no_tracking_for_relayed_links():
    c = controller()
    c.d_hat[:] = 10.0
    assert c.decide_tracking(obs([10, 0, 0, 0, 0]), dest=1, rx=2) == 0


def test_dominant_ue_is_tracked():
    c = controller(n_ue=3)
    c.d_hat[:] = [100.0, 50.0, 20.0]
    c.z_hat[:] = [1.0, 1.0, 1.0]
    assert c.decide_tracking(obs([990, 10, 10]), dest=1, rx=1) == 1
    assert c.decide_tracking(obs([10, 990, 10]), dest=1, rx=1) == 0


def test_queue_prediction():
    c = controller(n_ue=3)
    c.d_hat[:] = [10.0, 0.0, 0.0]
    c.z_hat[:] = [2.0, 2.0, 2.0]
    np.testing.assert_allclose(c.predict_queues(obs([10, 4, 0]), rx=1), [2.0, 6.0, 2.0])


def test_randomized_mcs_extremes():
    c = controller()
    assert c._randomized_mcs(7, 1.0) == 7
    assert all(c._randomized_mcs(7, 0.0) == 0 for _ in range(100))


def test_randomized_mcs_keeps_level_with_coefficient_probability():
    c = controller()
    hits = sum(c._randomized_mcs(9, 0.904) == 9 for _ in range(10_000))
    assert hits / 10_000 == pytest.approx(0.904, abs=0.01)


def test_observe_increments_posteriors():
    c = controller()
    result = slot(Action(2, 2, 3), link(mcs=2, coeff=1.0, packets=40), [0, 40, 0, 0, 0])
    c.observe(result)
    assert c.alpha_cb[2, 2, 1] == 2.0
    assert c.alpha_cb.sum() == c.alpha_cb.size + 1
    assert c.alpha_relay[2, 1, 1] == 2.0
    assert c.d_hat[1] == 40.0


def test_zero_coefficient_lands_on_level_zero():
    c = controller()
    c.observe(slot(Action(1, 1, 1), link(mcs=8, coeff=0.0, packets=0), [0] * 5))
    assert c.alpha_cb[0, 0, 0] == 2.0
    assert c.alpha_relay[0, 0, 0] == 2.0


def test_slower_d2d_leg_credits_the_relay_slot_mcs():
    c = controller()
    relay = slot(Action(1, 3, 2), link(mcs=6, rate=1.54e9, coeff=2.0), [0] * 5)
    c.observe(relay)
    assert c.alpha_relay.sum() == c.alpha_relay.size
    assert c.n_rx[2] == 1 and c.d_hat[2] == 0.0

    d2d = link(mcs=3, rate=9.625e8, coeff=2.0, packets=60)
    follow = slot(Action(2, 2, 1), link(mcs=4, coeff=1.0), [60, 100, 0, 0, 0], d2d=d2d, d2d_pair=(3, 1))
    c.observe(follow)
    assert c.alpha_relay[6, 2, 0] == 2.0
    assert c.d_hat[0] == 30.0


def test_faster_d2d_leg_credits_its_own_mcs():
    c = controller()
    c.observe(slot(Action(1, 3, 2), link(mcs=2, rate=7.7e8, coeff=2.0), [0] * 5))
    d2d = link(mcs=9, rate=3.08e9, coeff=2.0)
    c.observe(slot(Action(2, 2, 1), link(), [50, 100, 0, 0, 0], d2d=d2d, d2d_pair=(3, 1)))
    assert c.alpha_relay[9, 2, 0] == 2.0


def test_d2d_completion_without_relay_is_an_error():
    c = controller()
    with pytest.raises(RuntimeError, match="without a matching relay"):
        c.observe(slot(Action(2, 2, 1), link(), [10, 0, 0, 0, 0], d2d=link(), d2d_pair=(3, 1)))


def test_posterior_counts_match_slots():
    cfg = make_config(mab_init=0)
    env = MmWaveEnv(cfg, np.random.default_rng(1))
    c = MabController(cfg, np.random.default_rng(2))
    relays = completions = 0
    for _ in range(300):
        result = env.execute_slot(c.act(env.observe()))
        c.observe(result)
        relays += result.action.relayed
        completions += result.d2d is not None
    assert c.alpha_cb.sum() - c.alpha_cb.size == 300
    assert c.alpha_relay.sum() - c.alpha_relay.size == 300 - relays + completions
    assert c.n_slots == 300
    assert np.all(c.z_hat > 0)


def test_init_exploration_visits_every_action():
    cfg = make_config(mab_init=1)
    env = MmWaveEnv(cfg, np.random.default_rng(3))
    c = MabController(cfg, np.random.default_rng(4))
    messages = []
    slots = init_explore(env, c, messages.append)
    assert slots >= cfg.n_actions
    assert np.all(c.visits >= 1)
    assert not c.exploring
    assert messages == [f"Initial exploration: {slots} slots"]


def test_no_exploration_when_disabled():
    cfg = make_config(mab_init=0)
    c = MabController(cfg, np.random.default_rng(5))
    assert init_explore(MmWaveEnv(cfg, np.random.default_rng(5)), c) == 0
    assert np.all(c.alpha_relay == 1) and np.all(c.alpha_cb == 1)


def test_frozen_controller_is_deterministic_and_static():
    c = controller()
    c.alpha_cb[-1, 4, 0] = 50.0
    c.d_hat[:] = 5.0
    c.freeze()
    before = c.alpha_cb.copy()
    picks = {c.select_codebook(1) for _ in range(20)}
    assert picks == {5}
    c.observe(slot(Action(1, 1, 5), link(), [100, 0, 0, 0, 0]))
    np.testing.assert_array_equal(c.alpha_cb, before)
    assert c.n_slots == 0


@pytest.mark.parametrize('kwargs, check', [
    ({'use_relay': False}, lambda a: not a.relayed),
    ({'fixed_codebook': 3}, lambda a: a.cb == 3),
    ({'use_tracking': False}, lambda a: a.track == 0),
])
def test_ablations_restrict_actions(kwargs, check):
    cfg = make_config(mab_init=1)
    env = MmWaveEnv(cfg, np.random.default_rng(6))
    c = MabController(cfg, np.random.default_rng(7), **kwargs)
    for _ in range(400):
        result = env.execute_slot(c.act(env.observe()))
        c.observe(result)
        assert check(result.action)


def test_fixed_codebook_out_of_range():
    with pytest.raises(ValueError):
        controller(fixed_codebook=7)


def test_serves_traffic_after_exploration():
    cfg = make_config(mab_init=1)
    env = MmWaveEnv(cfg, np.random.default_rng(8))
    c = MabController(cfg, np.random.default_rng(9))
    init_explore(env, c)
    arrived, delivered = env.total_arrivals.sum(), env.total_delivered.sum()
    for _ in range(1000):
        c.observe(env.execute_slot(c.act(env.observe())))
    assert env.total_delivered.sum() - delivered > 0.5 * (env.total_arrivals.sum() - arrived)
    assert np.all(c.n_rx > 0)


def test_checkpoint_round_trip(tmp_path):
    cfg = make_config(mab_init=0)
    env = MmWaveEnv(cfg, np.random.default_rng(10))
    c = MabController(cfg, np.random.default_rng(11))
    for _ in range(50):
        c.observe(env.execute_slot(c.act(env.observe())))
    c.save(tmp_path / 'mab.ckpt')
    other = MabController(cfg, np.random.default_rng(12))
    other.load(tmp_path / 'mab.ckpt')
    np.testing.assert_array_equal(other.alpha_relay, c.alpha_relay)
    np.testing.assert_array_equal(other.alpha_cb, c.alpha_cb)
    np.testing.assert_array_equal(other.d_hat, c.d_hat)
    assert other.n_slots == 50


def test_checkpoint_for_other_scenario_rejected(tmp_path):
    controller().save(tmp_path / 'mab.ckpt')
    with pytest.raises(CheckpointError, match="does not match"):
        controller(n_ue=3).load(tmp_path / 'mab.ckpt')
