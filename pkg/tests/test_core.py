"""Replay buffer and domain-type contracts."""

import numpy as np
import pytest

from diffwm.core import (BufferTooSmall, ConditioningTuple, LatentState,
                         Observation, ReplayBuffer, Transition)


def _tr(i, done=False, reward=0.0):
    obs = np.full((4, 4, 3), (i % 10) / 10.0)
    return Transition(obs=obs, action=i % 3, reward=reward, done=done)


def _fill_episode(buf, n, start=0, final_done=True):
    for i in range(n):
        buf.push(_tr(start + i, done=(i == n - 1 and final_done)))


def test_push_counts():
    buf = ReplayBuffer()
    assert len(buf) == 0
    buf.push(_tr(0))
    assert len(buf) == 1


def test_eviction_by_whole_episodes():
    buf = ReplayBuffer(capacity=8)
    _fill_episode(buf, 4)   # episode A
    _fill_episode(buf, 4)   # episode B
    _fill_episode(buf, 4)   # episode C -> A must go
    assert len(buf) == 8
    assert buf.num_episodes == 2


def test_eviction_never_splits_open_episode():
    buf = ReplayBuffer(capacity=3)
    _fill_episode(buf, 2)
    for i in range(6):
        buf.push(_tr(i))  # open episode grows beyond capacity
    assert len(buf) == 6  # closed episode evicted; the open one kept whole
    assert buf.num_episodes == 1


def test_windows_never_straddle_episodes():
    buf = ReplayBuffer()
    _fill_episode(buf, 6)
    _fill_episode(buf, 6)
    n_prefix, n_suffix = 2, 2
    windows = list(buf._windows(n_prefix, n_suffix))
    for ep, anchor in windows:
        lo, hi = anchor - n_prefix, anchor + n_suffix - 1
        assert hi < len(ep.transitions)
        # a done may only ever be the final element of a window
        dones = [t.done for t in ep.transitions[max(lo, 0):hi + 1]]
        assert not any(dones[:-1])


def test_unique_window_when_exact_fit(rng):
    buf = ReplayBuffer()
    _fill_episode(buf, 5, final_done=False)  # exactly L+1 with L=4
    assert buf.count_windows(4, 1) == 1
    seg = buf.sample_segment(4, 1, rng)
    assert len(seg) == 5 and seg.pad_count == 0


def test_too_small_raises(rng):
    buf = ReplayBuffer()
    _fill_episode(buf, 3, final_done=False)
    with pytest.raises(BufferTooSmall):
        buf.sample_segment(4, 15, rng)


def test_short_episode_left_padding(rng):
    buf = ReplayBuffer()
    _fill_episode(buf, 3)  # shorter than prefix+suffix
    seg = buf.sample_segment(4, 1, rng)
    assert seg.pad_count == 2
    assert len(seg) == 5
    # padding repeats the first frame with the no-op action and zero reward
    assert np.array_equal(seg.observations[0], seg.observations[1])
    assert seg.actions[0] == buf.noop_action
    assert seg.rewards[0] == 0.0 and not seg.dones[0]


def test_sampling_uniform_over_window_starts(rng):
    buf = ReplayBuffer()
    _fill_episode(buf, 12)
    _fill_episode(buf, 9)
    prefix, suffix = 2, 1
    windows = list(buf._windows(prefix, suffix))
    counts = {i: 0 for i in range(len(windows))}
    index = {(id(ep), a): i for i, (ep, a) in enumerate(windows)}
    n = 10_000
    for _ in range(n):
        seg, handle = buf.sample_segment_with_handle(prefix, suffix, rng)
        ep = next(e for e in buf._episodes if e.uid == handle[0])
        counts[index[(id(ep), handle[1])]] += 1
    expected = n / len(windows)
    for c in counts.values():
        assert abs(c - expected) / expected < 0.25  # +-5% absolute of total mass
        assert abs(c / n - 1 / len(windows)) < 0.05


def test_sampling_deterministic_given_seed():
    buf = ReplayBuffer()
    _fill_episode(buf, 20)
    a = [buf.sample_segment(3, 1, np.random.default_rng(5)).actions.tolist()
         for _ in range(1)]
    b = [buf.sample_segment(3, 1, np.random.default_rng(5)).actions.tolist()
         for _ in range(1)]
    assert a == b


def test_segment_alignment(rng):
    buf = ReplayBuffer()
    for i in range(8):
        buf.push(Transition(obs=np.full((2, 2, 3), i / 10.0), action=i,
                            reward=float(i), done=(i == 7)))
    seg = buf.sample_segment(2, 2, rng)
    base = int(round(seg.observations[0][0, 0, 0] * 10)) if seg.pad_count == 0 else None
    if base is not None:
        assert list(seg.actions) == [base, base + 1, base + 2, base + 3]
        assert list(seg.rewards) == [base, base + 1, base + 2, base + 3]


def test_advance_handle(rng):
    buf = ReplayBuffer()
    _fill_episode(buf, 10)
    seg, handle = buf.sample_segment_with_handle(2, 1, rng)
    advanced = buf.advance_handle(handle, 2, 1)
    if advanced is not None:
        seg2, handle2 = advanced
        assert handle2[1] == handle[1] + 1
        assert np.array_equal(seg2.observations[0], seg.observations[1])
    assert buf.advance_handle((999, 0), 2, 1) is None


def test_buffer_state_roundtrip(rng):
    buf = ReplayBuffer(capacity=100)
    _fill_episode(buf, 7)
    _fill_episode(buf, 4, final_done=False)
    state = buf.state_dict()
    buf2 = ReplayBuffer.from_state(state)
    assert len(buf2) == len(buf)
    assert buf2.count_windows(2, 1) == buf.count_windows(2, 1)
    s1 = buf.sample_segment(2, 1, np.random.default_rng(3))
    s2 = buf2.sample_segment(2, 1, np.random.default_rng(3))
    assert np.array_equal(s1.observations, s2.observations)


def test_type_validation():
    with pytest.raises(ValueError):
        Observation(pixels=np.full((4, 4, 3), 1.5)).validate()
    Observation(pixels=np.zeros((4, 4, 3))).validate()
    with pytest.raises(ValueError):
        LatentState(values=np.full((2, 2, 2), 4.0)).validate()
    with pytest.raises(ValueError):
        Transition(obs=np.zeros((2, 2, 3)), action=0, reward=np.inf, done=False).validate()
    cond = ConditioningTuple(noise_embedding=0.0,
                             past_latents=np.zeros((2, 3, 2, 2)),
                             past_actions=np.zeros((2,), dtype=int))
    assert cond.validate(num_actions=4).history_len == 2
    with pytest.raises(ValueError):
        ConditioningTuple(0.0, np.zeros((2, 3, 2, 2)),
                          np.zeros((3,), dtype=int)).validate()
