"""Domain types, the replay buffer, and trajectory segment sampling.

The buffer stores transitions grouped into episodes and never lets a sampled
window straddle an episode boundary. Windows whose conditioning prefix would
reach before the episode start are left-padded by repeating the first frame
with a designated no-op action (the usual burn-in convention).

Concurrency: one writer (the collector) and any number of readers. Pushes
append fully constructed transitions, so under CPython's memory model readers
never observe a partially written transition. All value types are immutable
in practice and freely shareable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BufferTooSmall(Exception):
    """No valid sampling window of the requested length exists."""


@dataclass(frozen=True)
class Observation:
    pixels: np.ndarray  # (H, W, 3), values in [0, 1]

    def validate(self):
        if self.pixels.ndim != 3 or self.pixels.shape[-1] != 3:
            raise ValueError(f"observation must be (H, W, 3), got {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("observation values must lie in [0, 1]")
        return self


@dataclass(frozen=True)
class LatentState:
    values: np.ndarray  # (C, h, w), values in [-scale, scale]
    scale: float = 3.0

    def validate(self):
        if np.abs(self.values).max() > self.scale + 1e-9:
            raise ValueError("latent values exceed the clamp range")
        return self


@dataclass(frozen=True)
class NoisedLatent:
    values: np.ndarray
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class ConditioningTuple:
    """Denoiser conditioning: noise embedding, last L latents, last L actions.

    ``past_latents`` has shape (..., L, C, h, w) and ``past_actions``
    (..., L); leading dims are batch dims.
    """

    noise_embedding: float | np.ndarray
    past_latents: np.ndarray
    past_actions: np.ndarray

    def validate(self, num_actions: int | None = None):
        if self.past_latents.shape[-4] != self.past_actions.shape[-1]:
            raise ValueError("past_latents and past_actions disagree on L")
        if num_actions is not None:
            a = np.asarray(self.past_actions)
            if a.min() < 0 or a.max() >= num_actions:
                raise ValueError("action id out of range")
        return self

    @property
    def history_len(self) -> int:
        return self.past_latents.shape[-4]


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray  # (H, W, 3) pixels in [0, 1]
    action: int
    reward: float
    done: bool

    def validate(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        return self


@dataclass(frozen=True)
class TrajectorySegment:
    """Aligned (obs, action, reward, done) window; action[i] was taken after
    obs[i] and produced reward[i], done[i]. The first ``pad_count`` entries
    are synthetic left-padding."""

    observations: np.ndarray  # (n, H, W, 3)
    actions: np.ndarray       # (n,)
    rewards: np.ndarray       # (n,)
    dones: np.ndarray         # (n,)
    pad_count: int = 0

    def __len__(self):
        return len(self.actions)


@dataclass
class _Episode:
    uid: int
    transitions: list = field(default_factory=list)
    closed: bool = False


class ReplayBuffer:
    """Episode-ordered transition store with uniform window sampling.

    Capacity is counted in transitions; exceeding it evicts the oldest whole
    episodes (the open episode is never split). ``capacity=None`` means
    unbounded.
    """

    def __init__(self, capacity: int | None = None, noop_action: int = 0):
        self.capacity = capacity
        self.noop_action = noop_action
        self._episodes: list[_Episode] = [_Episode(uid=0)]
        self._next_uid = 1
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def num_episodes(self) -> int:
        return sum(1 for ep in self._episodes if ep.transitions)

    def push(self, t: Transition):
        t.validate()
        ep = self._episodes[-1]
        ep.transitions.append(t)
        self._size += 1
        if t.done:
            ep.closed = True
            self._episodes.append(_Episode(uid=self._next_uid))
            self._next_uid += 1
        if self.capacity is not None:
            while self._size > self.capacity and len(self._episodes) > 1 \
                    and self._episodes[0].closed:
                dropped = self._episodes.pop(0)
                self._size -= len(dropped.transitions)

    # -- window enumeration ---------------------------------------------
    def _windows(self, prefix_len: int, suffix_len: int):
        """Yield (episode, anchor) pairs; anchor = index of the first suffix
        element. Episodes long enough yield every unpadded window; shorter
        episodes (>= suffix_len) yield one maximally left-padded window."""
        n = prefix_len + suffix_len
        for ep in self._episodes:
            m = len(ep.transitions)
            if m >= n:
                for s in range(prefix_len, m - suffix_len + 1):
                    yield ep, s
            elif m >= suffix_len:
                yield ep, m - suffix_len

    def count_windows(self, prefix_len: int, suffix_len: int) -> int:
        return sum(1 for _ in self._windows(prefix_len, suffix_len))

    def _build_segment(self, ep: _Episode, anchor: int, prefix_len: int,
                       suffix_len: int) -> TrajectorySegment:
        start = anchor - prefix_len
        pad = max(0, -start)
        real = ep.transitions[max(0, start) : anchor + suffix_len]
        first = ep.transitions[0]
        obs = [first.obs] * pad + [t.obs for t in real]
        actions = [self.noop_action] * pad + [t.action for t in real]
        rewards = [0.0] * pad + [t.reward for t in real]
        dones = [False] * pad + [t.done for t in real]
        return TrajectorySegment(
            observations=np.stack(obs),
            actions=np.asarray(actions, dtype=np.int64),
            rewards=np.asarray(rewards, dtype=np.float64),
            dones=np.asarray(dones, dtype=bool),
            pad_count=pad,
        )

    def sample_segment(self, prefix_len: int, suffix_len: int,
                       rng: np.random.Generator) -> TrajectorySegment:
        seg, _ = self.sample_segment_with_handle(prefix_len, suffix_len, rng)
        return seg

    def sample_segment_with_handle(self, prefix_len: int, suffix_len: int,
                                   rng: np.random.Generator):
        """Sample uniformly over valid windows; also return an opaque handle
        that :meth:`advance_handle` can shift one step forward in time (used
        by the cached-conditioning switch in the diffusion update)."""
        windows = list(self._windows(prefix_len, suffix_len))
        if not windows:
            raise BufferTooSmall(
                f"no window of length {prefix_len}+{suffix_len} available "
                f"(buffer holds {self._size} transitions)"
            )
        ep, anchor = windows[int(rng.integers(len(windows)))]
        seg = self._build_segment(ep, anchor, prefix_len, suffix_len)
        return seg, (ep.uid, anchor)

    def advance_handle(self, handle, prefix_len: int, suffix_len: int):
        """Segment one step later in the same episode, or None if it does not
        exist (episode too short, or evicted)."""
        uid, anchor = handle
        for ep in self._episodes:
            if ep.uid == uid:
                if anchor + 1 + suffix_len <= len(ep.transitions):
                    seg = self._build_segment(ep, anchor + 1, prefix_len, suffix_len)
                    return seg, (uid, anchor + 1)
                return None
        return None

    # -- checkpoint support ------------------------------------------------
    def state_dict(self) -> dict:
        episodes = []
        for ep in self._episodes:
            ts = ep.transitions
            episodes.append({
                "uid": ep.uid,
                "closed": ep.closed,
                "obs": (np.stack([t.obs for t in ts]) if ts
                        else np.zeros((0,), dtype=np.float64)),
                "actions": np.asarray([t.action for t in ts], dtype=np.int64),
                "rewards": np.asarray([t.reward for t in ts], dtype=np.float64),
                "dones": np.asarray([t.done for t in ts], dtype=bool),
            })
        return {"capacity": self.capacity, "noop_action": self.noop_action,
                "next_uid": self._next_uid, "episodes": episodes}

    @classmethod
    def from_state(cls, state: dict) -> "ReplayBuffer":
        buf = cls(capacity=state["capacity"], noop_action=state["noop_action"])
        buf._next_uid = state["next_uid"]
        buf._episodes = []
        buf._size = 0
        for ep_state in state["episodes"]:
            ep = _Episode(uid=ep_state["uid"], closed=ep_state["closed"])
            n = len(ep_state["actions"])
            for i in range(n):
                ep.transitions.append(Transition(
                    obs=ep_state["obs"][i],
                    action=int(ep_state["actions"][i]),
                    reward=float(ep_state["rewards"][i]),
                    done=bool(ep_state["dones"][i]),
                ))
            buf._size += n
            buf._episodes.append(ep)
        if not buf._episodes:
            buf._episodes = [_Episode(uid=0)]
        return buf
