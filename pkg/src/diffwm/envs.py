"""Toy pixel environments standing in for the full arcade suite at desk scale.

Two sprite worlds, each deterministic given (seed, action sequence):

* ``dot-collect`` — 4 actions; a sprite collects a respawning target on a
  small grid; dense +1 rewards; no hazards, so episodes end only at the
  decision limit.
* ``dot-shooter`` — the full 18-action composite set (9 move directions with
  and without FIRE); enemies descend and respawn, projectiles destroy them
  for +1, and an enemy reaching the agent ends the episode with -1.

Both are wrapped in a frameskip adapter that repeats the chosen action for k
frames (fixed k, or k drawn uniformly from a range per decision for the
stochastic variant), sums the per-frame rewards, and clips the sum to
{-1, 0, +1}. The wrapper also enforces the decision limit.

Adapter contract for plugging in external environments: expose
``num_actions``, ``obs_shape``, ``reset(seed) -> obs`` and
``step(action) -> (obs, reward, done)`` with float pixels in [0, 1]; anything
with that surface can be trained against in place of the bundled worlds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BG = np.array([0.08, 0.08, 0.12])
AGENT = np.array([0.20, 0.90, 0.90])
TARGET = np.array([1.00, 0.60, 0.10])
ENEMY = np.array([0.90, 0.20, 0.20])
SHOT = np.array([1.00, 1.00, 0.40])

# composite action set: 9 movement directions x {no fire, fire}
MOVES = np.array([
    (0, 0), (-1, 0), (0, 1), (0, -1), (1, 0),
    (-1, 1), (-1, -1), (1, 1), (1, -1),
])


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_hw: int
    num_actions: int
    max_episode_len: int         # decisions, not frames
    frameskip: int | tuple       # fixed k, or inclusive (lo, hi) range

    def __post_init__(self):
        if self.num_actions < 2:
            raise ValueError("need at least 2 actions")
        if isinstance(self.frameskip, tuple) and self.frameskip[0] > self.frameskip[1]:
            raise ValueError("frameskip range must satisfy lo <= hi")


class _GridRenderer:
    def __init__(self, obs_hw: int, grid: int):
        self.obs_hw = obs_hw
        self.grid = grid
        self.cell = max(1, obs_hw // grid)
        self.margin = (obs_hw - self.cell * grid) // 2

    def blank(self) -> np.ndarray:
        obs = np.empty((self.obs_hw, self.obs_hw, 3))
        obs[:] = BG
        return obs

    def fill(self, obs, r, c, color, inset: int = 0):
        y = self.margin + r * self.cell
        x = self.margin + c * self.cell
        obs[y + inset : y + self.cell - inset, x + inset : x + self.cell - inset] = color


class DotCollectCore:
    """Inner per-frame world. Sprites advance one cell every ``move_period``
    frames, so at the default frameskip each decision moves exactly one cell,
    while a stochastic skip draw varies how far a decision carries."""

    num_actions = 4  # up, down, left, right

    def __init__(self, grid: int, rng: np.random.Generator, move_period: int = 4):
        self.grid = grid
        self.rng = rng
        self.move_period = move_period
        self.agent = (0, 0)
        self.target = (0, 0)
        self.frame = 0

    def reset(self):
        g = self.grid
        self.agent = tuple(int(v) for v in self.rng.integers(0, g, size=2))
        self._respawn_target()
        self.frame = 0
        return 0.0, False

    def _respawn_target(self):
        g = self.grid
        while True:
            t = tuple(int(v) for v in self.rng.integers(0, g, size=2))
            if t != self.agent:
                self.target = t
                return

    def frame_step(self, action: int):
        self.frame += 1
        if self.frame % self.move_period:
            return 0.0, False
        dr, dc = [(-1, 0), (1, 0), (0, -1), (0, 1)][action]
        g = self.grid
        self.agent = (min(max(self.agent[0] + dr, 0), g - 1),
                      min(max(self.agent[1] + dc, 0), g - 1))
        reward = 0.0
        if self.agent == self.target:
            reward = 1.0
            self._respawn_target()
        return reward, False

    def render(self, renderer: _GridRenderer) -> np.ndarray:
        obs = renderer.blank()
        renderer.fill(obs, *self.target, TARGET)
        renderer.fill(obs, *self.agent, AGENT)
        return obs

    def get_state(self) -> dict:
        return {"agent": self.agent, "target": self.target, "frame": self.frame,
                "rng": self.rng.bit_generator.state}

    def set_state(self, state: dict):
        self.agent = tuple(state["agent"])
        self.target = tuple(state["target"])
        self.frame = int(state["frame"])
        self.rng.bit_generator.state = state["rng"]


class DotShooterCore:
    """Inner per-frame world with descending enemies and a FIRE mechanic.

    The agent and its projectiles act every ``move_period`` frames; enemies
    descend on the slower ``enemy_period`` cadence."""

    num_actions = 18

    def __init__(self, grid: int, rng: np.random.Generator, n_enemies: int = 2,
                 move_period: int = 4, enemy_period: int = 12):
        self.grid = grid
        self.rng = rng
        self.n_enemies = n_enemies
        self.move_period = move_period
        self.enemy_period = enemy_period
        self.agent = (grid - 1, 0)
        self.enemies: list[tuple[int, int]] = []
        self.shots: list[tuple[int, int]] = []
        self.frame = 0

    def reset(self):
        g = self.grid
        self.agent = (g - 1, int(self.rng.integers(0, g)))
        self.enemies = [self._spawn_enemy() for _ in range(self.n_enemies)]
        self.shots = []
        self.frame = 0
        return 0.0, False

    def _spawn_enemy(self):
        return (0, int(self.rng.integers(0, self.grid)))

    def frame_step(self, action: int):
        g = self.grid
        self.frame += 1
        reward = 0.0
        if self.frame % self.move_period == 0:
            move = MOVES[action % 9]
            fire = action >= 9
            self.agent = (min(max(self.agent[0] + int(move[0]), g - 2), g - 1),
                          min(max(self.agent[1] + int(move[1]), 0), g - 1))
            if fire and len(self.shots) < 2:
                self.shots.append((self.agent[0] - 1, self.agent[1]))
            # advance shots, resolve hits (a shot sweeps the cells it passes)
            new_shots = []
            for (r, c) in self.shots:
                r -= 1
                hit = None
                for i, (er, ec) in enumerate(self.enemies):
                    if er >= r and ec == c:
                        hit = i
                        break
                if hit is not None:
                    reward += 1.0
                    self.enemies[hit] = self._spawn_enemy()
                elif r >= 0:
                    new_shots.append((r, c))
            self.shots = new_shots
        done = False
        if self.frame % self.enemy_period == 0:
            for i, (er, ec) in enumerate(self.enemies):
                er += 1
                if er >= self.agent[0]:
                    if ec == self.agent[1]:
                        reward -= 1.0
                        done = True
                    self.enemies[i] = self._spawn_enemy()
                else:
                    self.enemies[i] = (er, ec)
        return reward, done

    def render(self, renderer: _GridRenderer) -> np.ndarray:
        obs = renderer.blank()
        for e in self.enemies:
            renderer.fill(obs, *e, ENEMY)
        for s in self.shots:
            if s[0] >= 0:
                renderer.fill(obs, *s, SHOT, inset=max(0, renderer.cell // 3))
        renderer.fill(obs, *self.agent, AGENT)
        return obs

    def get_state(self) -> dict:
        return {"agent": self.agent, "enemies": list(self.enemies),
                "shots": list(self.shots), "frame": self.frame,
                "rng": self.rng.bit_generator.state}

    def set_state(self, state: dict):
        self.agent = tuple(state["agent"])
        self.enemies = [tuple(e) for e in state["enemies"]]
        self.shots = [tuple(s) for s in state["shots"]]
        self.frame = int(state["frame"])
        self.rng.bit_generator.state = state["rng"]


class FrameskipEnv:
    """Public environment: frameskip, reward clipping, decision limit.

    ``frameskip`` is a fixed int or an inclusive (lo, hi) range sampled per
    decision. ``skip_sequence`` (tests only) overrides the draws entirely.
    """

    def __init__(self, core, renderer: _GridRenderer, spec: EnvSpec, seed: int | None,
                 skip_sequence=None):
        self.core = core
        self.renderer = renderer
        self.spec = spec
        self._skip_iter = iter(skip_sequence) if skip_sequence is not None else None
        self._skip_rng = None
        self._decisions = 0
        self._done = True
        self._seed = seed
        self.total_steps = 0  # lifetime decision count, across episodes

    @property
    def num_actions(self) -> int:
        return self.core.num_actions

    @property
    def obs_shape(self) -> tuple:
        return (self.spec.obs_hw, self.spec.obs_hw, 3)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._seed = seed
        if self._seed is not None:
            ss = np.random.SeedSequence(self._seed)
            core_seed, skip_seed = ss.spawn(2)
            self.core.rng = np.random.default_rng(core_seed)
            self._skip_rng = np.random.default_rng(skip_seed)
            self._seed = None  # subsequent resets continue the streams
        elif self._skip_rng is None:
            raise RuntimeError("environment must be seeded on first reset")
        self.core.reset()
        self._decisions = 0
        self._done = False
        return self.core.render(self.renderer)

    def _draw_skip(self) -> int:
        if self._skip_iter is not None:
            return int(next(self._skip_iter))
        fs = self.spec.frameskip
        if isinstance(fs, tuple):
            lo, hi = fs
            return int(self._skip_rng.integers(lo, hi + 1))
        return int(fs)

    def step(self, action: int):
        if self._done:
            raise RuntimeError("step() called on a finished episode; reset() first")
        if not (0 <= action < self.num_actions):
            raise ValueError(f"action {action} out of range")
        k = self._draw_skip()
        total = 0.0
        done = False
        for _ in range(k):
            r, done = self.core.frame_step(action)
            total += r
            if done:
                break
        self._decisions += 1
        self.total_steps += 1
        if self._decisions >= self.spec.max_episode_len:
            done = True
        reward = float(np.sign(total))  # clip summed reward to {-1, 0, 1}
        self._done = done
        return self.core.render(self.renderer), reward, done

    def get_state(self) -> dict:
        return {
            "core": self.core.get_state(),
            "skip_rng": None if self._skip_rng is None else self._skip_rng.bit_generator.state,
            "decisions": self._decisions,
            "done": self._done,
            "total_steps": self.total_steps,
        }

    def set_state(self, state: dict):
        self.core.set_state(state["core"])
        if state["skip_rng"] is not None:
            if self._skip_rng is None:
                self._skip_rng = np.random.default_rng(0)
            self._skip_rng.bit_generator.state = state["skip_rng"]
        self._decisions = int(state["decisions"])
        self._done = bool(state["done"])
        self.total_steps = int(state["total_steps"])
        self._seed = None

    def render_current(self) -> np.ndarray:
        return self.core.render(self.renderer)


ENV_NAMES = ("dot-collect", "dot-shooter")


def make_env(name: str, obs_size: int = 64, grid_size: int = 8, frameskip: int = 4,
             stochastic: bool = False, frameskip_range: tuple = (2, 6),
             max_episode_len: int = 100, seed: int | None = 0,
             n_enemies: int = 2, move_period: int = 4, skip_sequence=None) -> FrameskipEnv:
    rng = np.random.default_rng(0)  # replaced on first seeded reset
    renderer = _GridRenderer(obs_size, grid_size)
    if name == "dot-collect":
        core = DotCollectCore(grid_size, rng, move_period=move_period)
    elif name == "dot-shooter":
        core = DotShooterCore(grid_size, rng, n_enemies=n_enemies,
                              move_period=move_period)
    else:
        raise ValueError(f"unknown env {name!r}; available: {ENV_NAMES}")
    fs = tuple(frameskip_range) if stochastic else int(frameskip)
    spec = EnvSpec(name=name, obs_hw=obs_size, num_actions=core.num_actions,
                   max_episode_len=max_episode_len, frameskip=fs)
    return FrameskipEnv(core, renderer, spec, seed=seed, skip_sequence=skip_sequence)


# ---------------------------------------------------------------------------
# scripted reference policies and anchor scores


def scripted_action(env: FrameskipEnv) -> int:
    """Hand-written competent policy, used to produce the reference anchor."""
    core = env.core
    if isinstance(core, DotCollectCore):
        ar, ac = core.agent
        tr, tc = core.target
        if ar != tr:
            return 0 if tr < ar else 1
        return 2 if tc < ac else 3
    if isinstance(core, DotShooterCore):
        ar, ac = core.agent
        # nearest enemy by column distance
        er, ec = min(core.enemies, key=lambda e: (abs(e[1] - ac), e[0]))
        if ec == ac:
            return 9  # stay + FIRE
        move_dc = 1 if ec > ac else -1
        move_idx = 2 if move_dc > 0 else 3
        return move_idx + 9  # move toward the column, firing as we go
    raise ValueError(f"no scripted policy for {type(core).__name__}")


def rollout_return(env: FrameskipEnv, policy, seed: int, rng: np.random.Generator) -> float:
    env.reset(seed=seed)
    total = 0.0
    done = False
    while not done:
        a = policy(env, rng)
        _, r, done = env.step(a)
        total += r
    return total


def compute_anchors(name: str, episodes: int = 20, seed: int = 0, **env_kwargs) -> dict:
    """Random-policy and scripted-policy mean returns for one env config."""
    rng = np.random.default_rng(seed)
    env = make_env(name, seed=seed, **env_kwargs)
    rand = [rollout_return(env, lambda e, r: int(r.integers(e.num_actions)),
                           seed + 1000 + i, rng) for i in range(episodes)]
    env2 = make_env(name, seed=seed, **env_kwargs)
    ref = [rollout_return(env2, lambda e, r: scripted_action(e),
                          seed + 1000 + i, rng) for i in range(episodes)]
    return {
        "env": name,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in env_kwargs.items()},
        "episodes": episodes,
        "seed": seed,
        "random_mean": float(np.mean(rand)),
        "random_std": float(np.std(rand)),
        "reference_mean": float(np.mean(ref)),
        "reference_std": float(np.std(ref)),
    }


def anchor_key(name: str, obs_size: int, grid_size: int, stochastic: bool) -> str:
    tag = "stoch" if stochastic else "fixed"
    return f"{name}/{obs_size}px/g{grid_size}/{tag}"


def write_anchor_manifest(entries: dict, path):
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_anchor_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def bundled_anchor_manifest() -> dict:
    from importlib import resources
    path = resources.files("diffwm").joinpath("data/anchors.json")
    return json.loads(path.read_text(encoding="utf-8"))
