"""The outer training loop: interleaved collection and the three update
procedures (latent diffusion model, reward/termination model, actor-critic),
optimizer and warm-up management, and exact-resume checkpointing.

Epoch structure: collect experience, then the diffusion-model updates, then
reward/end updates, then actor-critic updates. Encoder parameters are updated
by the first two procedures only; the actor-critic consumes detached latents.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .ablations import VariantConfig, apply_variant
from .agent import ActorCritic, act, imagine, lambda_returns, reinforce_loss
from .config import Config
from .core import ReplayBuffer, Transition
from .envs import make_env
from .nn import AdamW, linear_warmup
from .rewardend import RewardEndModel, reward_end_loss
from .tensor import Tensor
from .worldmodel import Denoiser, Encoder, encode

CHECKPOINT_MAGIC = b"DWMCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def _canonical(obj):
    """Value-only encoding of the checkpoint tree: numpy arrays become
    (tag, dtype, shape, bytes) tuples built fresh, so serialized bytes depend
    only on state values, never on incidental object aliasing."""
    if isinstance(obj, np.ndarray):
        a = np.ascontiguousarray(obj)
        return ("__nd__", a.dtype.str, a.shape, a.tobytes())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        kind = "__tuple__" if isinstance(obj, tuple) else "__list__"
        return (kind, [_canonical(v) for v in obj])
    if obj is None or isinstance(obj, (bool, int, float, str, bytes)):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__} into a checkpoint")


def _decanonical(obj):
    if isinstance(obj, dict):
        return {k: _decanonical(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        if obj and obj[0] == "__nd__":
            _, dtype, shape, raw = obj
            return np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(shape).copy()
        if obj and obj[0] == "__tuple__":
            return tuple(_decanonical(v) for v in obj[1])
        if obj and obj[0] == "__list__":
            return [_decanonical(v) for v in obj[1]]
    return obj


@dataclass
class EpochMetrics:
    epoch: int
    diffusion_loss: list = field(default_factory=list)
    reward_end_loss: list = field(default_factory=list)
    policy_loss: list = field(default_factory=list)
    value_loss: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    env_steps_total: int = 0

    def records(self):
        """Flatten to (epoch, step, name, value) rows for the metrics stream."""
        rows = []
        for name in ("diffusion_loss", "reward_end_loss", "policy_loss", "value_loss"):
            for i, v in enumerate(getattr(self, name)):
                rows.append({"epoch": self.epoch, "step": i, "name": name,
                             "value": float(v)})
        for i, v in enumerate(self.episode_returns):
            rows.append({"epoch": self.epoch, "step": i, "name": "episode_return",
                         "value": float(v)})
        rows.append({"epoch": self.epoch, "step": 0, "name": "env_steps_total",
                     "value": float(self.env_steps_total)})
        return rows


class Trainer:
    def __init__(self, cfg: Config):
        self.cfg = cfg
        seed = cfg["run.seed"]
        ss = np.random.SeedSequence(seed)
        (init_ss, env_ss, collect_ss, diff_ss, rwd_ss, ac_ss, eval_ss) = ss.spawn(7)
        self.rngs = {
            "collect": np.random.default_rng(collect_ss),
            "diffusion": np.random.default_rng(diff_ss),
            "rewardend": np.random.default_rng(rwd_ss),
            "actor": np.random.default_rng(ac_ss),
            "eval": np.random.default_rng(eval_ss),
        }
        self._env_seed = int(np.random.default_rng(env_ss).integers(2 ** 31))
        init_rng = np.random.default_rng(init_ss)

        self.env = make_env(seed=None, **cfg.env_kwargs())
        obs_hw = cfg["env.obs_size"]
        enc_cfg = cfg.encoder_config()
        self.latent_hw = enc_cfg.latent_hw(obs_hw)
        self.latent_channels = enc_cfg.latent_channels
        num_actions = self.env.num_actions

        self.encoder = Encoder(enc_cfg, init_rng)
        self.denoiser = Denoiser(cfg.denoiser_config(), self.latent_channels,
                                 num_actions, init_rng,
                                 clamp_scale=enc_cfg.clamp_scale)
        self.rewardend = RewardEndModel(cfg.rewardend_config(), self.latent_channels,
                                        self.latent_hw, num_actions, init_rng)
        self.agent_cfg = cfg.agent_config()
        latent_dim = self.latent_channels * self.latent_hw * self.latent_hw
        self.policy = ActorCritic(self.agent_cfg, latent_dim, num_actions, init_rng)

        self.params = cfg.edm_params()
        variant = VariantConfig(
            latent_mode=cfg["variant.latent_mode"],
            switch_mode=cfg["variant.switch_mode"],
            clamp_enabled=cfg["variant.clamp_enabled"],
            ema_target=cfg["variant.ema_target"],
            ema_decay=cfg["variant.ema_decay"],
            bottleneck_weight=cfg["variant.bottleneck_weight"],
        )
        self.graph = apply_variant(variant, self.encoder, self.denoiser,
                                   self.params, init_rng)

        wd_wm = cfg["optim.weight_decay_world_model"]
        wd_re = cfg["optim.weight_decay_reward_end"]
        wd_ac = cfg["optim.weight_decay_actor_critic"]
        enc_scale = cfg["optim.encoder_lr_scale"]
        diff_groups = [
            {"params": self.denoiser.parameters(), "weight_decay": wd_wm},
            {"params": self.encoder.parameters(), "lr_scale": enc_scale,
             "weight_decay": wd_wm},
        ]
        extra = self.graph.extra_parameters()
        if extra:
            diff_groups.append({"params": extra, "weight_decay": wd_wm})
        self.opt_diffusion = AdamW(diff_groups)
        # the encoder also learns from the reward/end loss; it keeps its
        # reduced learning rate there as well
        self.opt_rewardend = AdamW([
            {"params": self.rewardend.parameters(), "weight_decay": wd_re},
            {"params": self.encoder.parameters(), "lr_scale": enc_scale,
             "weight_decay": wd_re},
        ])
        self.opt_actor = AdamW([
            {"params": self.policy.parameters(), "weight_decay": wd_ac},
        ])

        capacity = cfg["run.buffer_capacity"] or None
        self.buffer = ReplayBuffer(capacity=capacity, noop_action=0)
        self.epoch = 0
        self._switch_state = None
        self._pending_handles = None
        # collector continuity across epochs
        self._collect_obs = None
        self._collect_pol_state = None
        self._collect_return = 0.0

    # -- small helpers ------------------------------------------------------
    @property
    def history_len(self) -> int:
        return self.denoiser.cfg.history_len

    def _lr(self, optimizer: AdamW, warmup: int) -> float:
        return linear_warmup(optimizer.t + 1, warmup, self.cfg["optim.lr"])

    def _encode_np(self, obs_batch: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return encode(obs_batch, self.encoder).data

    # -- Alg procedures -----------------------------------------------------
    def collect_experience(self, n: int, eps: float | None = None) -> list[float]:
        """Run the current policy in the real environment for n decisions,
        pushing transitions; returns the episodic returns completed."""
        if n <= 0:
            return []
        eps = self.agent_cfg.eps_greedy if eps is None else eps
        rng = self.rngs["collect"]
        if self._collect_obs is None:
            self._collect_obs = self.env.reset(seed=self._env_seed)
            self._collect_pol_state = self.policy.zero_state(1)
            self._collect_return = 0.0
        completed = []
        for _ in range(n):
            z = self._encode_np(self._collect_obs[None])[0]
            a, _, _, _, self._collect_pol_state = act(
                z, self._collect_pol_state, self.policy, rng)
            if eps > 0 and rng.random() < eps:
                a = int(rng.integers(self.env.num_actions))
            obs_next, reward, done = self.env.step(a)
            self.buffer.push(Transition(obs=self._collect_obs, action=a,
                                        reward=reward, done=done))
            self._collect_return += reward
            if done:
                completed.append(self._collect_return)
                self._collect_obs = self.env.reset()
                self._collect_pol_state = self.policy.zero_state(1)
                self._collect_return = 0.0
            else:
                self._collect_obs = obs_next
        return completed

    def _sample_batch(self, batch: int, prefix: int, suffix: int):
        rng_name = "diffusion"
        segs, handles = [], []
        for _ in range(batch):
            seg, handle = self.buffer.sample_segment_with_handle(
                prefix, suffix, self.rngs[rng_name])
            segs.append(seg)
            handles.append(handle)
        return segs, handles

    def _stack_segments(self, segs):
        obs = np.stack([s.observations for s in segs])
        acts = np.stack([s.actions for s in segs])
        rews = np.stack([s.rewards for s in segs])
        dones = np.stack([s.dones for s in segs])
        return obs, acts, rews, dones

    def diffusion_step(self) -> float:
        L = self.history_len
        batch = self.cfg["run.denoiser_batch"]
        switch_state = None
        segs = None
        if self._pending_handles is not None and self._switch_state is not None:
            advanced = [self.buffer.advance_handle(h, L, 1)
                        for h in self._pending_handles]
            if all(a is not None for a in advanced) and len(advanced) == batch:
                segs = [a[0] for a in advanced]
                handles = [a[1] for a in advanced]
                switch_state = self._switch_state
        if segs is None:
            segs, handles = self._sample_batch(batch, L, 1)
        obs, acts, _, _ = self._stack_segments(segs)
        loss, diag, new_state = self.graph.diffusion_loss(
            obs, acts, self.rngs["diffusion"], switch_state)
        self.opt_diffusion.zero_grad()
        loss.backward()
        self.opt_diffusion.step(self._lr(self.opt_diffusion,
                                         self.cfg["optim.warmup_denoiser"]),
                                grad_clip=self.cfg["run.grad_clip"])
        self.graph.after_step()
        if new_state.cached_latent is not None:
            self._switch_state = new_state
            self._pending_handles = handles
        else:
            self._switch_state = None
            self._pending_handles = None
        return loss.item()

    def rewardend_step(self) -> float:
        rcfg = self.rewardend.cfg
        batch = self.cfg["run.other_batch"]
        segs = [self.buffer.sample_segment(rcfg.burn_in, rcfg.horizon,
                                           self.rngs["rewardend"])
                for _ in range(batch)]
        obs, acts, rews, dones = self._stack_segments(segs)
        loss = reward_end_loss(obs, acts, rews, dones, self.encoder, self.rewardend)
        self.opt_rewardend.zero_grad()
        loss.backward()
        self.opt_rewardend.step(self._lr(self.opt_rewardend,
                                         self.cfg["optim.warmup_reward_end"]),
                                grad_clip=self.cfg["run.grad_clip"])
        return loss.item()

    def actor_step(self) -> tuple[float, float]:
        L = self.agent_cfg.burn_in
        batch = self.cfg["run.other_batch"]
        segs = [self.buffer.sample_segment(max(L - 1, 0), 1, self.rngs["actor"])
                for _ in range(batch)]
        obs, acts, _, _ = self._stack_segments(segs)
        b, n = acts.shape
        flat = self._encode_np(obs.reshape(b * n, *obs.shape[2:]))
        start_latents = flat.reshape(b, n, *flat.shape[1:])
        rollout = imagine(start_latents, acts, self.denoiser, self.rewardend,
                          self.policy, self.agent_cfg, self.params,
                          self.rngs["actor"],
                          sample_mode=self.cfg["rewardend.sample_mode"])
        returns = lambda_returns(rollout.rewards, rollout.values, rollout.dones,
                                 self.agent_cfg.gamma, self.agent_cfg.lambda_coef)
        policy_loss, value_loss = reinforce_loss(rollout, returns, self.policy,
                                                 self.agent_cfg)
        total = policy_loss + value_loss
        self.opt_actor.zero_grad()
        total.backward()
        self.opt_actor.step(self._lr(self.opt_actor,
                                     self.cfg["optim.warmup_actor_critic"]),
                            grad_clip=self.cfg["run.grad_clip"])
        return policy_loss.item(), value_loss.item()

    def train_epoch(self) -> EpochMetrics:
        self.epoch += 1
        metrics = EpochMetrics(epoch=self.epoch)
        metrics.episode_returns = self.collect_experience(
            self.cfg["run.env_steps_per_epoch"])
        n_diff, n_rwd, n_ac = self.cfg.procedure_steps()
        for _ in range(n_diff):
            metrics.diffusion_loss.append(self.diffusion_step())
        for _ in range(n_rwd):
            metrics.reward_end_loss.append(self.rewardend_step())
        for _ in range(n_ac):
            pl, vl = self.actor_step()
            metrics.policy_loss.append(pl)
            metrics.value_loss.append(vl)
        metrics.env_steps_total = self.env.total_steps
        return metrics

    def run(self, epochs: int | None = None, on_epoch=None) -> list[EpochMetrics]:
        epochs = self.cfg["run.num_epochs"] if epochs is None else epochs
        out = []
        while self.epoch < epochs:
            m = self.train_epoch()
            out.append(m)
            if on_epoch is not None:
                on_epoch(m)
        return out

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, episodes: int, seed: int = 1234,
                 greedy: bool = False) -> list[float]:
        """Fresh-environment rollouts of the current policy."""
        env = make_env(seed=None, **self.cfg.env_kwargs())
        rng = self.rngs["eval"]
        returns = []
        for ep in range(episodes):
            obs = env.reset(seed=seed + ep)
            state = self.policy.zero_state(1)
            total, done = 0.0, False
            while not done:
                z = self._encode_np(obs[None])
                with T.no_grad():
                    logits, _, state = self.policy.step(
                        Tensor(z.reshape(1, -1)), state)
                if greedy:
                    a = int(logits.data.argmax())
                else:
                    p = np.exp(logits.data[0] - logits.data[0].max())
                    p /= p.sum()
                    a = min(int((p.cumsum() < rng.random()).sum()),
                            env.num_actions - 1)
                obs, r, done = env.step(a)
                total += r
            returns.append(total)
        return returns

    # -- checkpointing ------------------------------------------------------
    def _state_dict(self) -> dict:
        return {
            "config": self.cfg.as_dict(),
            "profile": self.cfg.profile,
            "epoch": self.epoch,
            "nets": {
                "encoder": self.encoder.state_dict(),
                "denoiser": self.denoiser.state_dict(),
                "rewardend": self.rewardend.state_dict(),
                "policy": self.policy.state_dict(),
                "decoder": (self.graph.decoder.state_dict()
                            if self.graph.decoder is not None else None),
                "target_encoder": (self.graph.target_encoder.state_dict()
                                   if self.graph.target_encoder is not None else None),
            },
            "optim": {
                "diffusion": self.opt_diffusion.state_dict(),
                "rewardend": self.opt_rewardend.state_dict(),
                "actor": self.opt_actor.state_dict(),
            },
            "rngs": {k: v.bit_generator.state for k, v in self.rngs.items()},
            "env_seed": self._env_seed,
            "env_state": self.env.get_state(),
            "buffer": self.buffer.state_dict(),
            "switch_cache": (None if self._switch_state is None
                             else self._switch_state.cached_latent),
            "pending_handles": self._pending_handles,
            "alternate_flag": self.graph._alternate_flag,
            "collector": {
                "obs": self._collect_obs,
                "pol_state": (None if self._collect_pol_state is None else
                              (self._collect_pol_state[0].data,
                               self._collect_pol_state[1].data)),
                "ep_return": self._collect_return,
            },
        }

    def save_checkpoint(self, path):
        payload = CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION]) + \
            pickle.dumps(_canonical(self._state_dict()), protocol=4)
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(payload)
        tmp.replace(path)

    @classmethod
    def load_checkpoint(cls, path) -> "Trainer":
        raw = Path(path).read_bytes()
        if not raw.startswith(CHECKPOINT_MAGIC):
            raise CheckpointError("not a checkpoint file (bad magic)")
        version = raw[len(CHECKPOINT_MAGIC)]
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {version} unsupported "
                                  f"(expected {CHECKPOINT_VERSION})")
        try:
            state = _decanonical(pickle.loads(raw[len(CHECKPOINT_MAGIC) + 1:]))
        except Exception as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from None
        cfg = Config(profile=state["profile"])
        cfg.update(state["config"])
        trainer = cls(cfg)
        trainer.epoch = state["epoch"]
        trainer.encoder.load_state_dict(state["nets"]["encoder"])
        trainer.denoiser.load_state_dict(state["nets"]["denoiser"])
        trainer.rewardend.load_state_dict(state["nets"]["rewardend"])
        trainer.policy.load_state_dict(state["nets"]["policy"])
        if state["nets"]["decoder"] is not None:
            trainer.graph.decoder.load_state_dict(state["nets"]["decoder"])
        if state["nets"]["target_encoder"] is not None:
            trainer.graph.target_encoder.load_state_dict(state["nets"]["target_encoder"])
        trainer.opt_diffusion.load_state_dict(state["optim"]["diffusion"])
        trainer.opt_rewardend.load_state_dict(state["optim"]["rewardend"])
        trainer.opt_actor.load_state_dict(state["optim"]["actor"])
        for name, rng_state in state["rngs"].items():
            trainer.rngs[name].bit_generator.state = rng_state
        trainer._env_seed = state["env_seed"]
        trainer.env.set_state(state["env_state"])
        trainer.buffer = ReplayBuffer.from_state(state["buffer"])
        if state["switch_cache"] is not None:
            from .worldmodel import SwitchState
            trainer._switch_state = SwitchState(cached_latent=state["switch_cache"])
        trainer._pending_handles = state["pending_handles"]
        trainer.graph._alternate_flag = state["alternate_flag"]
        col = state["collector"]
        trainer._collect_obs = col["obs"]
        if col["pol_state"] is not None:
            trainer._collect_pol_state = (Tensor(col["pol_state"][0]),
                                          Tensor(col["pol_state"][1]))
        trainer._collect_return = col["ep_return"]
        return trainer
