"""Run configuration: a flat dotted-key document with strict validation.

The defaults are the full-scale training values; the ``desk`` and ``ci``
profiles override them for desk-scale learning runs and fast smoke tests.
Config files are flat JSON objects ``{"agent.gamma": 0.985, ...}``; unknown
keys are rejected by name. CLI overrides use the same dotted keys.
"""

from __future__ import annotations

import json
from pathlib import Path

from .agent import AgentConfig
from .diffusion import EdmParams
from .rewardend import RewardEndConfig
from .worldmodel import DenoiserConfig, EncoderConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    # training loop
    "run.num_epochs": 1000,
    "run.steps_per_epoch": 400,
    "run.env_steps_per_epoch": 100,
    # per-procedure step counts; 0 means "derive by splitting
    # run.steps_per_epoch equally, remainder to the diffusion model"
    "run.steps_diffusion_model": 0,
    "run.steps_reward_end_model": 0,
    "run.steps_actor_critic": 0,
    "run.denoiser_batch": 32,
    "run.other_batch": 32,
    "run.seed": 0,
    "run.grad_clip": 1.0,
    "run.buffer_capacity": 0,          # 0 = unbounded
    "run.checkpoint_every": 0,         # epochs; 0 = final only
    "run.eval_episodes": 10,
    # optimization
    "optim.lr": 1e-4,
    "optim.adam_eps": 1e-8,
    "optim.weight_decay_world_model": 1e-2,
    "optim.weight_decay_reward_end": 1e-2,
    "optim.weight_decay_actor_critic": 0.0,
    "optim.warmup_denoiser": 1000,
    "optim.warmup_reward_end": 100,
    "optim.warmup_actor_critic": 100,
    "optim.encoder_lr_scale": 0.3,
    # diffusion / noise schedule
    "diffusion.sigma_data": 1.0,
    "diffusion.p_mean": -0.4,
    "diffusion.p_std": 1.2,
    "diffusion.num_denoising_steps": 3,
    "diffusion.sigma_min": 2e-3,
    "diffusion.sigma_max": 5.0,
    "diffusion.rho": 7.0,
    "diffusion.s_churn": 0.0,
    # encoder
    "encoder.block_channels": [32, 32, 32, 16],
    "encoder.downsample_flags": [1, 1, 1, 0],
    "encoder.layers_per_block": [1, 1, 1, 1],
    "encoder.clamp_scale": 3.0,
    # denoiser
    "denoiser.res_block_channels": [160],
    "denoiser.layers_per_block": [1],
    "denoiser.cond_dim": 256,
    "denoiser.history_len": 4,
    "denoiser.action_input_planes": False,
    # reward/termination model
    "rewardend.lstm_dim": 512,
    "rewardend.res_block_channels": [32, 32, 32, 32],
    "rewardend.layers_per_block": [2, 2, 2, 2],
    "rewardend.cond_dim": 128,
    "rewardend.burn_in": 4,
    "rewardend.horizon": 15,
    "rewardend.sample_mode": "sample",
    "rewardend.action_input_planes": False,
    # actor-critic
    "agent.horizon": 15,
    "agent.gamma": 0.985,
    "agent.lambda": 0.95,
    "agent.entropy_weight": 0.001,
    "agent.burn_in": 4,
    "agent.lstm_dim": 512,
    "agent.eps_greedy": 0.01,
    "agent.detach_encoder": True,
    # environment
    "env.name": "dot-collect",
    "env.obs_size": 64,
    "env.grid_size": 8,
    "env.frameskip": 4,
    "env.stochastic_frameskip": False,
    "env.frameskip_range": [2, 6],
    "env.max_episode_len": 100,
    "env.n_enemies": 2,
    "env.move_period": 4,
    # configuration-reachable training variants
    "variant.latent_mode": "jedi",     # jedi | mse_loss | no_diff_grad | autoencoder | decoder_grad
    "variant.switch_mode": "random",   # random | deterministic | alternate | never
    "variant.clamp_enabled": True,
    "variant.ema_target": False,
    "variant.ema_decay": 0.995,
    "variant.bottleneck_weight": 0.0,  # optional latent-magnitude regularizer
}

PROFILES = {
    "paper": {},
    "desk": {
        "run.num_epochs": 30,
        "run.steps_per_epoch": 45,
        "run.steps_diffusion_model": 20,
        "run.steps_reward_end_model": 10,
        "run.steps_actor_critic": 15,
        "run.denoiser_batch": 16,
        "run.other_batch": 16,
        "optim.lr": 1e-3,
        "optim.warmup_denoiser": 100,
        "optim.warmup_reward_end": 50,
        "optim.warmup_actor_critic": 50,
        "encoder.block_channels": [8, 16, 16, 16],
        "denoiser.res_block_channels": [64],
        "denoiser.cond_dim": 64,
        "rewardend.lstm_dim": 128,
        "rewardend.res_block_channels": [16, 16],
        "rewardend.layers_per_block": [1, 1],
        "rewardend.cond_dim": 32,
        "rewardend.horizon": 10,
        "rewardend.action_input_planes": True,
        "denoiser.action_input_planes": True,
        "agent.horizon": 10,
        "agent.lstm_dim": 128,
        "env.obs_size": 32,
        "env.grid_size": 6,
        "env.max_episode_len": 100,
    },
    "ci": {
        "run.num_epochs": 2,
        "run.steps_per_epoch": 6,
        "run.steps_diffusion_model": 2,
        "run.steps_reward_end_model": 2,
        "run.steps_actor_critic": 2,
        "run.env_steps_per_epoch": 30,
        "run.denoiser_batch": 2,
        "run.other_batch": 2,
        "optim.warmup_denoiser": 4,
        "optim.warmup_reward_end": 4,
        "optim.warmup_actor_critic": 4,
        "encoder.block_channels": [4, 4, 4, 4],
        "denoiser.res_block_channels": [8],
        "denoiser.cond_dim": 8,
        "denoiser.history_len": 2,
        "rewardend.lstm_dim": 16,
        "rewardend.res_block_channels": [4],
        "rewardend.layers_per_block": [1],
        "rewardend.cond_dim": 8,
        "rewardend.burn_in": 2,
        "rewardend.horizon": 3,
        "agent.horizon": 3,
        "agent.burn_in": 2,
        "agent.lstm_dim": 16,
        "env.obs_size": 32,
        "env.grid_size": 6,
        "env.max_episode_len": 20,
        "run.eval_episodes": 2,
    },
}


def _coerce(key: str, value, template):
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(template, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(template, list):
        if isinstance(value, str):
            value = json.loads(value)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_coerce(key, v, template[0]) for v in value]
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


class Config:
    """Validated flat configuration with typed accessors for each subsystem."""

    def __init__(self, overrides: dict | None = None, profile: str = "paper"):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; available: {sorted(PROFILES)}")
        values = dict(DEFAULTS)
        values.update(PROFILES[profile])
        self.profile = profile
        self._values = values
        if overrides:
            self.update(overrides)

    def update(self, overrides: dict):
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self._values[key] = _coerce(key, value, DEFAULTS[key])

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def as_dict(self) -> dict:
        return dict(self._values)

    # -- file / CLI ingestion -------------------------------------------
    @classmethod
    def from_file(cls, path, profile: str = "paper", overrides: dict | None = None):
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        cfg = cls(profile=profile)
        cfg.update(data)
        if overrides:
            cfg.update(overrides)
        return cfg

    @staticmethod
    def parse_cli_overrides(pairs) -> dict:
        out = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} must look like key=value")
            key, value = pair.split("=", 1)
            try:
                out[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                out[key.strip()] = value.strip()
        return out

    # -- typed subsystem views -------------------------------------------
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            block_channels=tuple(self["encoder.block_channels"]),
            downsample_flags=tuple(self["encoder.downsample_flags"]),
            layers_per_block=tuple(self["encoder.layers_per_block"]),
            clamp_scale=self["encoder.clamp_scale"],
            lr_scale=self["optim.encoder_lr_scale"],
        )

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            res_block_channels=tuple(self["denoiser.res_block_channels"]),
            layers_per_block=tuple(self["denoiser.layers_per_block"]),
            cond_dim=self["denoiser.cond_dim"],
            history_len=self["denoiser.history_len"],
            action_input_planes=self["denoiser.action_input_planes"],
        )

    def rewardend_config(self) -> RewardEndConfig:
        return RewardEndConfig(
            lstm_dim=self["rewardend.lstm_dim"],
            res_block_channels=tuple(self["rewardend.res_block_channels"]),
            layers_per_block=tuple(self["rewardend.layers_per_block"]),
            cond_dim=self["rewardend.cond_dim"],
            burn_in=self["rewardend.burn_in"],
            horizon=self["rewardend.horizon"],
            sample_mode=self["rewardend.sample_mode"],
            action_input_planes=self["rewardend.action_input_planes"],
        )

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            horizon=self["agent.horizon"],
            gamma=self["agent.gamma"],
            lambda_coef=self["agent.lambda"],
            entropy_weight=self["agent.entropy_weight"],
            burn_in=self["agent.burn_in"],
            lstm_dim=self["agent.lstm_dim"],
            eps_greedy=self["agent.eps_greedy"],
            detach_encoder=self["agent.detach_encoder"],
        )

    def edm_params(self) -> EdmParams:
        return EdmParams(
            sigma_data=self["diffusion.sigma_data"],
            p_mean=self["diffusion.p_mean"],
            p_std=self["diffusion.p_std"],
            num_steps=self["diffusion.num_denoising_steps"],
            sigma_min=self["diffusion.sigma_min"],
            sigma_max=self["diffusion.sigma_max"],
            rho=self["diffusion.rho"],
            s_churn=self["diffusion.s_churn"],
        )

    def env_kwargs(self) -> dict:
        return dict(
            name=self["env.name"],
            obs_size=self["env.obs_size"],
            grid_size=self["env.grid_size"],
            frameskip=self["env.frameskip"],
            stochastic=self["env.stochastic_frameskip"],
            frameskip_range=tuple(self["env.frameskip_range"]),
            max_episode_len=self["env.max_episode_len"],
            n_enemies=self["env.n_enemies"],
            move_period=self["env.move_period"],
        )

    def procedure_steps(self) -> tuple[int, int, int]:
        """(diffusion, reward/end, actor-critic) updates per epoch."""
        d = self["run.steps_diffusion_model"]
        r = self["run.steps_reward_end_model"]
        a = self["run.steps_actor_critic"]
        if d or r or a:
            return d, r, a
        total = self["run.steps_per_epoch"]
        base = total // 3
        return total - 2 * base, base, base
