"""Actor-critic on world-model latents: imagination rollouts, lambda-returns,
and the REINFORCE losses.

The policy and value share a recurrent trunk that consumes the flattened
latent directly (no pixel encoder of its own). Imagination runs forward-only;
the losses afterwards replay the policy/value networks over the recorded
latents, so no gradient can flow into the denoiser, encoder, or reward model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .core import ConditioningTuple
from .diffusion import EdmParams, euler_sample
from .rewardend import sample_reward_done
from .tensor import Tensor


@dataclass(frozen=True)
class AgentConfig:
    horizon: int = 15
    gamma: float = 0.985
    lambda_coef: float = 0.95
    entropy_weight: float = 0.001
    burn_in: int = 4
    lstm_dim: int = 512
    eps_greedy: float = 0.01  # collection only, never imagination
    detach_encoder: bool = True

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must be in (0, 1]")
        if not (0 <= self.lambda_coef <= 1):
            raise ValueError("lambda must be in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


class ActorCritic(nn.Module):
    """Shared LSTM trunk over the flattened latent with policy and value heads."""

    def __init__(self, cfg: AgentConfig, latent_dim: int, num_actions: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.num_actions = num_actions
        self.in_proj = nn.Linear(latent_dim, cfg.lstm_dim, rng, dtype=dtype)
        self.lstm = nn.LSTMCell(cfg.lstm_dim, cfg.lstm_dim, rng, dtype=dtype)
        self.policy_head = nn.Linear(cfg.lstm_dim, num_actions, rng, dtype=dtype)
        self.value_head = nn.Linear(cfg.lstm_dim, 1, rng, dtype=dtype)

    def zero_state(self, batch: int):
        return self.lstm.zero_state(batch)

    def step(self, z_flat: Tensor, state):
        feat = T.silu(self.in_proj(z_flat))
        hs, cs = self.lstm(feat, state)
        logits = self.policy_head(hs)
        value = self.value_head(hs).reshape(hs.shape[0])
        return logits, value, (hs, cs)


def _sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random(size=p.shape[:-1] + (1,))
    idx = (p.cumsum(axis=-1) < u).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)


def _log_probs_entropy(logits: np.ndarray):
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    entropy = -(np.exp(logp) * logp).sum(axis=-1)
    return logp, entropy


def act(z, state, policy: ActorCritic, rng: np.random.Generator):
    """Sample an action from pi(a | z) and advance the recurrent state.

    ``z``: latent (C, h, w) or batch (B, C, h, w). Returns
    (action ids, log-probs, entropies, value estimates, new state), squeezed
    for the unbatched case.
    """
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 3
    if squeeze:
        z = z[None]
    with T.no_grad():
        logits, value, new_state = policy.step(Tensor(z.reshape(z.shape[0], -1)), state)
    actions = _sample_categorical(logits.data, rng)
    logp, entropy = _log_probs_entropy(logits.data)
    picked = np.take_along_axis(logp, actions[:, None], axis=-1)[:, 0]
    if squeeze:
        return int(actions[0]), float(picked[0]), float(entropy[0]), float(value.data[0]), new_state
    return actions, picked, entropy, value.data, new_state


@dataclass
class ImaginedRollout:
    """H-step latent-space rollout. ``latents``/``values`` have H+1 entries;
    everything else has H. Steps after a sampled termination are masked via
    ``alive`` (1.0 while no earlier done has occurred)."""

    latents: np.ndarray      # (B, H+1, C, h, w)
    actions: np.ndarray      # (B, H)
    log_probs: np.ndarray    # (B, H)
    entropies: np.ndarray    # (B, H)
    rewards: np.ndarray      # (B, H)
    dones: np.ndarray        # (B, H)
    values: np.ndarray       # (B, H+1)
    alive: np.ndarray        # (B, H)
    policy_state0: tuple     # (h, c) numpy arrays at imagination start

    def __post_init__(self):
        h = self.actions.shape[1]
        if not (self.latents.shape[1] == h + 1 == self.values.shape[1]):
            raise ValueError("rollout field lengths are inconsistent")


def imagine(start_latents: np.ndarray, start_actions: np.ndarray,
            denoiser, rewardend, policy: ActorCritic, cfg: AgentConfig,
            params: EdmParams, rng: np.random.Generator,
            sample_mode: str = "sample") -> ImaginedRollout:
    """Roll the world model forward H steps under the current policy,
    entirely in latent space.

    ``start_latents``: (B, L, C, h, w) burn-in context from real data;
    ``start_actions``: (B, L) the actions logged with it (the newest one is
    superseded by the policy's own first choice). Next latents come from
    reverse diffusion conditioned on the denoiser's own history length, which
    may be shorter than the burn-in; rewards and terminations come from the
    recurrent head.
    """
    b, L = start_actions.shape
    hist_cond = denoiser.cfg.history_len
    if L < hist_cond:
        raise ValueError(f"burn-in context {L} shorter than the denoiser "
                         f"conditioning history {hist_cond}")
    ch, lh, lw = start_latents.shape[2:]
    hist_lat = [start_latents[:, i] for i in range(L)]
    hist_act = [start_actions[:, i] for i in range(L - 1)]

    with T.no_grad():
        rwd_state = rewardend.zero_state(b)
        pol_state = policy.zero_state(b)
        for i in range(L - 1):
            _, _, rwd_state = rewardend.step(Tensor(hist_lat[i]), hist_act[i], rwd_state)
            _, _, pol_state = policy.step(Tensor(hist_lat[i].reshape(b, -1)), pol_state)

    pol_state0 = (pol_state[0].data.copy(), pol_state[1].data.copy())
    z = hist_lat[-1]
    latents = [z]
    actions, log_probs, entropies, rewards, dones, values, alive_steps = \
        [], [], [], [], [], [], []
    alive = np.ones(b)

    def denoise_fn(noised, cond):
        with T.no_grad():
            return denoiser.denoised(
                Tensor(noised.values), noised.sigma,
                Tensor(cond.past_latents), cond.past_actions, params).data

    for _ in range(cfg.horizon):
        a, logp, ent, val, pol_state = act(z, pol_state, policy, rng)
        with T.no_grad():
            r_logits, d_logits, rwd_state = rewardend.step(Tensor(z), a, rwd_state)
        r, d = sample_reward_done(r_logits.data, d_logits.data, rng, mode=sample_mode)
        hist_act.append(a)
        cond = ConditioningTuple(
            noise_embedding=0.0,
            past_latents=np.stack(hist_lat[-hist_cond:], axis=1),
            past_actions=np.stack(hist_act[-hist_cond:], axis=1),
        )
        z_next = euler_sample(denoise_fn, cond, params, rng,
                              latent_shape=(b, ch, lh, lw),
                              clamp_scale=denoiser.clamp_scale)
        actions.append(a)
        log_probs.append(logp)
        entropies.append(ent)
        rewards.append(r)
        dones.append(d.astype(np.float64))
        values.append(val)
        alive_steps.append(alive.copy())
        alive = alive * (1.0 - d.astype(np.float64))
        hist_lat.append(z_next)
        z = z_next
        latents.append(z)

    with T.no_grad():
        _, v_final, _ = policy.step(Tensor(z.reshape(b, -1)), pol_state)
    values.append(v_final.data)

    return ImaginedRollout(
        latents=np.stack(latents, axis=1),
        actions=np.stack(actions, axis=1),
        log_probs=np.stack(log_probs, axis=1),
        entropies=np.stack(entropies, axis=1),
        rewards=np.stack(rewards, axis=1),
        dones=np.stack(dones, axis=1),
        values=np.stack(values, axis=1),
        alive=np.stack(alive_steps, axis=1),
        policy_state0=pol_state0,
    )


def lambda_returns(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   gamma: float, lam: float) -> np.ndarray:
    """TD(lambda) targets: G_t = r_t + gamma (1 - d_t) [(1 - lam) V_{t+1} +
    lam G_{t+1}], with G_H = V_H. Shapes: rewards/dones (..., H),
    values (..., H+1)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    h = rewards.shape[-1]
    if values.shape[-1] != h + 1 or dones.shape[-1] != h:
        raise ValueError("lambda_returns length mismatch")
    out = np.empty_like(rewards)
    nxt = values[..., -1]
    for t in range(h - 1, -1, -1):
        cont = 1.0 - dones[..., t]
        nxt = rewards[..., t] + gamma * cont * (
            (1.0 - lam) * values[..., t + 1] + lam * nxt)
        out[..., t] = nxt
    return out


def reinforce_loss(rollout: ImaginedRollout, returns: np.ndarray,
                   policy: ActorCritic, cfg: AgentConfig):
    """REINFORCE policy loss with entropy bonus, and squared-error value loss.

    Replays the policy/value networks over the recorded latents; advantages
    and value targets are constants, so the only gradient path is into the
    policy/value parameters.
    """
    b, h = rollout.actions.shape
    state = (Tensor(rollout.policy_state0[0]), Tensor(rollout.policy_state0[1]))
    logit_steps = []
    value_steps = []
    for t in range(h):
        logits, value, state = policy.step(
            Tensor(rollout.latents[:, t].reshape(b, -1)), state)
        logit_steps.append(logits)
        value_steps.append(value)
    logits_all = T.stack(logit_steps, axis=1)          # (B, H, A)
    values_all = T.stack(value_steps, axis=1)          # (B, H)
    logp_all = T.log_softmax(logits_all, axis=-1)
    logp_taken = T.gather_last(logp_all, rollout.actions)
    probs = T.exp(logp_all)
    entropy = -(probs * logp_all).sum(axis=-1)         # (B, H)

    alive = rollout.alive
    denom = max(alive.sum(), 1.0)
    advantages = (returns - rollout.values[:, :h]) * alive
    policy_loss = -(Tensor(advantages) * logp_taken).sum() * (1.0 / denom) \
        - cfg.entropy_weight * (Tensor(alive) * entropy).sum() * (1.0 / denom)
    value_err = values_all - Tensor(returns)
    value_loss = (Tensor(alive) * value_err * value_err).sum() * (1.0 / denom)
    return policy_loss, value_loss
