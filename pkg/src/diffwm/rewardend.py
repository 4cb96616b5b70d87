"""Recurrent reward and termination model with cross-entropy training.

Per step the model sees the current latent and action, updates an LSTM, and
emits 3-way reward-sign logits ({-1, 0, +1}) plus binary termination logits.
Gradients reach the encoder through the latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor
from .worldmodel import AdaResBlock, encode


@dataclass(frozen=True)
class RewardEndConfig:
    lstm_dim: int = 512
    res_block_channels: tuple = (32, 32, 32, 32)
    layers_per_block: tuple = (2, 2, 2, 2)
    cond_dim: int = 128
    burn_in: int = 4
    horizon: int = 15
    sample_mode: str = "sample"  # or "argmax" during imagination
    # stack a one-hot plane of the current action onto the trunk input in
    # addition to the adaptive group-norm conditioning (small-scale profiles)
    action_input_planes: bool = False

    @property
    def sequence_len(self) -> int:
        return self.burn_in + self.horizon


REWARD_CLASSES = np.array([-1.0, 0.0, 1.0])


def reward_to_class(rewards: np.ndarray) -> np.ndarray:
    """sign(r) mapped to class index: -1 -> 0, 0 -> 1, +1 -> 2."""
    return (np.sign(rewards) + 1).astype(np.int64)


class RewardEndModel(nn.Module):
    def __init__(self, cfg: RewardEndConfig, latent_channels: int, latent_hw: int,
                 num_actions: int, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.num_actions = num_actions
        self.action_emb = nn.Embedding(num_actions, cfg.cond_dim, rng, dtype=dtype)
        c0 = cfg.res_block_channels[0]
        c_in = latent_channels + (num_actions if cfg.action_input_planes else 0)
        self.conv_in = nn.Conv2d(c_in, c0, 3, rng, dtype=dtype)
        blocks = []
        c_prev = c0
        for c, n_layers in zip(cfg.res_block_channels, cfg.layers_per_block):
            for _ in range(n_layers):
                blocks.append(AdaResBlock(c_prev, c, cfg.cond_dim, rng, dtype=dtype))
                c_prev = c
        self.blocks = blocks
        self.flat_proj = nn.Linear(c_prev * latent_hw * latent_hw, cfg.lstm_dim, rng,
                                   dtype=dtype)
        self.lstm = nn.LSTMCell(cfg.lstm_dim, cfg.lstm_dim, rng, dtype=dtype)
        self.reward_head = nn.Linear(cfg.lstm_dim, 3, rng, dtype=dtype)
        self.done_head = nn.Linear(cfg.lstm_dim, 2, rng, dtype=dtype)

    def zero_state(self, batch: int):
        return self.lstm.zero_state(batch)

    def features(self, z: Tensor, actions: np.ndarray) -> Tensor:
        """Convolutional trunk with action conditioning; no recurrence, so
        any (batch, time) flattening may be pushed through in one pass."""
        actions = np.asarray(actions, dtype=np.int64)
        cond = T.silu(self.action_emb(actions))
        if self.cfg.action_input_planes:
            b = z.shape[0]
            planes = np.zeros((b, self.num_actions) + tuple(z.shape[-2:]))
            planes[np.arange(b), actions] = 1.0
            z = T.concat([z, Tensor(planes)], axis=1)
        h = self.conv_in(z)
        for block in self.blocks:
            h = block(h, cond)
        return T.silu(self.flat_proj(h.reshape(h.shape[0], -1)))

    def step(self, z: Tensor, actions: np.ndarray, state):
        """One recurrent step: latent (B, C, h, w) + action ids (B,) ->
        (reward logits (B, 3), done logits (B, 2), new state)."""
        feat = self.features(z, actions)
        hs, cs = self.lstm(feat, state)
        return self.reward_head(hs), self.done_head(hs), (hs, cs)


def reward_end_step(z, action, state, net: RewardEndModel):
    """Forward-only single step on numpy inputs; see :meth:`RewardEndModel.step`."""
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 3
    if squeeze:
        z = z[None]
    actions = np.atleast_1d(np.asarray(action, dtype=np.int64))
    with T.no_grad():
        r_logits, d_logits, new_state = net.step(Tensor(z), actions, state)
    if squeeze:
        return r_logits.data[0], d_logits.data[0], new_state
    return r_logits.data, d_logits.data, new_state


def reward_end_loss(obs_window: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                    dones: np.ndarray, encoder, net: RewardEndModel) -> Tensor:
    """Mean per-step cross entropy of reward sign and termination over a
    (burn_in + horizon)-length window batch.

    ``obs_window``: (B, n, H, W, 3); the recurrent state starts at zero and is
    carried across all n steps; every step contributes to the loss.
    """
    b, n = obs_window.shape[:2]
    expected = net.cfg.sequence_len
    if n != expected:
        raise ValueError(f"segment length {n} != burn_in + horizon = {expected}")
    z_all = encode(obs_window.reshape(b * n, *obs_window.shape[2:]), encoder)
    # the trunk has no recurrence: run it over all (batch, time) positions at
    # once, then unroll only the LSTM
    feats = net.features(z_all, actions.reshape(b * n))
    feats = feats.reshape(b, n, net.cfg.lstm_dim)
    state = net.zero_state(b)
    r_logit_steps = []
    d_logit_steps = []
    for i in range(n):
        hs, cs = net.lstm(feats[:, i], state)
        state = (hs, cs)
        r_logit_steps.append(net.reward_head(hs))
        d_logit_steps.append(net.done_head(hs))
    r_all = T.stack(r_logit_steps, axis=0)  # (n, B, 3)
    d_all = T.stack(d_logit_steps, axis=0)  # (n, B, 2)
    r_targets = reward_to_class(rewards).T  # (n, B)
    d_targets = dones.astype(np.int64).T
    return T.cross_entropy(r_all, r_targets) + T.cross_entropy(d_all, d_targets)


def sample_reward_done(r_logits: np.ndarray, d_logits: np.ndarray,
                       rng: np.random.Generator, mode: str = "sample"):
    """Decode (reward value, done flag) from head logits, batched.

    ``sample`` draws from the categorical heads; ``argmax`` takes the mode.
    """
    r_logits = np.atleast_2d(r_logits)
    d_logits = np.atleast_2d(d_logits)
    if mode == "argmax":
        r_idx = r_logits.argmax(axis=-1)
        d_idx = d_logits.argmax(axis=-1)
    elif mode == "sample":
        r_idx = _categorical(r_logits, rng)
        d_idx = _categorical(d_logits, rng)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return REWARD_CLASSES[r_idx], d_idx.astype(bool)


def _categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random(size=p.shape[:-1] + (1,))
    idx = (p.cumsum(axis=-1) < u).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)
