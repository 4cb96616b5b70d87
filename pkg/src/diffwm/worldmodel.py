"""Encoder, preconditioned conditional denoiser, and the diffusion loss.

The encoder maps pixels to a soft-clamped latent. The denoiser network is a
single-resolution residual stack conditioned on stacked past latents (frame
stacking along channels) and on past actions plus the diffusion-time
embedding (adaptive group normalization). Training regresses the network
output onto the noise-direction target with stop-gradients placed so that the
encoder learns only through the conditioning latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .core import ConditioningTuple, LatentState, NoisedLatent
from .diffusion import EdmParams, precond_coeffs, sample_sigma
from .tensor import Tensor


def clamp(z, scale: float = 3.0):
    """Soft range clamp ``scale * tanh(z / scale)``; identity slope at 0.
    A non-finite scale disables clamping (identity)."""
    if not np.isfinite(scale):
        return z
    if isinstance(z, Tensor):
        return T.tanh(z * (1.0 / scale)) * scale
    return np.tanh(np.asarray(z) / scale) * scale


@dataclass(frozen=True)
class EncoderConfig:
    block_channels: tuple = (32, 32, 32, 16)
    downsample_flags: tuple = (1, 1, 1, 0)
    layers_per_block: tuple = (1, 1, 1, 1)
    clamp_scale: float = 3.0
    lr_scale: float = 0.3
    in_channels: int = 3

    @property
    def latent_channels(self) -> int:
        return self.block_channels[-1]

    def latent_hw(self, obs_hw: int) -> int:
        return obs_hw // (2 ** sum(self.downsample_flags))


@dataclass(frozen=True)
class DenoiserConfig:
    res_block_channels: tuple = (160,)
    layers_per_block: tuple = (1,)
    cond_dim: int = 256
    history_len: int = 4  # L past (latent, action) pairs
    # Also stack one-hot planes of the conditioning actions onto the input.
    # Default off: actions condition through adaptive group normalization
    # only. Small-scale training profiles switch this on because the spatial
    # pathway picks up action dependence with far fewer updates.
    action_input_planes: bool = False


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, rng, dtype=np.float64):
        self.norm1 = nn.GroupNorm(c_in, affine=True, dtype=dtype)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng, dtype=dtype)
        self.norm2 = nn.GroupNorm(c_out, affine=True, dtype=dtype)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.skip = nn.Conv2d(c_in, c_out, 1, rng, dtype=dtype) if c_in != c_out else None

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(T.silu(self.norm1(x)))
        h = self.conv2(T.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class Encoder(nn.Module):
    """Pixel observations (B, 3, H, W) -> clamped latents (B, C, h, w)."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        blocks = []
        pools = []
        c_prev = cfg.in_channels
        for c, down, n_layers in zip(cfg.block_channels, cfg.downsample_flags,
                                     cfg.layers_per_block):
            stage = []
            for _ in range(n_layers):
                stage.append(ResBlock(c_prev, c, rng, dtype=dtype))
                c_prev = c
            blocks.append(stage)
            pools.append(bool(down))
        self.blocks = blocks
        self.pools = pools

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for stage, pool in zip(self.blocks, self.pools):
            for block in stage:
                h = block(h)
            if pool:
                h = T.maxpool2x2(h)
        return clamp(h, self.cfg.clamp_scale)


def encode(obs_batch: np.ndarray | Tensor, encoder: Encoder) -> Tensor:
    """Encode (B, H, W, 3) pixel observations to latents (B, C, h, w)."""
    if not isinstance(obs_batch, Tensor):
        obs_batch = Tensor(np.asarray(obs_batch, dtype=np.float64))
    if obs_batch.ndim != 4 or obs_batch.shape[-1] != 3:
        raise ValueError(f"expected (B, H, W, 3) observations, got {obs_batch.shape}")
    return encoder(obs_batch.transpose(0, 3, 1, 2))


class AdaResBlock(nn.Module):
    """Residual block with (scale, shift) group-norm modulation from a
    conditioning vector. The modulation projections start small but live, so
    conditioning (actions, noise level) influences the block from step one."""

    def __init__(self, c_in: int, c_out: int, cond_dim: int, rng, dtype=np.float64):
        self.c_out = c_out
        self.norm1 = nn.GroupNorm(c_in, affine=False, dtype=dtype)
        self.proj1 = nn.Linear(cond_dim, 2 * c_in, rng, dtype=dtype)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng, dtype=dtype)
        self.norm2 = nn.GroupNorm(c_out, affine=False, dtype=dtype)
        self.proj2 = nn.Linear(cond_dim, 2 * c_out, rng, dtype=dtype)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.skip = nn.Conv2d(c_in, c_out, 1, rng, dtype=dtype) if c_in != c_out else None

    @staticmethod
    def _modulate(h: Tensor, proj_out: Tensor, channels: int) -> Tensor:
        b = proj_out.shape[0]
        scale = proj_out[:, :channels].reshape(b, channels, 1, 1)
        shift = proj_out[:, channels:].reshape(b, channels, 1, 1)
        return h * (1.0 + scale) + shift

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        c_in = x.shape[1]
        h = self._modulate(self.norm1(x), self.proj1(cond), c_in)
        h = self.conv1(T.silu(h))
        h = self._modulate(self.norm2(h), self.proj2(cond), self.c_out)
        h = self.conv2(T.silu(h))
        return h + (self.skip(x) if self.skip is not None else x)


class Denoiser(nn.Module):
    """Inner network (the raw residual stack) plus the conditioning encoders.

    Latent conditioning is frame stacking: the preconditioned noised latent is
    concatenated channel-wise with the L past latents. Actions and the
    diffusion-time embedding enter through adaptive group normalization.
    """

    def __init__(self, cfg: DenoiserConfig, latent_channels: int, num_actions: int,
                 rng: np.random.Generator, clamp_scale: float = 3.0, dtype=np.float64):
        self.cfg = cfg
        self.clamp_scale = clamp_scale
        self.latent_channels = latent_channels
        self.num_actions = num_actions
        act_dim = max(1, cfg.cond_dim // cfg.history_len)
        self.action_emb = nn.Embedding(num_actions, act_dim, rng, dtype=dtype)
        self.action_proj = nn.Linear(cfg.history_len * act_dim, cfg.cond_dim, rng, dtype=dtype)
        self.noise_proj1 = nn.Linear(1, cfg.cond_dim, rng, dtype=dtype)
        self.noise_proj2 = nn.Linear(cfg.cond_dim, cfg.cond_dim, rng, dtype=dtype)
        c_stack = latent_channels * (cfg.history_len + 1)
        if cfg.action_input_planes:
            c_stack += cfg.history_len * num_actions
        c0 = cfg.res_block_channels[0]
        self.conv_in = nn.Conv2d(c_stack, c0, 3, rng, dtype=dtype)
        blocks = []
        c_prev = c0
        for c, n_layers in zip(cfg.res_block_channels, cfg.layers_per_block):
            for _ in range(n_layers):
                blocks.append(AdaResBlock(c_prev, c, cfg.cond_dim, rng, dtype=dtype))
                c_prev = c
        self.blocks = blocks
        self.norm_out = nn.GroupNorm(c_prev, affine=True, dtype=dtype)
        self.conv_out = nn.Conv2d(c_prev, latent_channels, 3, rng, dtype=dtype,
                                  zero_init=True)

    def cond_vector(self, past_actions: np.ndarray, c_noise) -> Tensor:
        b, L = past_actions.shape
        emb = self.action_emb(past_actions).reshape(b, -1)
        act_feat = self.action_proj(emb)
        c_noise = np.broadcast_to(np.asarray(c_noise, dtype=np.float64), (b,))
        noise_feat = self.noise_proj2(T.silu(self.noise_proj1(Tensor(c_noise.reshape(b, 1)))))
        return T.silu(act_feat + noise_feat)

    def action_planes(self, past_actions: np.ndarray, hw: tuple) -> np.ndarray:
        """(B, L*num_actions, h, w) one-hot planes of the conditioning actions."""
        b, L = past_actions.shape
        planes = np.zeros((b, L * self.num_actions) + tuple(hw))
        for l in range(L):
            for bi in range(b):
                planes[bi, l * self.num_actions + past_actions[bi, l]] = 1.0
        return planes

    def raw_net(self, x_in: Tensor, past_latents: Tensor, past_actions: np.ndarray,
                c_noise) -> Tensor:
        """The inner network F: preconditioned input + conditioning -> output."""
        b = x_in.shape[0]
        L = past_latents.shape[1]
        parts = [x_in, past_latents.reshape(b, L * self.latent_channels,
                                            *past_latents.shape[-2:])]
        if self.cfg.action_input_planes:
            parts.append(Tensor(self.action_planes(past_actions, x_in.shape[-2:])))
        stacked = T.concat(parts, axis=1)
        cond = self.cond_vector(past_actions, c_noise)
        h = self.conv_in(stacked)
        for block in self.blocks:
            h = block(h, cond)
        return self.conv_out(T.silu(self.norm_out(h)))

    def denoised(self, z_noised: Tensor, sigma, past_latents: Tensor,
                 past_actions: np.ndarray, params: EdmParams,
                 clamp_output: bool = True) -> Tensor:
        """Preconditioned denoiser output, soft-clamped to the latent range."""
        coeffs = precond_coeffs(sigma, params)
        bshape = (-1, 1, 1, 1)
        c_in = np.reshape(coeffs.c_in, bshape) if np.ndim(coeffs.c_in) else coeffs.c_in
        c_skip = np.reshape(coeffs.c_skip, bshape) if np.ndim(coeffs.c_skip) else coeffs.c_skip
        c_out = np.reshape(coeffs.c_out, bshape) if np.ndim(coeffs.c_out) else coeffs.c_out
        f_out = self.raw_net(z_noised * c_in, past_latents, past_actions, coeffs.c_noise)
        d_out = z_noised * c_skip + f_out * c_out
        return clamp(d_out, self.clamp_scale) if clamp_output else d_out


def denoise(noised: NoisedLatent, cond: ConditioningTuple, net: Denoiser,
            params: EdmParams) -> LatentState:
    """Forward-only preconditioned denoising of a (batched) noised latent."""
    z = np.asarray(noised.values, dtype=np.float64)
    squeeze = z.ndim == 3
    if squeeze:
        z = z[None]
    past = np.asarray(cond.past_latents, dtype=np.float64)
    if past.ndim == 4:
        past = past[None]
    acts = np.atleast_2d(np.asarray(cond.past_actions, dtype=np.int64))
    if past.shape[0] != z.shape[0] or acts.shape[0] != z.shape[0]:
        raise ValueError("conditioning batch size mismatch")
    if past.shape[1] != net.cfg.history_len:
        raise ValueError(
            f"conditioning length {past.shape[1]} != configured {net.cfg.history_len}")
    with T.no_grad():
        out = net.denoised(Tensor(z), noised.sigma, Tensor(past), acts, params)
    values = out.data[0] if squeeze else out.data
    return LatentState(values=values, scale=net.clamp_scale)


def make_switch_decision(rng: np.random.Generator) -> bool:
    """Fair coin: True means cache the denoiser output as the newest
    conditioning latent for the next update."""
    return bool(rng.random() < 0.5)


@dataclass(frozen=True)
class SwitchState:
    """Carries the cached (detached) denoiser output between consecutive
    diffusion updates; None means condition on encoder outputs only."""

    cached_latent: np.ndarray | None = None


def joint_embedding_diffusion_loss(
    obs_window: np.ndarray,
    action_window: np.ndarray,
    encoder: Encoder,
    denoiser: Denoiser,
    params: EdmParams,
    rng: np.random.Generator,
    switch_state: SwitchState | None = None,
    target_encoder: Encoder | None = None,
    switch_decision: bool | None = None,
    encoder_grad: bool = True,
) -> tuple[Tensor, SwitchState]:
    """Denoising regression loss over a batch of (L+1)-frame windows.

    ``obs_window``: (B, L+1, H, W, 3); ``action_window``: (B, L+1) with the
    first L entries used as conditioning. The target network output is
    ``(sg(z0) - c_skip * sg(z_tau)) / c_out`` and the noised input is built
    from the detached target latent, so encoder gradients flow only through
    the conditioning latents. When the previous update cached a denoiser
    output (random switching), it replaces the newest conditioning latent.
    ``switch_decision`` forces the caching choice; None draws a fair coin.
    """
    b, lp1 = obs_window.shape[:2]
    L = denoiser.cfg.history_len
    if lp1 != L + 1:
        raise ValueError(f"window must hold L+1={L + 1} frames, got {lp1}")
    flat_obs = obs_window.reshape(b * lp1, *obs_window.shape[2:])
    z_all = encode(flat_obs, encoder)
    ch, lh, lw = z_all.shape[1:]
    z_all = z_all.reshape(b, lp1, ch, lh, lw)
    cond_latents = z_all[:, :L]
    if not encoder_grad:
        cond_latents = cond_latents.detach()
    if target_encoder is not None:
        with T.no_grad():
            zt = encode(flat_obs, target_encoder)
        z0_target = zt.data.reshape(b, lp1, ch, lh, lw)[:, L]
    else:
        z0_target = z_all.data[:, L]  # stop-gradient target branch

    if (switch_state is not None and switch_state.cached_latent is not None
            and switch_state.cached_latent.shape == (b, ch, lh, lw)):
        cached = Tensor(switch_state.cached_latent)
        cond_latents = T.concat(
            [cond_latents[:, : L - 1], cached.reshape(b, 1, ch, lh, lw)], axis=1)

    sigma = sample_sigma(params, rng, size=b)
    noise = rng.standard_normal(z0_target.shape)
    z_tau = z0_target + sigma.reshape(-1, 1, 1, 1) * noise  # built from sg(z0)
    coeffs = precond_coeffs(sigma, params)
    c_in = coeffs.c_in.reshape(-1, 1, 1, 1)
    c_skip = coeffs.c_skip.reshape(-1, 1, 1, 1)
    c_out = coeffs.c_out.reshape(-1, 1, 1, 1)

    f_out = denoiser.raw_net(Tensor(z_tau * c_in), cond_latents,
                             action_window[:, :L], coeffs.c_noise)
    target = Tensor((z0_target - c_skip * z_tau) / c_out)
    residual = f_out - target
    loss = (residual * residual).mean()

    if switch_decision is None:
        switch_decision = make_switch_decision(rng)
    new_state = SwitchState()
    if switch_decision:
        d_out = clamp(z_tau * c_skip + f_out.data * c_out, denoiser.clamp_scale)
        new_state = SwitchState(cached_latent=np.asarray(d_out))
    return loss, new_state
