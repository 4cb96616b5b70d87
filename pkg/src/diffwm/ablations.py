"""Configuration-reachable training variants.

Each variant rewires how the latent space is learned or how the next-step
conditioning signal is chosen, keeping the rest of the pipeline intact:

* ``latent_mode``:
  - ``jedi``         denoising regression, encoder learns through conditioning
  - ``mse_loss``     direct next-latent squared error instead of denoising
  - ``no_diff_grad`` denoising loss but encoder gradients blocked
  - ``autoencoder``  encoder learns only from pixel reconstruction
  - ``decoder_grad`` denoising loss plus a reconstruction decoder
* ``switch_mode``: ``random`` coin flip, ``deterministic`` (always cache the
  denoiser output), ``alternate``, or ``never``.
* ``clamp_enabled``: soft tanh range clamp on encoder/denoiser outputs.
* ``ema_target``: an exponential-moving-average copy of the encoder produces
  the regression targets (decay 1.0 freezes it at initialization).

These exist for structural experimentation; only gradient-presence wiring is
verified, no performance claims.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor
from .worldmodel import (Encoder, SwitchState, encode,
                         joint_embedding_diffusion_loss, make_switch_decision)

LATENT_MODES = ("jedi", "mse_loss", "no_diff_grad", "autoencoder", "decoder_grad")
SWITCH_MODES = ("random", "deterministic", "alternate", "never")


@dataclass(frozen=True)
class VariantConfig:
    latent_mode: str = "jedi"
    switch_mode: str = "random"
    clamp_enabled: bool = True
    ema_target: bool = False
    ema_decay: float = 0.995
    bottleneck_weight: float = 0.0

    def validate(self):
        if self.latent_mode not in LATENT_MODES:
            raise ValueError(f"latent_mode must be one of {LATENT_MODES}")
        if self.switch_mode not in SWITCH_MODES:
            raise ValueError(f"switch_mode must be one of {SWITCH_MODES}")
        if self.latent_mode == "autoencoder" and not (0 <= self.ema_decay <= 1):
            raise ValueError("ema_decay must be in [0, 1]")
        return self


class IncompatibleVariantError(ValueError):
    pass


class Decoder(nn.Module):
    """Pixel decoder mirroring the encoder transposed (nearest-neighbor
    upsampling where the encoder pooled). Used only by the reconstruction
    variants."""

    def __init__(self, encoder_cfg, rng: np.random.Generator, dtype=np.float64):
        from .worldmodel import ResBlock
        channels = list(encoder_cfg.block_channels)[::-1]
        ups = list(encoder_cfg.downsample_flags)[::-1]
        blocks = []
        upflags = []
        c_prev = channels[0]
        targets = channels[1:] + [channels[-1]]
        for c, up in zip(targets, ups):
            blocks.append(ResBlock(c_prev, c, rng, dtype=dtype))
            upflags.append(bool(up))
            c_prev = c
        self.blocks = blocks
        self.upflags = upflags
        self.conv_out = nn.Conv2d(c_prev, encoder_cfg.in_channels, 3, rng, dtype=dtype)

    def __call__(self, z: Tensor) -> Tensor:
        h = z
        for block, up in zip(self.blocks, self.upflags):
            h = block(h)
            if up:
                h = T.upsample2x(h)
        return T.sigmoid(self.conv_out(h))  # pixels live in [0, 1]


class TrainingGraph:
    """The diffusion-procedure update wired for one variant.

    ``diffusion_loss(obs_window, action_window, rng, switch_state)`` returns
    (total loss tensor, diagnostics dict, new switch state). The trainer backs
    it, steps the optimizer, then calls ``after_step()`` (EMA update hook).
    """

    def __init__(self, variant: VariantConfig, encoder: Encoder, denoiser,
                 params, rng: np.random.Generator):
        variant.validate()
        if variant.latent_mode == "autoencoder" and variant.ema_target:
            raise IncompatibleVariantError("autoencoder variant has no denoising "
                                           "target for an EMA encoder to supply")
        self.variant = variant
        self.encoder = encoder
        self.denoiser = denoiser
        self.params = params
        self.decoder = None
        if variant.latent_mode in ("autoencoder", "decoder_grad"):
            self.decoder = Decoder(encoder.cfg, rng)
        self.target_encoder = None
        if variant.ema_target:
            self.target_encoder = copy.deepcopy(encoder)
        if not variant.clamp_enabled:
            # disable the soft range clamp on both encoder and denoiser
            encoder.cfg = _no_clamp(encoder.cfg)
            denoiser.clamp_scale = np.inf
        self._alternate_flag = False

    # -- switching ---------------------------------------------------------
    def switch_decision(self, rng: np.random.Generator) -> bool:
        mode = self.variant.switch_mode
        if mode == "random":
            return make_switch_decision(rng)
        if mode == "deterministic":
            return True
        if mode == "alternate":
            self._alternate_flag = not self._alternate_flag
            return self._alternate_flag
        return False

    # -- losses --------------------------------------------------------
    def diffusion_loss(self, obs_window, action_window, rng, switch_state):
        mode = self.variant.latent_mode
        decision = self.switch_decision(rng)
        diag = {}
        if mode == "mse_loss":
            loss, new_state = self._mse_loss(obs_window, action_window, decision)
            diag["diffusion_loss"] = loss.item()
        else:
            encoder_grad = mode in ("jedi", "decoder_grad")
            loss, new_state = joint_embedding_diffusion_loss(
                obs_window, action_window, self.encoder, self.denoiser,
                self.params, rng, switch_state=switch_state,
                target_encoder=self.target_encoder,
                switch_decision=decision, encoder_grad=encoder_grad)
            diag["diffusion_loss"] = loss.item()
            if mode in ("autoencoder", "decoder_grad"):
                recon = self._recon_loss(obs_window)
                diag["recon_loss"] = recon.item()
                loss = loss + recon
        if self.variant.bottleneck_weight > 0:
            reg = self._bottleneck_reg(obs_window)
            diag["bottleneck_reg"] = reg.item()
            loss = loss + self.variant.bottleneck_weight * reg
        return loss, diag, new_state

    def _mse_loss(self, obs_window, action_window, decision):
        """Direct next-latent prediction: the denoiser evaluated at its
        max-noise operating point with a zeroed input acts as a one-step
        predictor, regressed onto the detached next latent."""
        b, lp1 = obs_window.shape[:2]
        L = self.denoiser.cfg.history_len
        z_all = encode(obs_window.reshape(b * lp1, *obs_window.shape[2:]), self.encoder)
        ch, lh, lw = z_all.shape[1:]
        z_all = z_all.reshape(b, lp1, ch, lh, lw)
        cond = z_all[:, :L]
        target = z_all.data[:, L]
        sigma = np.full(b, self.params.sigma_max)
        pred = self.denoiser.denoised(Tensor(np.zeros_like(target)), sigma, cond,
                                      action_window[:, :L], self.params,
                                      clamp_output=self.variant.clamp_enabled)
        err = pred - Tensor(target)
        loss = (err * err).mean()
        state = SwitchState(cached_latent=np.asarray(pred.data)) if decision \
            else SwitchState()
        return loss, state

    def _recon_loss(self, obs_window):
        b, lp1 = obs_window.shape[:2]
        flat = obs_window.reshape(b * lp1, *obs_window.shape[2:])
        z = encode(flat, self.encoder)
        rec = self.decoder(z)
        target = Tensor(np.asarray(flat, dtype=np.float64)).transpose(0, 3, 1, 2)
        err = rec - target
        return (err * err).mean()

    def _bottleneck_reg(self, obs_window):
        """Optional magnitude penalty on the context latents, a cheap stand-in
        for an explicit prior-matching regularizer."""
        b, lp1 = obs_window.shape[:2]
        flat = obs_window.reshape(b * lp1, *obs_window.shape[2:])
        z = encode(flat, self.encoder)
        return (z * z).mean()

    # -- post-step hooks --------------------------------------------------
    def after_step(self):
        if self.target_encoder is not None:
            decay = self.variant.ema_decay
            for p_t, p in zip(self.target_encoder.parameters(), self.encoder.parameters()):
                p_t.data = decay * p_t.data + (1.0 - decay) * p.data

    def extra_parameters(self):
        return self.decoder.parameters() if self.decoder is not None else []


def _no_clamp(cfg):
    import dataclasses
    return dataclasses.replace(cfg, clamp_scale=np.inf)


def apply_variant(variant: VariantConfig, encoder: Encoder, denoiser, params,
                  rng: np.random.Generator) -> TrainingGraph:
    """Wire the training graph for a variant; raises on invalid or
    incompatible combinations."""
    return TrainingGraph(variant, encoder, denoiser, params, rng)
