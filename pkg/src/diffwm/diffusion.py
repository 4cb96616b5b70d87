"""EDM noise parameterization: preconditioning, noise sampling, Euler solver.

The denoiser is always used through the preconditioned combination
``c_skip * z + c_out * F(c_in * z, cond)``; the coefficients here normalize
the network's input/output scales across noise levels. Sampling runs the
probability-flow Euler recursion down a Karras rho-schedule, with optional
per-step churn re-noising for stochastic environments.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EdmParams:
    sigma_data: float = 1.0
    p_mean: float = -0.4
    p_std: float = 1.2
    num_steps: int = 3
    sigma_min: float = 2e-3
    sigma_max: float = 5.0
    rho: float = 7.0
    s_churn: float = 0.0

    def __post_init__(self):
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")
        if self.p_std <= 0:
            raise ValueError("p_std must be positive")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.s_churn < 0:
            raise ValueError("s_churn must be >= 0")


@dataclass(frozen=True)
class PrecondCoeffs:
    c_skip: np.ndarray | float
    c_out: np.ndarray | float
    c_in: np.ndarray | float
    c_noise: np.ndarray | float


def precond_coeffs(sigma, params: EdmParams) -> PrecondCoeffs:
    """Preconditioning coefficients for a noise level (scalar or array)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    sd2 = params.sigma_data ** 2
    denom = sigma ** 2 + sd2
    return PrecondCoeffs(
        c_skip=sd2 / denom,
        c_out=sigma * params.sigma_data / np.sqrt(denom),
        c_in=1.0 / np.sqrt(denom),
        c_noise=np.log(sigma) / 4.0,
    )


def sample_sigma(params: EdmParams, rng: np.random.Generator, size=None):
    """Draw sigma with log sigma ~ Normal(p_mean, p_std^2)."""
    return np.exp(rng.normal(params.p_mean, params.p_std, size=size))


def build_sigma_schedule(params: EdmParams) -> np.ndarray:
    """Descending rho-interpolated noise levels plus a terminal zero."""
    n = params.num_steps
    if n == 1:
        sigmas = np.array([params.sigma_max])
    else:
        inv_rho = 1.0 / params.rho
        ramp = np.arange(n) / (n - 1)
        sigmas = (
            params.sigma_max ** inv_rho
            + ramp * (params.sigma_min ** inv_rho - params.sigma_max ** inv_rho)
        ) ** params.rho
    return np.concatenate([sigmas, [0.0]])


def euler_sample(denoise_fn, cond, params: EdmParams, rng: np.random.Generator,
                 latent_shape: tuple | None = None, clamp_scale: float = 3.0) -> np.ndarray:
    """Reverse-diffuse from pure noise to a clean latent.

    ``denoise_fn(noised, cond) -> np.ndarray`` receives a
    :class:`~diffwm.core.NoisedLatent` and the conditioning tuple with its
    noise embedding refreshed for the current step. The returned latent is
    hard-clipped to [-clamp_scale, clamp_scale] as a final range guarantee
    (the soft tanh clamp is the denoiser's own output transform, so in the
    real pipeline this clip is a no-op).
    """
    from .core import NoisedLatent  # local import to avoid a module cycle

    if latent_shape is None:
        latent_shape = tuple(cond.past_latents.shape[:-4]) + tuple(cond.past_latents.shape[-3:])
    schedule = build_sigma_schedule(params)
    gamma = min(params.s_churn / params.num_steps, np.sqrt(2.0) - 1.0) if params.s_churn > 0 else 0.0
    x = rng.standard_normal(latent_shape) * schedule[0]
    for sigma_cur, sigma_next in zip(schedule[:-1], schedule[1:]):
        sigma_hat = sigma_cur * (1.0 + gamma)
        if gamma > 0:
            x = x + np.sqrt(sigma_hat ** 2 - sigma_cur ** 2) * rng.standard_normal(latent_shape)
        step_cond = dataclasses.replace(
            cond, noise_embedding=float(np.log(sigma_hat) / 4.0)
        )
        denoised = denoise_fn(NoisedLatent(values=x, sigma=float(sigma_hat)), step_cond)
        denoised = np.asarray(denoised)
        if sigma_next == 0.0:
            # the Euler step to sigma = 0 lands exactly on the prediction
            x = denoised
        else:
            d = (x - denoised) / sigma_hat
            x = x + (sigma_next - sigma_hat) * d
    return np.clip(x, -clamp_scale, clamp_scale)
