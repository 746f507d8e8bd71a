"""Reverse-process drivers: full ancestral sampling and strided deterministic sampling.

Both drivers operate on numpy arrays and call a denoise function
``denoise_fn(x_t, t) -> x0_hat`` once per visited timestep; the wrapper around
a trained network lives in `make_denoise_fn`. Noise-predicting models are
converted to a clean-image estimate before the reverse step, so the step math
is shared across both parameterizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .schedule import VarianceSchedule, ddim_step, ddpm_step, make_ddim_timesteps
from .unet import GuidedUNet


@dataclass(frozen=True)
class SamplerSpec:
    kind: str  # "ddpm" | "ddim"
    steps: int  # visited timesteps; ignored for ddpm (always T)

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.kind!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "steps": self.steps}


def make_denoise_fn(model: GuidedUNet, rgb_n: np.ndarray, schedule: VarianceSchedule):
    """Bind a trained model and conditioning image into denoise_fn(x_t, t).

    rgb_n: (B, 3, 2h, 2w) in [-1, 1]. Under the noise-prediction ablation the
    network output eps_hat is converted via x0 = (x_t - sqrt(1-ab)*eps)/sqrt(ab).
    """
    model.eval()
    rgb_t = torch.from_numpy(np.ascontiguousarray(rgb_n, dtype=np.float32))

    def denoise_fn(x_t: np.ndarray, t: int) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(x_t, dtype=np.float32))
            out = model(x, rgb_t, t).numpy().astype(np.float64)
        if model.cfg.prediction_target == "noise":
            ab = schedule.alpha_bar(t)
            out = (x_t - np.sqrt(schedule.one_minus_alpha_bar(t)) * out) / np.sqrt(ab)
        return out

    return denoise_fn


def ddpm_sample(denoise_fn, shape: tuple, schedule: VarianceSchedule,
                rng: np.random.Generator) -> np.ndarray:
    """Run all T ancestral steps from pure noise; returns the final clean estimate."""
    x = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        x0_hat = denoise_fn(x, t)
        x = ddpm_step(x, x0_hat, t, schedule, rng)
    return x


def ddim_sample(denoise_fn, shape: tuple, schedule: VarianceSchedule, steps: int,
                rng: np.random.Generator) -> np.ndarray:
    """Deterministic sampler visiting `steps` timesteps, final hop to t=0.

    Calls denoise_fn exactly `steps` times. Randomness enters only through the
    initial noise drawn from `rng`.
    """
    x = rng.standard_normal(shape)
    timesteps = make_ddim_timesteps(schedule.T, steps)
    for i, t in enumerate(timesteps):
        x0_hat = denoise_fn(x, t)
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        x = ddim_step(x, x0_hat, t, t_prev, schedule)
    return x


def run_sampler(denoise_fn, shape: tuple, schedule: VarianceSchedule, spec: SamplerSpec,
                rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "ddpm":
        return ddpm_sample(denoise_fn, shape, schedule, rng)
    return ddim_sample(denoise_fn, shape, schedule, spec.steps, rng)
