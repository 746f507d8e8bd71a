"""Variance schedule, closed-form forward process, and reverse-step math.

Timesteps are 1-based (t in 1..T). Cumulative products are stored with an
explicit leading entry for t=0, so `alpha_bar(0) == 1` and lookups for t-1
never special-case.

The reverse steps consume a clean-image estimate (the network predicts the
denoised image directly); the estimate is clipped to [-1, 1] before use so the
math stays bounded even for configurations without a tanh head.

Everything here is a pure function over an immutable schedule; generators are
always passed in, never global.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceSchedule:
    T: int
    betas: np.ndarray  # (T,), betas[i] is beta_{i+1}
    alphas: np.ndarray  # (T,), 1 - betas
    alpha_bars: np.ndarray  # (T + 1,), alpha_bars[t] = prod_{i<=t} alpha_i, alpha_bars[0] = 1
    one_minus_alpha_bars: np.ndarray  # (T + 1,), cancellation-free complement of alpha_bars

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"t must be in [0, {self.T}], got {t}")
        return float(self.alpha_bars[t])

    def one_minus_alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"t must be in [0, {self.T}], got {t}")
        return float(self.one_minus_alpha_bars[t])

    def _check_t(self, t: int):
        if not 1 <= t <= self.T:
            raise ScheduleError(f"t must be in [1, {self.T}], got {t}")


@dataclass(frozen=True)
class PosteriorCoeffs:
    """Coefficients of the exact reverse posterior for one timestep.

    mean = coef_x0 * x0_hat + coef_xt * x_t, variance sigma**2.
    At t=1 the posterior collapses onto the clean estimate: coef_x0=1, coef_xt=0.
    """

    coef_x0: float
    coef_xt: float
    sigma: float


def make_linear_schedule(T: int, beta_1: float = 1e-4, beta_T: float = 0.02) -> VarianceSchedule:
    """Linearly spaced betas from beta_1 to beta_T inclusive."""
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_1 <= beta_T < 1.0):
        raise ScheduleError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    betas = beta_1 + (np.arange(T, dtype=np.float64) / (T - 1)) * (beta_T - beta_1)
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    # 1 - ab_t = (1 - ab_{t-1}) + ab_{t-1} * beta_t avoids the cancellation in
    # 1 - cumprod for early t; it makes 1 - ab_1 == beta_1 exactly, which in
    # turn makes the t=1 posterior return the clean estimate exactly.
    one_minus = np.empty(T + 1)
    one_minus[0] = 0.0
    for t in range(1, T + 1):
        one_minus[t] = one_minus[t - 1] + alpha_bars[t - 1] * betas[t - 1]
    return VarianceSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                            one_minus_alpha_bars=one_minus)


def posterior_coeffs(s: VarianceSchedule, t: int) -> PosteriorCoeffs:
    beta_t = s.beta(t)
    denom = s.one_minus_alpha_bar(t)
    one_minus_prev = s.one_minus_alpha_bar(t - 1)
    coef_x0 = np.sqrt(s.alpha_bar(t - 1)) * beta_t / denom
    coef_xt = np.sqrt(s.alpha(t)) * one_minus_prev / denom
    var = one_minus_prev / denom * beta_t
    return PosteriorCoeffs(coef_x0=float(coef_x0), coef_xt=float(coef_xt), sigma=float(np.sqrt(var)))


def q_sample(x0, t: int, eps, s: VarianceSchedule):
    """Closed-form forward sample: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.

    Works on numpy arrays and torch tensors alike (coefficients are scalars).
    """
    s._check_t(t)
    if x0.shape != eps.shape:
        raise ScheduleError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    return float(np.sqrt(s.alpha_bar(t))) * x0 + float(np.sqrt(s.one_minus_alpha_bar(t))) * eps


def clip_x0(x0_hat):
    if hasattr(x0_hat, "clamp"):
        return x0_hat.clamp(-1.0, 1.0)
    return np.clip(x0_hat, -1.0, 1.0)


def ddpm_step(xt: np.ndarray, x0_hat: np.ndarray, t: int, s: VarianceSchedule,
              rng: np.random.Generator) -> np.ndarray:
    """One ancestral reverse step x_t -> x_{t-1}; noise is suppressed at t=1."""
    if xt.shape != x0_hat.shape:
        raise ScheduleError(f"shape mismatch: {xt.shape} vs {x0_hat.shape}")
    c = posterior_coeffs(s, t)
    mean = c.coef_x0 * clip_x0(x0_hat) + c.coef_xt * xt
    if t == 1:
        return mean
    return mean + c.sigma * rng.standard_normal(xt.shape)


def ddim_step(xt, x0_hat, t: int, t_prev: int, s: VarianceSchedule):
    """Deterministic reverse jump t -> t_prev (eta = 0).

    The implied noise is re-derived from (x_t, x0_hat) and re-applied at the
    earlier time; t_prev = 0 lands exactly on the clean estimate.
    """
    if not 0 <= t_prev < t:
        raise ScheduleError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    if xt.shape != x0_hat.shape:
        raise ScheduleError(f"shape mismatch: {xt.shape} vs {x0_hat.shape}")
    ab_t = s.alpha_bar(t)
    one_minus_t = s.one_minus_alpha_bar(t)
    if one_minus_t <= 0.0:
        raise ScheduleError(f"degenerate schedule: alpha_bar({t}) == 1")
    x0c = clip_x0(x0_hat)
    eps_hat = (xt - float(np.sqrt(ab_t)) * x0c) / float(np.sqrt(one_minus_t))
    return (float(np.sqrt(s.alpha_bar(t_prev))) * x0c
            + float(np.sqrt(s.one_minus_alpha_bar(t_prev))) * eps_hat)


def make_ddim_timesteps(T: int, S: int) -> list:
    """Strictly decreasing visit list of S timesteps from T down toward 1.

    Timesteps are the rounded uniform grid over [T, 1] with both endpoints
    included (the full grid T..1 when S == T, the single step [T] when S == 1).
    The sampler appends a final hop to t=0 after the last listed timestep.
    """
    if not 1 <= S <= T:
        raise ScheduleError(f"need 1 <= S <= T, got S={S}, T={T}")
    if S == 1:
        return [T]
    grid = np.linspace(T, 1, S)
    steps = [int(round(v)) for v in grid]
    if len(set(steps)) != S or any(a <= b for a, b in zip(steps, steps[1:])):
        raise ScheduleError(f"degenerate timestep grid for T={T}, S={S}")
    return steps
