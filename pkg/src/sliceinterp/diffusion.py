"""Linear-beta DDPM: schedule, forward marginal, reverse step, sampler and loss.

Timesteps are indexed 1..T; arrays are stored 0-based, so ``beta[t - 1]`` is
beta_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def _check(self, t: int) -> int:
        if not 1 <= int(t) <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return int(t) - 1


def make_linear_schedule(T: int = 100, beta1: float = 1e-4, betaT: float = 0.02) -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"need at least 2 timesteps, got {T}")
    if not 0 < beta1 <= betaT < 1:
        raise ValueError(f"require 0 < beta1 <= betaT < 1, got {beta1}, {betaT}")
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = beta1 + (t - 1) / (T - 1) * (betaT - beta1)
    alpha = 1.0 - beta
    return NoiseSchedule(T, beta, alpha, np.cumprod(alpha))


def _coef(values: np.ndarray, t, like: np.ndarray) -> np.ndarray:
    """Per-sample coefficient broadcast against a (B, ...) array."""
    c = values[np.asarray(t) - 1]
    return np.reshape(c, np.shape(c) + (1,) * (like.ndim - np.ndim(c)))


def _check_steps(schedule: NoiseSchedule, t) -> None:
    t = np.atleast_1d(t)
    if t.min() < 1 or t.max() > schedule.T:
        raise ValueError(f"timesteps must lie in [1, {schedule.T}], got {t.min()}..{t.max()}")


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` is a scalar or one step per sample."""
    _check_steps(schedule, t)
    if np.shape(eps) != np.shape(x0):
        raise ValueError(f"noise shape {np.shape(eps)} differs from x0 shape {np.shape(x0)}")
    ab = _coef(schedule.alpha_bar, t, np.asarray(x0))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t: np.ndarray, t, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    _check_steps(schedule, t)
    ab = _coef(schedule.alpha_bar, t, np.asarray(x_t))
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def posterior_mean(x_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    i = schedule._check(t)
    beta, alpha, ab = schedule.beta[i], schedule.alpha[i], schedule.alpha_bar[i]
    return (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)


def p_sample_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule, noise=None) -> np.ndarray:
    """One reverse step with variance beta_t; the final step (t = 1) adds no noise."""
    mu = posterior_mean(x_t, t, eps_hat, schedule)
    if t == 1 or noise is None:
        return mu
    return mu + np.sqrt(schedule.beta[t - 1]) * noise


def _predict_noise(model, x_t: np.ndarray, condition: np.ndarray, t: int) -> np.ndarray:
    with ad.no_grad():
        inp = Tensor(np.concatenate([x_t, condition], axis=1), dtype=x_t.dtype)
        return model(inp, np.full(x_t.shape[0], t)).data


def sample(model, condition: np.ndarray, schedule: NoiseSchedule, seed, add_noise: bool = True) -> np.ndarray:
    """Draw x_0 for a (B, 2, H, W) condition by T reverse steps; clamped to [0, 1].

    ``seed`` is one int for the whole batch or a sequence with one seed per
    row, in which case each row's trajectory is independent of the batching.
    ``model`` is called as ``model(Tensor(concat(x_t, condition)), t_vector)``
    exactly T times.
    """
    condition = np.asarray(condition, dtype=np.float32)
    b, _, h, w = condition.shape
    if np.ndim(seed) == 0:
        rngs = [np.random.Generator(np.random.Philox(int(seed)))]
        shape = (b, 1, h, w)
    else:
        if len(seed) != b:
            raise ValueError(f"got {len(seed)} seeds for a batch of {b}")
        rngs = [np.random.Generator(np.random.Philox(int(s))) for s in seed]
        shape = (1, 1, h, w)

    def draw():
        return np.concatenate([r.standard_normal(shape) for r in rngs]).astype(np.float32)

    x = draw()
    for t in range(schedule.T, 0, -1):
        eps_hat = _predict_noise(model, x, condition, t)
        noise = draw() if (add_noise and t > 1) else None
        x = p_sample_step(x, t, eps_hat, schedule, noise).astype(np.float32)
    return np.clip(x, 0.0, 1.0)


def ddpm_training_loss(model, x0: np.ndarray, condition: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> Tensor:
    """MSE between the true noise and the model's prediction from (x_t, condition, t)."""
    x_t = q_sample(np.asarray(x0), t, np.asarray(eps), schedule)
    dtype = ad.default_dtype()
    inp = Tensor(np.concatenate([x_t, condition], axis=1), dtype=dtype)
    pred = model(inp, np.broadcast_to(np.atleast_1d(t), (x_t.shape[0],)))
    return ad.mse_loss(pred, Tensor(eps, dtype=pred.dtype))
