"""Noise schedule and the closed-form forward process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    beta_min: float
    beta_max: float
    beta: np.ndarray  # beta_t, t = 1..T (index t-1)
    alpha: np.ndarray  # 1 - beta_t
    alpha_bar: np.ndarray  # running product of alpha
    sigma: np.ndarray  # sigma_t = sqrt(beta_t)

    @property
    def T(self) -> int:
        return len(self.beta)


def make_schedule(T: int, kind: str = "linear", beta_min: float = 1e-4,
                  beta_max: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError("need 0 < beta_min <= beta_max < 1")

    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        # beta derived from a squared-cosine alpha_bar curve, clipped into
        # the configured bounds so the schedule invariants hold
        s = 0.008
        steps = np.arange(T + 1)
        f = np.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
        abar = f / f[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], beta_min, beta_max)
    else:
        raise ValueError(f"unknown schedule kind: {kind}")

    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    return NoiseSchedule(kind, beta_min, beta_max, beta, alpha, alpha_bar, sigma)


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, elementwise."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} out of range 1..{sched.T}")
    abar = sched.alpha_bar[t - 1]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
