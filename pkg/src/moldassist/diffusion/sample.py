"""Guided ancestral sampling of process-parameter candidates."""

from __future__ import annotations

import numpy as np

from .net import DenoiserNet
from .train import DiffusionModel
from .types import EnvCondition, ProcessParams, PARAM_NAMES

DEFAULT_GUIDANCE = 3.0
DEFAULT_CANDIDATES = 64


class SamplingError(Exception):
    def __init__(self, step: int):
        super().__init__(f"non-finite sampler state at step t={step}")
        self.step = step


def guided_epsilon(net: DenoiserNet, x_t: np.ndarray, y: EnvCondition,
                   t: int, w: float, env_normalized: np.ndarray = None,
                   model: DiffusionModel = None) -> np.ndarray:
    """w * eps(x_t, y, t) + (1 - w) * eps(x_t, t), the unconditional branch
    running on the learned null token."""
    if env_normalized is None:
        if model is None:
            raise ValueError("need env_normalized or model to scale the condition")
        env_normalized = model.env_normalizer.normalize(y.env_vector())
    x = np.atleast_2d(x_t)
    env = np.atleast_2d(env_normalized)
    cls_idx = np.array([y.cls])
    eps_c = net.forward(x, np.array([t]), cls_idx=cls_idx, env=env,
                        drop_mask=np.array([False]))
    eps_u = net.forward(x, np.array([t]))
    return (w * eps_c + (1.0 - w) * eps_u)[0]


def sample(model: DiffusionModel, y: EnvCondition, w: float = DEFAULT_GUIDANCE,
           seed: int | np.random.SeedSequence = 0) -> ProcessParams:
    """Ancestral chain from x_T ~ N(0, I); z = 0 at the final step.

    Output is denormalized and clamped into the model's machine limits;
    clamped dimensions are flagged on the returned value.
    """
    sched = model.sched
    rng = np.random.default_rng(seed)
    env_n = model.env_normalizer.normalize(y.env_vector())
    x = rng.standard_normal(len(PARAM_NAMES))
    for t in range(sched.T, 0, -1):
        eps = guided_epsilon(model.net, x, y, t, w, env_normalized=env_n)
        beta = sched.beta[t - 1]
        alpha = sched.alpha[t - 1]
        abar = sched.alpha_bar[t - 1]
        x = (x - beta / np.sqrt(1.0 - abar) * eps) / np.sqrt(alpha)
        if t > 1:
            x = x + sched.sigma[t - 1] * rng.standard_normal(len(PARAM_NAMES))
        if not np.isfinite(x).all():
            raise SamplingError(t)

    raw = model.param_normalizer.denormalize(x)
    clamped = np.clip(raw, model.limits_lo, model.limits_hi)
    flagged = tuple(
        name for name, r, c in zip(PARAM_NAMES, raw, clamped) if r != c
    )
    return ProcessParams(tuple(float(v) for v in clamped), clamped_fields=flagged)


def candidate_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Deterministic per-candidate seed derivation."""
    return np.random.SeedSequence([master_seed, index])


def generate_candidates(model: DiffusionModel, y: EnvCondition,
                        w: float = DEFAULT_GUIDANCE,
                        n: int = DEFAULT_CANDIDATES,
                        seed: int = 0) -> list[ProcessParams]:
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        try:
            out.append(sample(model, y, w=w, seed=candidate_seed(seed, i)))
        except SamplingError as err:
            raise SamplingError(err.step) from ValueError(f"candidate {i} failed")
    return out
