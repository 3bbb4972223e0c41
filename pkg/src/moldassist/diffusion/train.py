"""Simplified-loss training with condition dropout.

Minimizes ||eps - eps_theta(sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, y, t)||^2
over uniformly drawn t, replacing the condition embedding with the learned
null token with probability p per example. Plain SGD with momentum; fully
deterministic for a fixed seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .net import DenoiserNet
from .schedule import NoiseSchedule
from .types import EnvCondition, Normalizer, ProcessParams

log = logging.getLogger(__name__)


class TrainingDiverged(Exception):
    def __init__(self, epoch: int, loss: float, lr: float):
        super().__init__(
            f"non-finite loss at epoch {epoch} (loss={loss}, lr={lr}); "
            "reduce the learning rate or check the dataset for non-finite values"
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 128
    learning_rate: float = 3e-3
    momentum: float = 0.9
    cond_drop_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise ValueError("cond_drop_prob must be in [0, 1]")


@dataclass
class DiffusionModel:
    """Trained denoiser plus everything needed to sample from it."""
    net: DenoiserNet
    sched: NoiseSchedule
    param_normalizer: Normalizer
    env_normalizer: Normalizer
    # machine limits used to clamp denormalized samples, per parameter
    limits_lo: np.ndarray = None
    limits_hi: np.ndarray = None
    loss_history: list = None  # per-epoch mean training loss

    def __post_init__(self):
        if self.limits_lo is None:
            self.limits_lo = self.param_normalizer.lo.copy()
        if self.limits_hi is None:
            self.limits_hi = self.param_normalizer.hi.copy()


def _dataset_arrays(dataset: list[tuple[EnvCondition, ProcessParams]]):
    cls = np.array([env.cls for env, _ in dataset])
    envs = np.stack([env.env_vector() for env, _ in dataset])
    params = np.stack([pp.as_vector() for _, pp in dataset])
    return cls, envs, params


def train(dataset: list[tuple[EnvCondition, ProcessParams]],
          cfg: TrainConfig, sched: NoiseSchedule) -> DiffusionModel:
    if not dataset:
        raise ValueError("dataset must be non-empty")
    cls, envs, params = _dataset_arrays(dataset)
    if not (np.isfinite(envs).all() and np.isfinite(params).all()):
        raise ValueError("dataset contains non-finite values")

    param_norm = Normalizer.fit(params)
    env_norm = Normalizer.fit(envs)
    x0_all = param_norm.normalize(params)
    env_all = env_norm.normalize(envs)
    n = len(dataset)

    net = DenoiserNet.init(sched.T, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(arr) for name, arr in net.params.items()}

    loss_history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x0 = x0_all[idx]
            B = len(idx)
            t = rng.integers(1, sched.T + 1, size=B)
            eps = rng.standard_normal((B, x0.shape[1]))
            abar = sched.alpha_bar[t - 1][:, None]
            xt = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
            drop = rng.random(B) < cfg.cond_drop_prob

            pred, cache = net.forward(xt, t, cls_idx=cls[idx], env=env_all[idx],
                                      drop_mask=drop, want_cache=True)
            diff = pred - eps
            loss = float(np.mean(diff ** 2))
            epoch_losses.append(loss)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss, cfg.learning_rate)

            dout = 2.0 * diff / diff.size
            grads = net.backward(dout, cache)
            for name in net.params:
                velocity[name] = cfg.momentum * velocity[name] - \
                    cfg.learning_rate * grads[name]
                net.params[name] = net.params[name] + velocity[name]

        loss_history.append(float(np.mean(epoch_losses)))
        if epoch == 0 or (epoch + 1) % 50 == 0:
            log.info("epoch %d mean loss %.5f", epoch + 1, loss_history[-1])

    return DiffusionModel(net=net, sched=sched, param_normalizer=param_norm,
                          env_normalizer=env_norm, loss_history=loss_history)
