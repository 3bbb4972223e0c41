"""Residual feedforward denoiser with manual reverse-mode gradients.

Tabular stand-in for an image denoiser: 10 inputs plus sinusoidal time
features and a condition embedding (learned class rows + projected
environment scalars, with a learned null vector for the unconditional
branch), three hidden layers of width 128.
"""

from __future__ import annotations

import numpy as np

X_DIM = 10
T_DIM = 32
C_DIM = 32
HIDDEN = 128
IN_DIM = X_DIM + T_DIM + C_DIM

PARAM_SHAPES = {
    "t_proj_W": (T_DIM, T_DIM),
    "t_proj_b": (T_DIM,),
    "class_emb": (2, C_DIM),
    "env_W": (4, C_DIM),
    "env_b": (C_DIM,),
    "null_vec": (C_DIM,),
    "W1": (IN_DIM, HIDDEN),
    "b1": (HIDDEN,),
    "W2": (HIDDEN, HIDDEN),
    "b2": (HIDDEN,),
    "W3": (HIDDEN, HIDDEN),
    "b3": (HIDDEN,),
    "W_out": (HIDDEN, X_DIM),
    "b_out": (X_DIM,),
}


def time_features(t: np.ndarray, T: int) -> np.ndarray:
    """Sinusoidal features of the (1-indexed) timestep, shape (B, T_DIM)."""
    half = T_DIM // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = np.asarray(t, dtype=float)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class DenoiserNet:
    def __init__(self, params: dict[str, np.ndarray], T: int):
        for name, shape in PARAM_SHAPES.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected {shape}, got {params[name].shape}")
        self.params = params
        self.T = T
        self.null_uses = 0  # instrumentation: conditioning-dropout counter

    @classmethod
    def init(cls, T: int, seed: int) -> "DenoiserNet":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape in PARAM_SHAPES.items():
            if name.endswith("_b") or name.startswith("b"):
                params[name] = np.zeros(shape)
            elif name == "null_vec":
                params[name] = rng.normal(0.0, 0.1, shape)
            else:
                fan_in = shape[0]
                params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
        return cls(params, T)

    def _cond_embedding(self, cls_idx, env, drop_mask):
        """(B, C_DIM) condition embedding; dropped rows get the null vector."""
        p = self.params
        B = len(drop_mask)
        if cls_idx is None:
            ce_cond = np.zeros((B, C_DIM))
        else:
            ce_cond = p["class_emb"][cls_idx] + env @ p["env_W"] + p["env_b"]
        ce = np.where(drop_mask[:, None], p["null_vec"][None, :], ce_cond)
        self.null_uses += int(drop_mask.sum())
        return ce, ce_cond

    def forward(self, x, t, cls_idx=None, env=None, drop_mask=None,
                want_cache=False):
        """Predict noise for a batch.

        x: (B, 10); t: (B,) 1-indexed steps; cls_idx: (B,) int or None for
        fully unconditional; env: (B, 4) normalized; drop_mask: (B,) bool
        rows that use the null condition.
        """
        p = self.params
        x = np.atleast_2d(x)
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        if drop_mask is None:
            drop_mask = np.full(B, cls_idx is None)
        tf = time_features(t, self.T)
        te = tf @ p["t_proj_W"] + p["t_proj_b"]
        ce, _ = self._cond_embedding(cls_idx, env, drop_mask)
        z = np.concatenate([x, te, ce], axis=1)
        a1 = z @ p["W1"] + p["b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ p["W2"] + p["b2"]
        h2 = h1 + np.maximum(a2, 0.0)
        a3 = h2 @ p["W3"] + p["b3"]
        h3 = h2 + np.maximum(a3, 0.0)
        out = h3 @ p["W_out"] + p["b_out"]
        if not want_cache:
            return out
        cache = dict(tf=tf, env=env, cls_idx=cls_idx, drop_mask=drop_mask,
                     z=z, a1=a1, h1=h1, a2=a2, h2=h2, a3=a3, h3=h3)
        return out, cache

    def backward(self, dout: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        """Gradients of the loss w.r.t. every parameter, given d(loss)/d(out)."""
        p = self.params
        g = {name: np.zeros_like(arr) for name, arr in p.items()}

        g["W_out"] = cache["h3"].T @ dout
        g["b_out"] = dout.sum(axis=0)
        dh3 = dout @ p["W_out"].T

        d3 = dh3 * (cache["a3"] > 0)
        g["W3"] = cache["h2"].T @ d3
        g["b3"] = d3.sum(axis=0)
        dh2 = dh3 + d3 @ p["W3"].T

        d2 = dh2 * (cache["a2"] > 0)
        g["W2"] = cache["h1"].T @ d2
        g["b2"] = d2.sum(axis=0)
        dh1 = dh2 + d2 @ p["W2"].T

        d1 = dh1 * (cache["a1"] > 0)
        g["W1"] = cache["z"].T @ d1
        g["b1"] = d1.sum(axis=0)
        dz = d1 @ p["W1"].T

        dte = dz[:, X_DIM:X_DIM + T_DIM]
        dce = dz[:, X_DIM + T_DIM:]

        g["t_proj_W"] = cache["tf"].T @ dte
        g["t_proj_b"] = dte.sum(axis=0)

        drop = cache["drop_mask"]
        g["null_vec"] = dce[drop].sum(axis=0)
        if cache["cls_idx"] is not None:
            kept = ~drop
            dce_kept = dce[kept]
            np.add.at(g["class_emb"], np.asarray(cache["cls_idx"])[kept], dce_kept)
            g["env_W"] = cache["env"][kept].T @ dce_kept
            g["env_b"] = dce_kept.sum(axis=0)
        return g
