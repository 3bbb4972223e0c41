"""Checkpoint serialization: versioned JSON header + named flat weight arrays.

Arrays are stored uncompressed in an .npz so the round trip is bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from .net import DenoiserNet, PARAM_SHAPES
from .schedule import make_schedule
from .train import DiffusionModel
from .types import Normalizer

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(model: DiffusionModel, path: str) -> None:
    header = {
        "version": FORMAT_VERSION,
        "topology": {name: list(shape) for name, shape in PARAM_SHAPES.items()},
        "T": model.sched.T,
        "schedule": {
            "kind": model.sched.kind,
            "beta_min": model.sched.beta_min,
            "beta_max": model.sched.beta_max,
        },
    }
    arrays = {f"net.{name}": arr for name, arr in model.net.params.items()}
    arrays["norm.param_lo"] = model.param_normalizer.lo
    arrays["norm.param_hi"] = model.param_normalizer.hi
    arrays["norm.env_lo"] = model.env_normalizer.lo
    arrays["norm.env_hi"] = model.env_normalizer.hi
    arrays["limits.lo"] = model.limits_lo
    arrays["limits.hi"] = model.limits_hi
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str) -> DiffusionModel:
    with np.load(path) as data:
        arrays = {name: data[name] for name in data.files}
    header = json.loads(bytes(arrays.pop("__header__")).decode())
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version: {header.get('version')}")
    for name, shape in PARAM_SHAPES.items():
        got = arrays[f"net.{name}"].shape
        if list(got) != header["topology"][name] or got != shape:
            raise CheckpointError(f"topology mismatch for {name}: {got}")
    sched = make_schedule(header["T"], header["schedule"]["kind"],
                          header["schedule"]["beta_min"],
                          header["schedule"]["beta_max"])
    net = DenoiserNet({name: arrays[f"net.{name}"] for name in PARAM_SHAPES},
                      T=header["T"])
    return DiffusionModel(
        net=net, sched=sched,
        param_normalizer=Normalizer(arrays["norm.param_lo"], arrays["norm.param_hi"]),
        env_normalizer=Normalizer(arrays["norm.env_lo"], arrays["norm.env_hi"]),
        limits_lo=arrays["limits.lo"], limits_hi=arrays["limits.hi"],
    )
