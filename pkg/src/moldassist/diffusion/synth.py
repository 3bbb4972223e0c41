"""Synthetic benchmark dataset with known class-conditional structure.

Two product classes with Gaussian parameter distributions whose means are
separated dimension by dimension with alternating sign, so both generative
fidelity (conditional means) and the direction of every class-mean gap can
be checked against ground truth. Environment readings are independent of
the parameters.
"""

from __future__ import annotations

import csv

import numpy as np

from .types import EnvCondition, ProcessParams, PARAM_NAMES

# physical centers and half-ranges per parameter
_CENTERS = np.array([35.0, 35.0, 35.0, 120.0, 120.0, 120.0, 30.0, 30.0, 30.0, 2.5])
_HALF = np.array([25.0, 25.0, 25.0, 40.0, 40.0, 40.0, 20.0, 20.0, 20.0, 2.5])

# class-mean offsets: alternating sign, 35% of the half-range
_OFFSET = 0.35 * _HALF * np.array([1, -1, 1, -1, 1, -1, 1, -1, 1, -1])
_SD = 0.10 * _HALF

ENV_RANGES = np.array([[18.0, 30.0], [30.0, 60.0], [15.0, 30.0], [30.0, 60.0]])

SYNTH_TRUTH = {
    "mean_good": _CENTERS - _OFFSET,
    "mean_defective": _CENTERS + _OFFSET,
    "sd": _SD,
    # sign of (defective mean - good mean) per dimension
    "gap_sign": np.sign(_OFFSET),
}


def make_synthetic_dataset(n: int, seed: int = 0,
                           defective_fraction: float = 0.5):
    rng = np.random.default_rng(seed)
    dataset = []
    for _ in range(n):
        cls = int(rng.random() < defective_fraction)
        mean = SYNTH_TRUTH["mean_defective"] if cls else SYNTH_TRUTH["mean_good"]
        values = rng.normal(mean, _SD)
        values[9] = max(values[9], 0.0)  # hold time cannot be negative
        env = rng.uniform(ENV_RANGES[:, 0], ENV_RANGES[:, 1])
        dataset.append((
            EnvCondition(cls, env[0], env[1], env[2], env[3]),
            ProcessParams(tuple(float(v) for v in values)),
        ))
    return dataset


def write_dataset_tsv(dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["class", "factory_temperature", "factory_humidity",
                         "machine_temperature", "machine_humidity", *PARAM_NAMES])
        for env, pp in dataset:
            writer.writerow([env.cls, *env.env_vector(), *pp.values])


def read_dataset_tsv(path: str):
    dataset = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if len(header) != 5 + len(PARAM_NAMES):
            raise ValueError(f"expected {5 + len(PARAM_NAMES)} columns")
        for row in reader:
            cls = int(float(row[0]))
            env = [float(v) for v in row[1:5]]
            values = tuple(float(v) for v in row[5:])
            dataset.append((EnvCondition(cls, *env), ProcessParams(values)))
    return dataset
