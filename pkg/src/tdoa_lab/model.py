"""
Full-set TDOA measurement model.

Pairs are enumerated reference-major: ``(2,1), (3,1), ..., (N,1), (3,2), ...,
(N,N-1)``, and the entry for pair ``(i, j)`` is
``(||s - x_i|| - ||s - x_j||) / c``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import SensorArray

SPEED_OF_SOUND = 343.0  # m/s, air at about 20 C


@lru_cache(maxsize=64)
def _pair_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    i_idx, j_idx = [], []
    for j in range(n - 1):
        for i in range(j + 1, n):
            i_idx.append(i)
            j_idx.append(j)
    i_arr = np.array(i_idx, dtype=int)
    j_arr = np.array(j_idx, dtype=int)
    i_arr.setflags(write=False)
    j_arr.setflags(write=False)
    return i_arr, j_arr


def pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """0-based ``(i, j)`` index arrays of the canonical pair order for ``n`` sensors."""
    if n < 2:
        raise ValueError(f"need at least 2 sensors, got {n}")
    return _pair_arrays(n)


def pair_order(n: int) -> list[tuple[int, int]]:
    """Canonical 1-based pair list of length ``n*(n-1)/2``."""
    i_arr, j_arr = pair_indices(n)
    return [(int(i) + 1, int(j) + 1) for i, j in zip(i_arr, j_arr)]


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def pair_to_flat(i: int, j: int, n: int) -> int:
    """Flat 0-based position of 1-based pair ``(i, j)``, ``i > j``."""
    if not (1 <= j < i <= n):
        raise ValueError(f"invalid pair ({i}, {j}) for n={n}")
    # rows before reference j: sum_{k=1}^{j-1} (n - k)
    offset = (j - 1) * n - (j - 1) * j // 2
    return offset + (i - j - 1)


def flat_to_pair(k: int, n: int) -> tuple[int, int]:
    i_arr, j_arr = pair_indices(n)
    return int(i_arr[k]) + 1, int(j_arr[k]) + 1


@dataclass(frozen=True)
class NoiseModel:
    """TDOA noise std ``sigma_t`` (s), sensor position noise std ``sigma_loc`` (m), speed ``c`` (m/s)."""

    sigma_t: float
    sigma_loc: float
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"propagation speed c must be positive, got {self.c}")
        if self.sigma_t < 0 or self.sigma_loc < 0:
            raise ValueError("noise standard deviations must be non-negative")

    @property
    def k_factor(self) -> float:
        """Dimensionless ratio ``sigma_loc**2 / (c**2 * sigma_t**2)``."""
        if self.sigma_loc == 0:
            return 0.0
        if self.sigma_t == 0:
            return float("inf")
        return self.sigma_loc**2 / (self.c**2 * self.sigma_t**2)


@dataclass(frozen=True)
class TdoaVector:
    values: np.ndarray
    n: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.shape[0] != n_pairs(self.n):
            raise ValueError(f"TDOA vector for n={self.n} must have {n_pairs(self.n)} entries")
        object.__setattr__(self, "values", v)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return pair_order(self.n)

    def value(self, i: int, j: int) -> float:
        """TDOA for 1-based pair ``(i, j)``; ``value(j, i) == -value(i, j)``."""
        if i == j:
            return 0.0
        if i > j:
            return float(self.values[pair_to_flat(i, j, self.n)])
        return -float(self.values[pair_to_flat(j, i, self.n)])

    def labels(self) -> list[str]:
        return [f"t_{i}_{j}" for i, j in self.pairs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.labels())
        writer.writerow([repr(float(v)) for v in self.values])
        return buf.getvalue()


def distances(source, array: SensorArray) -> np.ndarray:
    s = array.check_source(source)
    return np.linalg.norm(array.positions - s, axis=1)


def tdoa_values(source, positions: np.ndarray, c: float) -> np.ndarray:
    """Raw TDOA array for positions ``(N, D)`` without validation (hot path)."""
    d = np.linalg.norm(positions - source, axis=1)
    i_arr, j_arr = pair_indices(positions.shape[0])
    return (d[i_arr] - d[j_arr]) / c


def tdoa_true(source, array: SensorArray, c: float = SPEED_OF_SOUND) -> TdoaVector:
    """Noiseless full-set TDOA vector."""
    if not c > 0:
        raise ValueError(f"propagation speed c must be positive, got {c}")
    d = distances(source, array)
    i_arr, j_arr = pair_indices(array.n)
    return TdoaVector((d[i_arr] - d[j_arr]) / c, array.n)


@dataclass(frozen=True)
class MeasurementBundle:
    """Noisy TDOA vector ``t`` and stacked sensor-position measurements ``m``."""

    tdoa: TdoaVector
    sensor_meas: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.sensor_meas, dtype=float).reshape(-1)
        if m.shape[0] % self.tdoa.n != 0 or m.shape[0] // self.tdoa.n not in (2, 3):
            raise ValueError("sensor_meas length must be D*N with D in {2, 3}")
        object.__setattr__(self, "sensor_meas", m)

    @property
    def n(self) -> int:
        return self.tdoa.n

    @property
    def dim(self) -> int:
        return self.sensor_meas.shape[0] // self.n

    def sensor_positions(self) -> np.ndarray:
        return self.sensor_meas.reshape(self.n, self.dim)

    def z(self) -> np.ndarray:
        """Stacked measurement vector ``[t, m]``."""
        return np.concatenate([self.tdoa.values, self.sensor_meas])

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "dim": self.dim,
                "pairs": [list(p) for p in self.tdoa.pairs],
                "tdoa": self.tdoa.values.tolist(),
                "sensor_meas": self.sensor_meas.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MeasurementBundle":
        d = json.loads(text)
        return cls(TdoaVector(np.array(d["tdoa"]), int(d["n"])), np.array(d["sensor_meas"]))


def simulate_measurements(source, array: SensorArray, noise: NoiseModel, seed: int) -> MeasurementBundle:
    """Draw one noisy measurement set.

    Each of the M TDOA entries receives independent ``N(0, sigma_t**2)`` noise
    and each sensor coordinate independent ``N(0, sigma_loc**2)`` noise.
    """
    truth = tdoa_true(source, array, noise.c)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0, size=truth.values.shape) * noise.sigma_t
    v = rng.normal(0.0, 1.0, size=array.n * array.dim) * noise.sigma_loc
    return MeasurementBundle(TdoaVector(truth.values + w, array.n), array.stacked() + v)


def covariance(noise: NoiseModel, n: int, dim: int, joint: bool = True) -> np.ndarray:
    """Diagonal measurement covariance ``diag(sigma_t**2 I_M, sigma_loc**2 I_{dim*n})``.

    With ``joint=False`` only the TDOA block is returned.
    """
    if noise.sigma_t <= 0:
        raise ValueError("sigma_t must be positive for an invertible covariance")
    m = n_pairs(n)
    diag = [np.full(m, noise.sigma_t**2)]
    if joint:
        if noise.sigma_loc <= 0:
            raise ValueError("sigma_loc must be positive for an invertible joint covariance")
        diag.append(np.full(dim * n, noise.sigma_loc**2))
    return np.diag(np.concatenate(diag))
