"""
Jacobians of the full-set TDOA model.

``j1 = dT/ds`` has row ``(u_i - u_j)^T / c`` for pair ``(i, j)``, with
``u_i = (s - x_i) / ||s - x_i||``. ``j2 = dT/dx`` carries ``-u_i^T / c`` in
sensor i's column block and ``+u_j^T / c`` in sensor j's, columns ordered
sensor-major (x1, y1[, z1], x2, ...). Moving the source and every sensor by the
same vector leaves T unchanged, hence ``j1 @ v + j2 @ tile(v) = 0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import SensorArray
from .model import SPEED_OF_SOUND, pair_indices, tdoa_values


@dataclass(frozen=True)
class JacobianBlocks:
    j1: np.ndarray
    j2: np.ndarray
    unit_vectors: np.ndarray  # (N, D), row i is u_i

    @property
    def n(self) -> int:
        return self.unit_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.unit_vectors.shape[1]


def _blocks(source: np.ndarray, positions: np.ndarray, c: float) -> JacobianBlocks:
    n, dim = positions.shape
    diff = source - positions
    u = diff / np.linalg.norm(diff, axis=1)[:, None]
    i_arr, j_arr = pair_indices(n)
    m = i_arr.shape[0]
    j1 = (u[i_arr] - u[j_arr]) / c
    j2 = np.zeros((m, n, dim))
    rows = np.arange(m)
    j2[rows, i_arr] = -u[i_arr] / c
    j2[rows, j_arr] = u[j_arr] / c
    return JacobianBlocks(j1, j2.reshape(m, n * dim), u)


def build_blocks(source, array: SensorArray, c: float = SPEED_OF_SOUND) -> JacobianBlocks:
    """Jacobian blocks at the given source/sensor geometry."""
    if not c > 0:
        raise ValueError(f"propagation speed c must be positive, got {c}")
    s = array.check_source(source)
    return _blocks(s, array.positions, c)


def build_joint(blocks: JacobianBlocks) -> np.ndarray:
    """Stack blocks into ``[[j1, j2], [0, I]]`` of shape ``(M + DN, D + DN)``."""
    m, d = blocks.j1.shape
    dn = blocks.j2.shape[1]
    joint = np.zeros((m + dn, d + dn))
    joint[:m, :d] = blocks.j1
    joint[:m, d:] = blocks.j2
    joint[m:, d:] = np.eye(dn)
    return joint


def finite_difference_blocks(source, array: SensorArray, c: float = SPEED_OF_SOUND, step: float = 1e-6):
    """Central-difference approximations of ``j1`` and ``j2`` (validation oracle)."""
    s = array.check_source(source)
    pos = array.positions
    n, dim = pos.shape
    m = n * (n - 1) // 2
    fd1 = np.zeros((m, dim))
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = step
        fd1[:, k] = (tdoa_values(s + e, pos, c) - tdoa_values(s - e, pos, c)) / (2 * step)
    fd2 = np.zeros((m, n * dim))
    for col in range(n * dim):
        e = np.zeros(n * dim)
        e[col] = step
        plus = tdoa_values(s, pos + e.reshape(n, dim), c)
        minus = tdoa_values(s, pos - e.reshape(n, dim), c)
        fd2[:, col] = (plus - minus) / (2 * step)
    return fd1, fd2


def dump_blocks_csv(blocks: JacobianBlocks, out_dir) -> list[Path]:
    """Write ``j1.csv`` and ``j2.csv`` with pair-labelled rows; returns the paths."""
    out_dir = Path(out_dir)
    i_arr, j_arr = pair_indices(blocks.n)
    labels = [f"t_{i + 1}_{j + 1}" for i, j in zip(i_arr, j_arr)]
    axes = "xyz"[: blocks.dim]
    paths = []
    for name, mat, cols in (
        ("j1.csv", blocks.j1, [f"s{a}" for a in axes]),
        ("j2.csv", blocks.j2, [f"x{k + 1}{a}" for k in range(blocks.n) for a in axes]),
    ):
        path = out_dir / name
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["pair"] + cols)
            for label, row in zip(labels, mat):
                writer.writerow([label] + [repr(float(v)) for v in row])
        paths.append(path)
    return paths
