"""
Numerical checks of the spectral facts behind the linear trace equality:

* every nonzero singular value of ``J2`` equals ``sqrt(N)/c`` (there are N-1),
* ``B = J2 J2^T`` satisfies ``B^T B = (N/c^2) B``,
* ``A = U2^T U1`` has all singular values equal to one,
* ``L = A^T [I - A A^T + I/(N K)]^{-1} A`` equals ``N K I_D``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .geometry import SensorArray
from .jacobians import JacobianBlocks, build_blocks
from .model import NoiseModel

#: Singular values below ``RANK_RTOL * sigma_max`` are treated as zero.
RANK_RTOL = 1e-8

LEMMA1_TOL = 1e-9
LEMMA2_TOL = 1e-9
B_PROPERTY_TOL = 1e-10
L_IDENTITY_TOL = 1e-8


@dataclass(frozen=True)
class SpectralReport:
    j2_singular_values: list[float]
    lemma1_residual: float
    a_singular_values: list[float]
    lemma2_residual: float
    l_matrix_residual: float
    b_property_residual: float

    def passed(self) -> dict[str, bool]:
        return {
            "lemma1": self.lemma1_residual < LEMMA1_TOL,
            "lemma2": self.lemma2_residual < LEMMA2_TOL,
            "l_identity": self.l_matrix_residual < L_IDENTITY_TOL,
            "b_property": self.b_property_residual < B_PROPERTY_TOL,
        }

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed()
        return json.dumps(d, indent=2)


def _numerical_rank(sv: np.ndarray) -> int:
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def j1_basis(blocks: JacobianBlocks) -> tuple[np.ndarray, np.ndarray]:
    """Thin-SVD left basis ``U1`` (M x D) and singular values of ``J1``."""
    u1, s1, _ = np.linalg.svd(blocks.j1, full_matrices=False)
    if _numerical_rank(s1) < blocks.dim:
        raise DegenerateGeometryError("J1 does not have full column rank")
    return u1, s1


def j2_basis(blocks: JacobianBlocks) -> tuple[np.ndarray, np.ndarray]:
    """Left basis ``U2`` (M x (N-1)) for the nonzero singular values of ``J2``, plus all singular values."""
    u2, s2, _ = np.linalg.svd(blocks.j2, full_matrices=False)
    rank = _numerical_rank(s2)
    if rank != blocks.n - 1:
        raise DegenerateGeometryError(f"J2 has numerical rank {rank}, expected {blocks.n - 1}")
    return u2[:, :rank], s2


def lemma1_from_blocks(blocks: JacobianBlocks, c: float) -> tuple[np.ndarray, float]:
    _, s2 = j2_basis(blocks)
    expected = np.sqrt(blocks.n) / c
    nonzero = s2[: blocks.n - 1]
    return s2, float(np.max(np.abs(nonzero - expected)) / expected)


def check_lemma1(source, array: SensorArray, c: float) -> tuple[np.ndarray, float]:
    """Singular values of ``J2`` and the max relative deviation of the N-1 nonzero ones from ``sqrt(N)/c``."""
    return lemma1_from_blocks(build_blocks(source, array, c), c)


def check_b_property(source, array: SensorArray, c: float) -> float:
    """Return ``||B^T B - (N/c^2) B||_max / ((N/c^2) ||B||_max)`` for ``B = J2 J2^T``."""
    blocks = build_blocks(source, array, c)
    return b_property_from_blocks(blocks, c)


def b_property_from_blocks(blocks: JacobianBlocks, c: float) -> float:
    b = blocks.j2 @ blocks.j2.T
    b = 0.5 * (b + b.T)
    scale = blocks.n / c**2
    return float(np.max(np.abs(b.T @ b - scale * b)) / (scale * np.max(np.abs(b))))


def lemma2_from_bases(u1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, float]:
    """Singular values of ``A = U2^T U1`` and their max deviation from one."""
    sa = np.linalg.svd(u2.T @ u1, compute_uv=False)
    return sa, float(np.max(np.abs(sa - 1.0)))


def check_lemma2(source, array: SensorArray, c: float) -> tuple[np.ndarray, float]:
    blocks = build_blocks(source, array, c)
    u1, _ = j1_basis(blocks)
    u2, _ = j2_basis(blocks)
    return lemma2_from_bases(u1, u2)


def l_matrix_from_bases(u1: np.ndarray, u2: np.ndarray, nk: float) -> np.ndarray:
    """Assemble ``L = U1^T U2 [U2^T (I - U1 U1^T) U2 + I/(N K)]^{-1} U2^T U1``."""
    a = u2.T @ u1
    proj = u2.T @ u2 - a @ a.T  # U2^T (I - U1 U1^T) U2
    inner = proj + np.eye(u2.shape[1]) / nk
    inner = 0.5 * (inner + inner.T)
    return a.T @ np.linalg.solve(inner, a)


def l_residual_from_bases(u1: np.ndarray, u2: np.ndarray, nk: float) -> float:
    l_mat = l_matrix_from_bases(u1, u2, nk)
    return float(np.max(np.abs(l_mat - nk * np.eye(u1.shape[1]))) / nk)


def check_l_identity(source, array: SensorArray, noise: NoiseModel) -> float:
    """Return ``||L - N K I_D||_max / (N K)``."""
    if not (noise.sigma_t > 0 and noise.sigma_loc > 0):
        raise ValueError("the L identity needs strictly positive sigma_t and sigma_loc")
    blocks = build_blocks(source, array, noise.c)
    u1, _ = j1_basis(blocks)
    u2, _ = j2_basis(blocks)
    return l_residual_from_bases(u1, u2, array.n * noise.k_factor)


def spectral_report(source, array: SensorArray, noise: NoiseModel) -> SpectralReport:
    """Run every check on one configuration."""
    blocks = build_blocks(source, array, noise.c)
    u1, _ = j1_basis(blocks)
    u2, _ = j2_basis(blocks)
    s2, r1 = lemma1_from_blocks(blocks, noise.c)
    sa, r2 = lemma2_from_bases(u1, u2)
    if noise.sigma_t > 0 and noise.sigma_loc > 0:
        rl = l_residual_from_bases(u1, u2, array.n * noise.k_factor)
    else:
        rl = 0.0
    return SpectralReport(
        j2_singular_values=[float(v) for v in s2],
        lemma1_residual=r1,
        a_singular_values=[float(v) for v in sa],
        lemma2_residual=r2,
        l_matrix_residual=rl,
        b_property_residual=b_property_from_blocks(blocks, noise.c),
    )
