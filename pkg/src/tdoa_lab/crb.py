"""
Fisher information and Cramér–Rao bounds for TDOA localization with and
without sensor position errors.

Three routes to the source block ``C1`` of the joint bound are provided:

* ``exact``: invert the full ``(D + DN)`` Fisher matrix and take its top-left block,
* ``block``: the Schur-complement formula in terms of ``J1`` and ``J2``,
* ``simplified``: the trace written with the thin SVD of ``J1`` and the
  projector ``I - U1 U1^T``.

For the full-set TDOA model they all satisfy
``tr(C1) = (1 + N*K) * tr(C')`` with ``K = sigma_loc**2 / (c**2 * sigma_t**2)``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .errors import DegenerateGeometryError, NumericalConsistencyError
from .geometry import SensorArray
from .jacobians import JacobianBlocks, build_blocks, build_joint
from .model import NoiseModel, covariance

#: Condition-number ceiling above which an information matrix is called degenerate.
MAX_CONDITION = 1e12

#: Relative tolerance for the internal exact-vs-block consistency assertion.
AGREEMENT_TOL = 1e-8

REPORT_CSV_HEADER = ["N", "D", "K", "tr_c_prime", "tr_c1", "gap", "residual"]


@dataclass(frozen=True)
class CrbMatrices:
    c_full: np.ndarray
    c1: np.ndarray
    c_prime: np.ndarray
    c1_block: np.ndarray


@dataclass(frozen=True)
class CrbReport:
    n: int
    dim: int
    k_factor: float
    trace_c_prime: float
    trace_c1: float
    gap: float
    predicted_gap: float
    equality_residual: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self) -> list[str]:
        return [
            str(self.n),
            str(self.dim),
            repr(self.k_factor),
            repr(self.trace_c_prime),
            repr(self.trace_c1),
            repr(self.gap),
            repr(self.equality_residual),
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_CSV_HEADER)
        writer.writerow(self.csv_row())
        return buf.getvalue()


def _check_sigma_t(noise: NoiseModel):
    if not noise.sigma_t > 0:
        raise ValueError("sigma_t must be positive; the Fisher information is unbounded at zero TDOA noise")


def _inverse_factor(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis ``Q`` of range(a) and ``P`` with ``(a^T a)^{-1} = P P^T``.

    Works on the column-equilibrated QR factorization of ``a`` so that
    ``a^T a`` is never formed; its condition number is judged on the
    equilibrated factor (squared) against :data:`MAX_CONDITION`.
    """
    scale = np.linalg.norm(a, axis=0)
    if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
        raise DegenerateGeometryError(f"{what} has a zero column")
    q, r = np.linalg.qr(a / scale)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] <= 0 or (sv[0] / sv[-1]) ** 2 > MAX_CONDITION:
        raise DegenerateGeometryError(f"{what} is rank deficient (condition number > {MAX_CONDITION:g})")
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    return q, r_inv / scale[:, None]


def _gram_inverse(factor: np.ndarray) -> np.ndarray:
    inv = factor @ factor.T
    return 0.5 * (inv + inv.T)


def fim(joint: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Fisher information ``J^T Sigma^{-1} J`` for a diagonal covariance.

    ``sigma`` may be the covariance matrix or the vector of its diagonal.
    Raises :class:`DegenerateGeometryError` if the result is numerically
    singular.
    """
    var = np.diag(sigma) if np.ndim(sigma) == 2 else np.asarray(sigma, dtype=float)
    if np.any(var <= 0):
        raise ValueError("covariance must be positive definite")
    weighted = joint / var[:, None]
    f = joint.T @ weighted
    f = 0.5 * (f + f.T)
    d = np.sqrt(np.diag(f))
    if np.any(d <= 0):
        raise DegenerateGeometryError("Fisher information has a zero diagonal entry")
    eig = np.linalg.eigvalsh(f / np.outer(d, d))
    if eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
        raise DegenerateGeometryError(f"Fisher information is rank deficient (condition number > {MAX_CONDITION:g})")
    return f


def _c_prime(blocks: JacobianBlocks, sigma_t: float) -> np.ndarray:
    _, factor = _inverse_factor(blocks.j1, "J1")
    return sigma_t**2 * _gram_inverse(factor)


def crb_without_errors(source, array: SensorArray, noise: NoiseModel) -> tuple[np.ndarray, float]:
    """Bound for known sensor positions: ``C' = sigma_t**2 (J1^T J1)^{-1}`` and its trace."""
    _check_sigma_t(noise)
    blocks = build_blocks(source, array, noise.c)
    c_prime = _c_prime(blocks, noise.sigma_t)
    return c_prime, float(np.trace(c_prime))


def c1_block_formula(blocks: JacobianBlocks, noise: NoiseModel) -> np.ndarray:
    """``C1`` via the Schur complement of the sensor block.

    ``J2^T J2 - J2^T J1 (J1^T J1)^{-1} J1^T J2`` is evaluated as ``(P J2)^T (P J2)``
    with ``P`` the projector onto the orthogonal complement of range(J1);
    subtracting before squaring keeps the near-null translation directions
    accurate when ``N*K`` is large.
    """
    _check_sigma_t(noise)
    j1, j2 = blocks.j1, blocks.j2
    q1, factor = _inverse_factor(j1, "J1")
    g_inv = _gram_inverse(factor)
    if noise.sigma_loc == 0:
        return noise.sigma_t**2 * g_inv
    ratio = noise.sigma_t**2 / noise.sigma_loc**2
    q1t_j2 = q1.T @ j2
    pj2 = j2 - q1 @ q1t_j2
    schur = pj2.T @ pj2 + ratio * np.eye(j2.shape[1])
    schur = 0.5 * (schur + schur.T)
    left = g_inv @ (j1.T @ j2)  # (J1^T J1)^{-1} J1^T J2
    inner = linalg.solve(schur, left.T, assume_a="pos")
    c1 = noise.sigma_t**2 * (g_inv + left @ inner)
    return 0.5 * (c1 + c1.T)


def _whitened_joint(blocks: JacobianBlocks, noise: NoiseModel) -> np.ndarray:
    joint = build_joint(blocks)
    m = blocks.j1.shape[0]
    joint[:m] /= noise.sigma_t
    joint[m:] /= noise.sigma_loc
    return joint


def crb_with_errors_exact(source, array: SensorArray, noise: NoiseModel) -> CrbMatrices:
    """Joint bound by direct inversion of the full Fisher matrix.

    ``F = J^T Sigma^{-1} J = A^T A`` with ``A = Sigma^{-1/2} J``; the inverse is
    taken as ``R^{-1} R^{-T}`` from the QR factorization of ``A``, which
    avoids squaring the condition number. The top-left ``D x D`` block of the
    inverse is ``C1``. The block formula is evaluated as well and must agree
    to :data:`AGREEMENT_TOL` (relative, max norm), otherwise
    :class:`NumericalConsistencyError` is raised. With ``sigma_loc == 0`` the
    sensors are known exactly and ``C1 = C'``.
    """
    _check_sigma_t(noise)
    blocks = build_blocks(source, array, noise.c)
    c_prime = _c_prime(blocks, noise.sigma_t)
    dim, dn = array.dim, array.dim * array.n
    if noise.sigma_loc == 0:
        c_full = np.zeros((dim + dn, dim + dn))
        c_full[:dim, :dim] = c_prime
        return CrbMatrices(c_full, c_prime.copy(), c_prime, c_prime.copy())

    _, factor = _inverse_factor(_whitened_joint(blocks, noise), "Fisher information")
    c_full = _gram_inverse(factor)
    c1 = c_full[:dim, :dim].copy()
    c1_block = c1_block_formula(blocks, noise)
    scale = np.max(np.abs(c1))
    if np.max(np.abs(c1 - c1_block)) > AGREEMENT_TOL * scale:
        raise NumericalConsistencyError("direct inversion and block formula disagree for C1")
    return CrbMatrices(c_full, c1, c_prime, c1_block)


def trace_c1_from_blocks(blocks: JacobianBlocks, noise: NoiseModel) -> float:
    """``tr(C1)`` through the thin SVD of ``J1`` and the projector onto its complement."""
    _check_sigma_t(noise)
    j1, j2 = blocks.j1, blocks.j2
    u1, s1, _ = np.linalg.svd(j1, full_matrices=False)
    if s1[-1] <= s1[0] / np.sqrt(MAX_CONDITION):
        raise DegenerateGeometryError("J1 is rank deficient")
    trace_c_prime = noise.sigma_t**2 * float(np.sum(1.0 / s1**2))
    if noise.sigma_loc == 0:
        return trace_c_prime
    ratio = noise.sigma_t**2 / noise.sigma_loc**2
    pj2 = j2 - u1 @ (u1.T @ j2)  # (I - U1 U1^T) J2
    inner = pj2.T @ pj2 + ratio * np.eye(j2.shape[1])
    inner = 0.5 * (inner + inner.T)
    w = (u1 / s1**2).T @ j2  # (Sigma1^T Sigma1)^{-1} U1^T J2, D x DN
    v = u1.T @ j2  # D x DN
    solved = linalg.solve(inner, v.T, assume_a="pos")
    extra = float(np.trace(w @ solved))
    return trace_c_prime + noise.sigma_t**2 * extra


def trace_c1_simplified(source, array: SensorArray, noise: NoiseModel) -> float:
    """``tr(C1)`` via the SVD-simplified trace expression."""
    return trace_c1_from_blocks(build_blocks(source, array, noise.c), noise)


def gap(source, array: SensorArray, noise: NoiseModel) -> tuple[float, float]:
    """Return ``(f, predicted)``: ``f = tr(C1) - tr(C')`` and ``predicted = N*K*tr(C')``."""
    mats = crb_with_errors_exact(source, array, noise)
    tr_cp = float(np.trace(mats.c_prime))
    f = float(np.trace(mats.c1)) - tr_cp
    return f, array.n * noise.k_factor * tr_cp


def equality_report(source, array: SensorArray, noise: NoiseModel) -> CrbReport:
    """Evaluate both bounds and the relative residual of the linear trace equality."""
    mats = crb_with_errors_exact(source, array, noise)
    tr_cp = float(np.trace(mats.c_prime))
    tr_c1 = float(np.trace(mats.c1))
    k = noise.k_factor
    predicted = array.n * k * tr_cp
    residual = abs(tr_c1 - (1.0 + array.n * k) * tr_cp) / tr_c1
    return CrbReport(
        n=array.n,
        dim=array.dim,
        k_factor=k,
        trace_c_prime=tr_cp,
        trace_c1=tr_c1,
        gap=tr_c1 - tr_cp,
        predicted_gap=predicted,
        equality_residual=residual,
    )
