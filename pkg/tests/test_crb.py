import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_config
from tdoa_lab.crb import (
    REPORT_CSV_HEADER,
    c1_block_formula,
    crb_with_errors_exact,
    crb_without_errors,
    equality_report,
    fim,
    gap,
    trace_c1_simplified,
)
from tdoa_lab.errors import DegenerateGeometryError
from tdoa_lab.geometry import SensorArray, build_cube, build_random_square, build_uaa
from tdoa_lab.jacobians import build_blocks, build_joint
from tdoa_lab.model import NoiseModel, covariance, pair_order


def dense_fim_oracle(source, arr, noise):
    """Independent FIM: loop-built Jacobian, explicit inverse covariance, dense triple product."""
    n, d = arr.n, arr.dim
    pairs = pair_order(n)
    m = len(pairs)
    jac = np.zeros((m + d * n, d + d * n))
    for row, (i, j) in enumerate(pairs):
        xi, xj = arr.positions[i - 1], arr.positions[j - 1]
        ui = (source - xi) / np.linalg.norm(source - xi)
        uj = (source - xj) / np.linalg.norm(source - xj)
        jac[row, :d] = (ui - uj) / noise.c
        jac[row, d + (i - 1) * d : d + i * d] = -ui / noise.c
        jac[row, d + (j - 1) * d : d + j * d] = uj / noise.c
    for k in range(d * n):
        jac[m + k, d + k] = 1.0
    sigma = np.diag([noise.sigma_t**2] * m + [noise.sigma_loc**2] * (d * n))
    return jac.T @ np.linalg.inv(sigma) @ jac


def test_fim_unit_covariance_and_symmetry():
    arr = build_uaa(5, 5.0)
    j = build_joint(build_blocks(np.array([0.3, 0.1]), arr, 343.0))
    f = fim(j, np.eye(j.shape[0]))
    np.testing.assert_allclose(f, j.T @ j, rtol=1e-14, atol=0)
    assert np.max(np.abs(f - f.T)) < 1e-12 * np.max(np.abs(f))


def test_fim_matches_dense_oracle():
    arr = build_uaa(5, 5.0)
    noise = NoiseModel(1e-4, 0.1)
    s = np.array([0.7, -0.4])
    f = fim(build_joint(build_blocks(s, arr, noise.c)), covariance(noise, 5, 2))
    oracle = dense_fim_oracle(s, arr, noise)
    assert np.max(np.abs(f - oracle)) <= 1e-12 * np.max(np.abs(oracle))


def test_fim_reports_degenerate_geometry():
    # sensors on a line through the source: J1 has rank 1
    arr = SensorArray([[1, 0], [2, 0], [3, 0], [-1, 0], [-2, 0]])
    j = build_joint(build_blocks(np.zeros(2), arr, 343.0))
    with pytest.raises(DegenerateGeometryError):
        fim(j, covariance(NoiseModel(1e-4, 0.1), 5, 2))
    with pytest.raises(DegenerateGeometryError):
        crb_without_errors(np.zeros(2), arr, NoiseModel(1e-4, 0.1))


def test_c_prime_scaling_and_oracle():
    arr = build_uaa(6, 5.0)
    _, t1 = crb_without_errors(np.zeros(2), arr, NoiseModel(1e-4, 0.1))
    _, t10 = crb_without_errors(np.zeros(2), arr, NoiseModel(1e-3, 0.1))
    assert t10 == pytest.approx(100 * t1, rel=1e-12)
    j1 = build_blocks(np.zeros(2), arr, 343.0).j1
    oracle = np.trace(np.linalg.inv(j1.T @ j1 / 1e-8))
    assert t1 == pytest.approx(oracle, rel=1e-10)
    # closed form for a UAA around the source: J1^T J1 = N^2 / (2 c^2) I
    assert t1 == pytest.approx(2 * 2 * 343.0**2 * 1e-8 / 36, rel=1e-12)


def test_exact_small_sigma_loc_limit():
    arr = build_uaa(6, 5.0)
    mats = crb_with_errors_exact(np.zeros(2), arr, NoiseModel(1e-4, 1e-9))
    assert (np.trace(mats.c1) - np.trace(mats.c_prime)) / np.trace(mats.c_prime) < 1e-6


def test_block_formula_matches_direct_inverse():
    rng = np.random.default_rng(7)
    for _ in range(100):
        s, arr, noise = random_config(rng)
        mats = crb_with_errors_exact(s, arr, noise)
        assert np.max(np.abs(mats.c1 - mats.c1_block)) <= 1e-9 * np.max(np.abs(mats.c1))


def test_k_equals_one_gives_factor_seven():
    noise = NoiseModel(1e-3, 0.343, 343.0)
    assert noise.k_factor == pytest.approx(1.0, rel=1e-12)
    arr = build_random_square(6, 10.0, None, 2, seed=5)
    mats = crb_with_errors_exact(np.zeros(2), arr, noise)
    assert np.trace(mats.c1) == pytest.approx(7 * np.trace(mats.c_prime), rel=1e-9)
    rep = equality_report(np.zeros(2), arr, noise)
    assert rep.trace_c1 / rep.trace_c_prime == pytest.approx(7.0, abs=1e-9)


def test_matrices_symmetric_positive_definite():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s, arr, noise = random_config(rng)
        mats = crb_with_errors_exact(s, arr, noise)
        for m in (mats.c_full, mats.c1, mats.c_prime):
            assert np.max(np.abs(m - m.T)) <= 1e-10 * np.max(np.abs(m))
            assert np.linalg.eigvalsh(m)[0] > 0
        np.testing.assert_allclose(mats.c1, mats.c_full[: arr.dim, : arr.dim], rtol=1e-9)


def test_simplified_matches_exact_on_many_configs():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        s, arr, noise = random_config(rng)
        exact = np.trace(crb_with_errors_exact(s, arr, noise).c1)
        worst = max(worst, abs(trace_c1_simplified(s, arr, noise) - exact) / exact)
    assert worst < 1e-9


def test_simplified_zero_sigma_loc():
    arr = build_cube(10.0)
    noise = NoiseModel(1e-4, 0.0)
    assert trace_c1_simplified(np.zeros(3), arr, noise) == pytest.approx(
        crb_without_errors(np.zeros(3), arr, noise)[1], rel=1e-12
    )
    mats = crb_with_errors_exact(np.zeros(3), arr, noise)
    np.testing.assert_array_equal(mats.c1, mats.c_prime)


def test_simplified_permutation_invariant():
    arr = build_random_square(9, 10.0, None, 3, seed=8)
    noise = NoiseModel(3e-5, 0.4)
    perm = np.random.default_rng(0).permutation(9)
    t0 = trace_c1_simplified(np.zeros(3), arr, noise)
    t1 = trace_c1_simplified(np.zeros(3), SensorArray(arr.positions[perm]), noise)
    assert t1 == pytest.approx(t0, rel=1e-9)


def test_gap():
    arr = build_random_square(8, 10.0, None, 3, seed=2)
    f, predicted = gap(np.zeros(3), arr, NoiseModel(1e-4, 0.0))
    assert f == 0 and predicted == 0
    noise = NoiseModel(2e-4, 0.3)
    f, predicted = gap(np.zeros(3), arr, noise)
    tr_c1 = equality_report(np.zeros(3), arr, noise).trace_c1
    assert abs(f - predicted) / tr_c1 < 1e-9
    f2, predicted2 = gap(np.zeros(3), arr, NoiseModel(2e-4, 0.6))
    assert predicted2 == pytest.approx(4 * predicted, rel=1e-12)
    _, tcp = crb_without_errors(np.zeros(3), arr, noise)
    _, tcp2 = crb_without_errors(np.zeros(3), arr, NoiseModel(2e-4, 0.6))
    assert tcp == tcp2


def test_ratio_depends_only_on_n_and_k():
    arr = build_random_square(7, 10.0, None, 2, seed=9)
    r1 = equality_report(np.zeros(2), arr, NoiseModel(1e-4, 0.1))
    r2 = equality_report(np.zeros(2), arr, NoiseModel(5e-4, 0.5))
    assert r1.k_factor == pytest.approx(r2.k_factor, rel=1e-12)
    assert r1.trace_c1 / r1.trace_c_prime == pytest.approx(r2.trace_c1 / r2.trace_c_prime, rel=1e-9)


def test_monotone_in_sigma_loc():
    arr = build_random_square(10, 10.0, None, 2, seed=4)
    traces = [equality_report(np.zeros(2), arr, NoiseModel(1e-4, sl)).trace_c1 for sl in np.linspace(0.01, 1, 25)]
    assert all(b >= a for a, b in zip(traces, traces[1:]))


def test_zero_sigma_t_rejected():
    with pytest.raises(ValueError):
        crb_with_errors_exact(np.zeros(2), build_uaa(6, 5.0), NoiseModel(0.0, 0.1))


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    dim=st.sampled_from([2, 3]),
    n=st.integers(4, 20),
    log_st=st.floats(-5, -3),
    log_sl=st.floats(-2, 0),
)
def test_equality_property(seed, dim, n, log_st, log_sl):
    arr = build_random_square(n, 10.0, None, dim, seed, source=np.zeros(dim))
    noise = NoiseModel(10**log_st, 10**log_sl)
    try:
        rep = equality_report(np.zeros(dim), arr, noise)
    except DegenerateGeometryError:
        return
    assert rep.equality_residual < 1e-9
    assert rep.trace_c_prime > 0 and rep.trace_c1 >= rep.trace_c_prime
    assert rep.gap >= -1e-12 * rep.trace_c1
    assert rep.k_factor >= 0


def test_report_serialization():
    rep = equality_report(np.zeros(2), build_uaa(6, 5.0), NoiseModel(1e-4, 0.1))
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == REPORT_CSV_HEADER == ["N", "D", "K", "tr_c_prime", "tr_c1", "gap", "residual"]
    assert int(rows[1][0]) == 6 and int(rows[1][1]) == 2
    assert float(rows[1][4]) == rep.trace_c1
    d = json.loads(rep.to_json())
    assert d["equality_residual"] == rep.equality_residual


def test_block_formula_direct_call():
    arr = build_uaa(6, 5.0)
    noise = NoiseModel(1e-4, 0.1)
    b = build_blocks(np.zeros(2), arr, noise.c)
    c1 = c1_block_formula(b, noise)
    # UAA around the source: C1 is isotropic
    assert c1[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert np.trace(c1) == pytest.approx((1 + 6 * noise.k_factor) * 2 * 2 * 343.0**2 * 1e-8 / 36, rel=1e-9)
