import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_config
from tdoa_lab.errors import DegenerateGeometryError
from tdoa_lab.geometry import SensorArray, build_random_square, build_uaa
from tdoa_lab.jacobians import build_blocks, build_joint, dump_blocks_csv, finite_difference_blocks
from tdoa_lab.model import pair_order


def test_axis_example():
    arr = SensorArray([[1, 0], [0, 1], [-1, 0], [0, -1]])
    b = build_blocks(np.zeros(2), arr, 1.0)
    np.testing.assert_allclose(b.j1[0], [1.0, -1.0], atol=1e-15)


def test_row_structure():
    arr = build_random_square(6, 10.0, None, 3, seed=4)
    s = np.array([0.2, -0.1, 0.3])
    c = 343.0
    b = build_blocks(s, arr, c)
    np.testing.assert_allclose(np.linalg.norm(b.unit_vectors, axis=1), 1.0, atol=1e-12)
    for row, (i, j) in enumerate(pair_order(arr.n)):
        ui, uj = b.unit_vectors[i - 1], b.unit_vectors[j - 1]
        np.testing.assert_allclose(b.j1[row], (ui - uj) / c, rtol=0, atol=1e-18)
        expected = np.zeros((arr.n, 3))
        expected[i - 1] = -ui / c
        expected[j - 1] = uj / c
        np.testing.assert_array_equal(b.j2[row], expected.reshape(-1))


def test_j1_in_column_span_of_j2():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s, arr, noise = random_config(rng)
        b = build_blocks(s, arr, noise.c)
        x, *_ = np.linalg.lstsq(b.j2, b.j1, rcond=None)
        assert np.max(np.abs(b.j2 @ x - b.j1)) < 1e-10


def test_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s, arr, noise = random_config(rng)
        b = build_blocks(s, arr, noise.c)
        fd1, fd2 = finite_difference_blocks(s, arr, noise.c, step=1e-6)
        assert np.max(np.abs(b.j1 - fd1)) < 1e-6
        assert np.max(np.abs(b.j2 - fd2)) < 1e-6
        # much tighter than the contract: relative to the entry scale 1/c
        assert np.max(np.abs(b.j1 - fd1)) * noise.c < 1e-7
        assert np.max(np.abs(b.j2 - fd2)) * noise.c < 1e-7


def test_joint_layout():
    arr = build_uaa(4, 2.0)
    b = build_blocks(np.array([0.1, 0.0]), arr, 343.0)
    j = build_joint(b)
    assert j.shape == (14, 10)
    assert np.max(np.abs(j[6:, :2])) == 0
    np.testing.assert_array_equal(j[6:, 2:], np.eye(8))
    np.testing.assert_array_equal(j[:6, :2], b.j1)
    np.testing.assert_array_equal(j[:6, 2:], b.j2)


@pytest.mark.parametrize("dim", [2, 3])
def test_rank_of_j2(dim):
    rng = np.random.default_rng(dim)
    for _ in range(20):
        n = int(rng.integers(4, 15))
        arr = build_random_square(n, 10.0, None, dim, int(rng.integers(2**32)))
        sv = np.linalg.svd(build_blocks(np.zeros(dim), arr, 343.0).j2, compute_uv=False)
        assert int(np.sum(sv > 1e-8 * sv[0])) == n - 1


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([2, 3]), n=st.integers(4, 15))
def test_translation_consistency(seed, dim, n):
    rng = np.random.default_rng(seed)
    arr = build_random_square(n, 10.0, None, dim, seed)
    b = build_blocks(rng.uniform(-1, 1, dim), arr, 343.0)
    v = rng.normal(size=dim)
    # moving source and all sensors together leaves every TDOA unchanged
    assert np.max(np.abs(b.j2 @ np.tile(v, n) + b.j1 @ v)) < 1e-12
    assert np.all(np.linalg.norm(343.0 * b.j1, axis=1) <= 2 + 1e-12)


def test_rejects_coincident_source():
    arr = build_uaa(5, 1.0)
    with pytest.raises(DegenerateGeometryError):
        build_blocks(arr.positions[1], arr, 343.0)
    with pytest.raises(ValueError):
        build_blocks(np.zeros(2), arr, -1.0)


def test_dump_csv(tmp_path):
    arr = build_uaa(4, 1.0)
    b = build_blocks(np.array([0.1, 0.2]), arr, 343.0)
    p1, p2 = dump_blocks_csv(b, tmp_path)
    lines = p1.read_text().splitlines()
    assert lines[0] == "pair,sx,sy"
    assert lines[1].startswith("t_2_1,")
    assert len(p2.read_text().splitlines()[0].split(",")) == 1 + 8
    back = np.array([[float(v) for v in ln.split(",")[1:]] for ln in p2.read_text().splitlines()[1:]])
    np.testing.assert_array_equal(back, b.j2)
