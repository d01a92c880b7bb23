import json

import numpy as np
import pytest

from tdoa_lab.crb import crb_without_errors
from tdoa_lab.errors import ConfigError, DegenerateGeometryError
from tdoa_lab.geometry import (
    SensorArray,
    build_cube,
    build_random_square,
    build_uaa,
    perturb,
    placement_from_config,
    rotation_matrix,
)
from tdoa_lab.model import NoiseModel


def test_uaa_quarter_turn():
    arr = build_uaa(4, 1.0, 0.0)
    expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    np.testing.assert_allclose(arr.positions, expected, atol=1e-15)


def test_uaa_hexagon_first_vertex():
    arr = build_uaa(6, 5.0, 0.0)
    assert arr.n == 6 and arr.dim == 2
    np.testing.assert_allclose(arr.positions[0], [5.0, 0.0])
    np.testing.assert_allclose(np.linalg.norm(arr.positions, axis=1), 5.0)


def test_uaa_rotation_leaves_trace_unchanged():
    noise = NoiseModel(1e-4, 0.1)
    _, t0 = crb_without_errors(np.zeros(2), build_uaa(6, 5.0, 0.0), noise)
    _, t1 = crb_without_errors(np.zeros(2), build_uaa(6, 5.0, np.pi / 6), noise)
    assert t1 == pytest.approx(t0, rel=1e-12)


@pytest.mark.parametrize("n", range(4, 25))
def test_uaa_centroid_at_origin(n):
    arr = build_uaa(n, 3.7, 0.3)
    assert np.max(np.abs(arr.positions.sum(axis=0))) < 1e-12


@pytest.mark.parametrize("n,r", [(3, 1.0), (6, 0.0), (6, -1.0)])
def test_uaa_rejects_bad_input(n, r):
    with pytest.raises(ValueError):
        build_uaa(n, r)


def test_cube_vertices():
    arr = build_cube(10.0)
    assert arr.n == 8
    assert set(map(tuple, arr.positions)) == {(x, y, z) for x in (-5, 5) for y in (-5, 5) for z in (-5, 5)}
    np.testing.assert_allclose(np.linalg.norm(arr.positions, axis=1), 5 * np.sqrt(3))
    assert set(map(tuple, build_cube(2.0).positions)) == {
        (x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)
    }


@pytest.mark.parametrize("edge", [0.5, 2.0, 10.0])
def test_cube_nearest_neighbour_distance(edge):
    pos = build_cube(edge, (1.0, -2.0, 0.5)).positions
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert np.max(np.abs(d.min(axis=1) - edge)) < 1e-12


def test_cube_rejects_nonpositive_edge():
    with pytest.raises(ValueError):
        build_cube(0.0)


def test_random_square_deterministic():
    a = build_random_square(5, 10.0, None, 2, seed=42)
    b = build_random_square(5, 10.0, None, 2, seed=42)
    assert a == b
    assert a != build_random_square(5, 10.0, None, 2, seed=43)


def test_random_square_support():
    for seed in range(20):
        arr = build_random_square(20, 10.0, None, 3, seed=seed)
        assert np.all(np.abs(arr.positions) <= 5.0)


def test_random_square_mean_tends_to_center():
    means = np.array([build_random_square(6, 10.0, None, 2, seed=s).positions.mean(axis=0) for s in range(10_000)])
    assert np.all(np.abs(means.mean(axis=0)) < 0.1)


def test_random_square_rejects_bad_input():
    with pytest.raises(ValueError):
        build_random_square(3, 10.0, None, 2, 0)
    with pytest.raises(ValueError):
        build_random_square(5, -1.0, None, 2, 0)
    with pytest.raises(ValueError):
        build_random_square(5, 1.0, None, 4, 0)


def test_perturb_zero_noise_is_identity():
    arr = build_uaa(6, 5.0)
    assert perturb(arr, 0.0, seed=3) == arr


def test_perturb_small_displacement():
    arr = build_uaa(6, 5.0)
    worst = max(np.max(np.linalg.norm(perturb(arr, 0.01, seed=s).positions - arr.positions, axis=1)) for s in range(1000))
    assert worst < 0.05


def test_perturb_deterministic_and_rejects_negative():
    arr = build_cube(10.0)
    assert perturb(arr, 1.0, seed=9) == perturb(arr, 1.0, seed=9)
    with pytest.raises(ValueError):
        perturb(arr, -0.1, seed=0)


def test_sensor_array_invariants():
    with pytest.raises(DegenerateGeometryError):
        SensorArray([[0, 0], [1, 0], [1, 0], [0, 1]])
    with pytest.raises(ValueError):
        SensorArray([[0, 0], [1, 0]])
    arr = build_uaa(5, 2.0)
    with pytest.raises(DegenerateGeometryError):
        arr.check_source(arr.positions[2])
    with pytest.raises(ValueError):
        arr.positions[0, 0] = 1.0


@pytest.mark.parametrize("dim", [2, 3])
def test_rotation_invariance_of_c_prime(dim):
    rng = np.random.default_rng(dim)
    noise = NoiseModel(1e-4, 0.1)
    for _ in range(10):
        arr = build_random_square(7, 10.0, None, dim, int(rng.integers(2**32)))
        s = rng.uniform(-1, 1, dim)
        rot = rotation_matrix(dim, rng.uniform(0, 2 * np.pi, 1 if dim == 2 else 3))
        _, t0 = crb_without_errors(s, arr, noise)
        _, t1 = crb_without_errors(rot @ s, SensorArray(arr.positions @ rot.T), noise)
        assert t1 == pytest.approx(t0, rel=1e-9)


def test_csv_and_json_round_trip(tmp_path):
    arr = build_random_square(7, 10.0, None, 3, seed=1)
    text = arr.to_csv()
    assert text.splitlines()[0] == "x,y,z"
    assert SensorArray.from_csv(text) == arr
    assert SensorArray.from_json(arr.to_json()) == arr
    assert json.loads(arr.to_json()) == arr.positions.tolist()
    p = tmp_path / "a.csv"
    p.write_text(build_uaa(5, 1.0).to_csv())
    assert SensorArray.load(p).positions.shape == (5, 2)
    assert SensorArray.load(p).to_csv().splitlines()[0] == "x,y"


def test_placement_from_config(tmp_path):
    assert placement_from_config({"kind": "uaa", "n": 6, "radius": 5}).n == 6
    assert placement_from_config({"kind": "cube", "edge": 10}).n == 8
    assert placement_from_config({"kind": "random", "n": 7, "side": 10, "dim": 3, "seed": 1}).dim == 3
    (tmp_path / "s.json").write_text(build_uaa(5, 1.0).to_json())
    assert placement_from_config({"kind": "file", "path": "s.json"}, tmp_path).n == 5
    with pytest.raises(ConfigError, match="radius"):
        placement_from_config({"kind": "uaa", "n": 6})
    with pytest.raises(ConfigError, match="unknown"):
        placement_from_config({"kind": "uaa", "n": 6, "radius": 1, "radious": 2})
    with pytest.raises(ConfigError):
        placement_from_config({"kind": "tetrahedron"})
