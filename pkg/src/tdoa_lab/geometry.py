"""
Sensor configurations: uniform angular arrays, the cube, random placements
and Gaussian perturbations of any of them.

Positions are stored as an ``(N, D)`` float array. All randomness is driven by
an explicit integer seed so that every array can be rebuilt bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateGeometryError

COINCIDENCE_TOL = 1e-9  # meters

#: Maximum number of redraws before a random placement gives up.
MAX_RESAMPLES = 1000


def as_source(source, dim: int | None = None) -> np.ndarray:
    """Validate a source location and return it as a 1-D float array."""
    s = np.asarray(source, dtype=float).reshape(-1)
    if s.shape[0] not in (2, 3):
        raise ValueError(f"source must have 2 or 3 coordinates, got {s.shape[0]}")
    if dim is not None and s.shape[0] != dim:
        raise ValueError(f"source has dimension {s.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(s)):
        raise ValueError("source coordinates must be finite")
    return s


@dataclass(frozen=True)
class SensorArray:
    """N sensor positions in D-dimensional space.

    Construction checks the dimension, the minimum sensor count (N >= D + 1,
    the smallest N for which the full-set TDOA Jacobian can have rank D) and
    that no two sensors coincide. The position array is made read-only.
    """

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError(f"positions must have shape (N, 2) or (N, 3), got {pos.shape}")
        n, dim = pos.shape
        if n < dim + 1:
            raise ValueError(f"need at least {dim + 1} sensors in {dim}D, got {n}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("sensor positions must be finite")
        if _min_pairwise_distance(pos) <= COINCIDENCE_TOL:
            raise DegenerateGeometryError("two sensors coincide")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def stacked(self) -> np.ndarray:
        """Sensor-major stacking ``[x1, y1(, z1), x2, ...]`` of length D*N."""
        return self.positions.reshape(-1).copy()

    def check_source(self, source) -> np.ndarray:
        """Return the validated source, raising if it sits on a sensor."""
        s = as_source(source, self.dim)
        dist = np.linalg.norm(self.positions - s, axis=1)
        if np.min(dist) <= COINCIDENCE_TOL:
            raise DegenerateGeometryError(
                f"source coincides with sensor {int(np.argmin(dist)) + 1}"
            )
        return s

    def __eq__(self, other):
        if not isinstance(other, SensorArray):
            return NotImplemented
        return np.array_equal(self.positions, other.positions)

    def __hash__(self):
        return hash(self.positions.tobytes())

    # -- serialization ------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "y", "z"][: self.dim])
        for row in self.positions:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SensorArray":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ConfigError("empty sensor CSV")
        header = [h.strip() for h in rows[0]]
        if header not in (["x", "y"], ["x", "y", "z"]):
            raise ConfigError(f"sensor CSV header must be x,y[,z], got {','.join(header)}")
        data = [[float(v) for v in r] for r in rows[1:] if r]
        return cls(np.array(data, dtype=float).reshape(-1, len(header)))

    def to_json(self) -> str:
        return json.dumps(self.positions.tolist())

    @classmethod
    def from_json(cls, text: str) -> "SensorArray":
        return cls(np.array(json.loads(text), dtype=float))

    @classmethod
    def load(cls, path) -> "SensorArray":
        """Load from a ``.csv`` or ``.json`` file."""
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".csv":
            return cls.from_csv(text)
        if path.suffix.lower() == ".json":
            return cls.from_json(text)
        raise ConfigError(f"unsupported sensor file type: {path.suffix}")


def _min_pairwise_distance(pos: np.ndarray) -> float:
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(pos.shape[0], k=1)
    return float(np.min(dist[iu]))


def build_uaa(n: int, r: float, alpha0: float = 0.0) -> SensorArray:
    """Uniform angular array: ``n`` sensors evenly spaced on a circle of radius ``r``.

    Sensor ``i`` (1-based) sits at angle ``alpha0 + 2*pi*(i - 1)/n``.
    """
    if n < 4:
        raise ValueError(f"UAA needs n >= 4, got {n}")
    if not r > 0:
        raise ValueError(f"UAA radius must be positive, got {r}")
    alpha = alpha0 + 2.0 * np.pi * np.arange(n) / n
    return SensorArray(np.column_stack([r * np.cos(alpha), r * np.sin(alpha)]))


def build_cube(edge: float, center: Sequence[float] = (0.0, 0.0, 0.0)) -> SensorArray:
    """Eight vertices of an axis-aligned cube with the given edge length."""
    if not edge > 0:
        raise ValueError(f"cube edge must be positive, got {edge}")
    c = as_source(center, 3)
    h = edge / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return SensorArray(c + h * signs)


def build_random_square(
    n: int,
    side: float,
    center: Sequence[float] | None = None,
    dim: int = 2,
    seed: int = 0,
    source: Sequence[float] | None = None,
) -> SensorArray:
    """Draw ``n`` sensors i.i.d. uniform in an axis-aligned square (2D) or cube (3D).

    Draws that produce coincident sensors, or a sensor on top of ``source``
    (when given), are redrawn from the same generator.

    Args:
        n: number of sensors, at least 4.
        side: side length of the square/cube in meters.
        center: center of the region; defaults to the origin.
        dim: 2 or 3.
        seed: generator seed.
        source: optional source location the sensors must avoid.

    Returns:
        The sampled array.
    """
    if n < 4:
        raise ValueError(f"random placement needs n >= 4, got {n}")
    if not side > 0:
        raise ValueError(f"side length must be positive, got {side}")
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    c = np.zeros(dim) if center is None else as_source(center, dim)
    s = None if source is None else as_source(source, dim)
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESAMPLES):
        pos = c + rng.uniform(-side / 2.0, side / 2.0, size=(n, dim))
        if _min_pairwise_distance(pos) <= COINCIDENCE_TOL:
            continue
        if s is not None and np.min(np.linalg.norm(pos - s, axis=1)) <= COINCIDENCE_TOL:
            continue
        return SensorArray(pos)
    raise DegenerateGeometryError("could not draw a non-degenerate random placement")


def perturb(array: SensorArray, sigma_loc: float, seed: int) -> SensorArray:
    """Add i.i.d. zero-mean Gaussian noise of std ``sigma_loc`` to every coordinate."""
    if sigma_loc < 0:
        raise ValueError(f"sigma_loc must be non-negative, got {sigma_loc}")
    if sigma_loc == 0:
        return array
    rng = np.random.default_rng(seed)
    return SensorArray(array.positions + rng.normal(0.0, sigma_loc, size=array.positions.shape))


def rotation_matrix(dim: int, angles: Sequence[float]) -> np.ndarray:
    """Proper rotation from one angle (2D) or three Euler angles z-y-x (3D)."""
    if dim == 2:
        (a,) = angles
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    a, b, g = angles
    rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    rx = np.array([[1, 0, 0], [0, np.cos(g), -np.sin(g)], [0, np.sin(g), np.cos(g)]])
    return rz @ ry @ rx


# -- placement specs ---------------------------------------------------------

PLACEMENT_FIELDS = {
    "uaa": {"kind", "n", "radius", "alpha0"},
    "cube": {"kind", "edge", "center"},
    "random": {"kind", "n", "side", "center", "dim", "seed"},
    "file": {"kind", "path"},
}


def placement_from_config(placement: dict, base_dir: Path | None = None) -> SensorArray:
    """Build a :class:`SensorArray` from a placement dict as found in config files.

    Recognised kinds are ``uaa``, ``cube``, ``random`` and ``file``; unknown
    keys are rejected.
    """
    if not isinstance(placement, dict) or "kind" not in placement:
        raise ConfigError("placement: missing field 'kind'")
    kind = placement["kind"]
    if kind not in PLACEMENT_FIELDS:
        raise ConfigError(f"placement.kind: unknown placement kind {kind!r}")
    unknown = set(placement) - PLACEMENT_FIELDS[kind]
    if unknown:
        raise ConfigError(f"placement: unknown field(s) {sorted(unknown)} for kind {kind!r}")

    def need(key):
        if key not in placement:
            raise ConfigError(f"placement.{key}: missing field for kind {kind!r}")
        return placement[key]

    try:
        if kind == "uaa":
            return build_uaa(int(need("n")), float(need("radius")), float(placement.get("alpha0", 0.0)))
        if kind == "cube":
            return build_cube(float(need("edge")), placement.get("center", (0.0, 0.0, 0.0)))
        if kind == "random":
            dim = int(placement.get("dim", 2))
            return build_random_square(
                int(need("n")), float(need("side")), placement.get("center"), dim, int(placement.get("seed", 0))
            )
        path = Path(need("path"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return SensorArray.load(path)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, (ConfigError, DegenerateGeometryError)):
            raise
        raise ConfigError(f"placement: {exc}") from exc
