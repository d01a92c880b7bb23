"""
Joint maximum-likelihood estimation of the source and sensor positions.

The parameter vector is ``theta = [s, x]`` and the model output is
``g(theta) = [T(s, x), x]``; the estimate minimises the weighted residual
``(g(theta) - z)^T Sigma^{-1} (g(theta) - z)`` by Gauss-Newton with optional
Levenberg damping.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError
from .geometry import COINCIDENCE_TOL, SensorArray, as_source
from .jacobians import _blocks
from .model import MeasurementBundle, NoiseModel, n_pairs, tdoa_values

logger = logging.getLogger(__name__)

LAMBDA_SEED = 1e-3
LAMBDA_MAX = 1e12
#: Relative slack on the acceptance test; below this the cost change is rounding noise.
COST_RTOL = 1e-13


@dataclass(frozen=True)
class GaussNewtonConfig:
    """Solver settings.

    ``damping=False`` gives plain Gauss-Newton (every step accepted).
    """

    max_iter: int = 100
    grad_tol: float = 1e-9
    damping: bool = True


@dataclass(frozen=True)
class EstimationProblem:
    bundle: MeasurementBundle
    noise: NoiseModel
    initial_source: np.ndarray
    initial_sensors: SensorArray

    def __post_init__(self):
        s0 = as_source(self.initial_source, self.bundle.dim)
        object.__setattr__(self, "initial_source", s0)
        if self.initial_sensors.n != self.bundle.n or self.initial_sensors.dim != self.bundle.dim:
            raise ValueError("initial sensors do not match the measurement dimensions")

    @property
    def n(self) -> int:
        return self.bundle.n

    @property
    def dim(self) -> int:
        return self.bundle.dim

    @property
    def sensors_fixed(self) -> bool:
        """Sensor positions are known exactly when ``sigma_loc == 0``; only ``s`` is estimated."""
        return self.noise.sigma_loc == 0

    def weights(self) -> np.ndarray:
        """Diagonal of ``Sigma^{-1}`` for the active measurement rows.

        A zero ``sigma_t`` makes the weights undefined; any positive constant
        gives the same minimiser for exact data, so ``c**2`` is used, which
        turns the TDOA residuals into range differences in metres and keeps
        the gradient tolerance meaningful.
        """
        wt = 1.0 / self.noise.sigma_t**2 if self.noise.sigma_t > 0 else self.noise.c**2
        w = [np.full(n_pairs(self.n), wt)]
        if not self.sensors_fixed:
            w.append(np.full(self.n * self.dim, 1.0 / self.noise.sigma_loc**2))
        return np.concatenate(w)

    def z(self) -> np.ndarray:
        if self.sensors_fixed:
            return self.bundle.tdoa.values.copy()
        return self.bundle.z()

    def initial_theta(self) -> np.ndarray:
        if self.sensors_fixed:
            return self.initial_source.copy()
        return np.concatenate([self.initial_source, self.initial_sensors.stacked()])

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        s = theta[:d]
        if self.sensors_fixed:
            return s, self.bundle.sensor_positions()
        return s, theta[d:].reshape(self.n, d)

    def model(self, theta: np.ndarray) -> np.ndarray:
        """``g(theta)``; raises if the source lands on a sensor."""
        s, x = self.split(theta)
        if np.min(np.linalg.norm(x - s, axis=1)) <= COINCIDENCE_TOL:
            raise DegenerateGeometryError("source estimate coincides with a sensor")
        t = tdoa_values(s, x, self.noise.c)
        if self.sensors_fixed:
            return t
        return np.concatenate([t, x.reshape(-1)])

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        s, x = self.split(theta)
        blocks = _blocks(s, x, self.noise.c)
        if self.sensors_fixed:
            return blocks.j1
        m, dn = blocks.j1.shape[0], self.n * self.dim
        jac = np.zeros((m + dn, self.dim + dn))
        jac[:m, : self.dim] = blocks.j1
        jac[:m, self.dim :] = blocks.j2
        jac[m:, self.dim :] = np.eye(dn)
        return jac


@dataclass
class EstimationResult:
    source_estimate: np.ndarray
    sensor_estimates: np.ndarray
    objective: float
    iterations: int
    converged: bool
    gradient_norm: float
    history: list[float] = field(default_factory=list, repr=False)


def objective(theta: np.ndarray, problem: EstimationProblem) -> float:
    """Weighted least-squares cost ``(g - z)^T Sigma^{-1} (g - z)``."""
    r = problem.model(np.asarray(theta, dtype=float)) - problem.z()
    return float(np.sum(problem.weights() * r * r))


def gauss_newton(problem: EstimationProblem, config: GaussNewtonConfig | None = None) -> EstimationResult:
    """Minimise the weighted cost from ``problem``'s initial guess.

    Each iteration solves ``(J^T W J + lam I) delta = J^T W (z - g)``. With
    damping, a step is kept when it does not raise the cost beyond rounding
    level (:data:`COST_RTOL`); ``lam`` starts at zero, is raised tenfold on every rejected step
    (seeded at :data:`LAMBDA_SEED`) and lowered tenfold on acceptance; the
    solver gives up when ``lam`` would exceed :data:`LAMBDA_MAX`.
    Non-convergence is reported through ``converged=False``.
    """
    cfg = config or GaussNewtonConfig()
    w = problem.weights()
    z = problem.z()
    theta = problem.initial_theta()
    g = problem.model(theta)
    r = z - g
    cost = float(np.sum(w * r * r))
    history = [cost]
    lam = 0.0
    it = 0
    converged = False
    grad_norm = np.inf
    n_par = theta.shape[0]

    while True:
        jac = problem.jacobian(theta)
        jw = jac * w[:, None]
        grad = jw.T @ r
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= cfg.grad_tol:
            converged = True
            break
        if it >= cfg.max_iter:
            break
        normal = jac.T @ jw
        it += 1

        if not cfg.damping:
            try:
                delta = np.linalg.solve(normal, grad)
            except np.linalg.LinAlgError:
                logger.debug("singular normal equations in undamped Gauss-Newton")
                break
            theta = theta + delta
            try:
                g = problem.model(theta)
            except DegenerateGeometryError:
                break
            r = z - g
            cost = float(np.sum(w * r * r))
            history.append(cost)
            continue

        accepted = False
        while not accepted:
            try:
                delta = np.linalg.solve(normal + lam * np.eye(n_par), grad)
                trial = theta + delta
                g_trial = problem.model(trial)
            except (np.linalg.LinAlgError, DegenerateGeometryError):
                g_trial = None
            if g_trial is not None:
                r_trial = z - g_trial
                cost_trial = float(np.sum(w * r_trial * r_trial))
                if np.isfinite(cost_trial) and cost_trial <= cost * (1.0 + COST_RTOL):
                    theta, g, r, cost = trial, g_trial, r_trial, cost_trial
                    history.append(cost)
                    lam = lam / 10.0 if lam / 10.0 >= LAMBDA_SEED else 0.0
                    accepted = True
                    continue
            lam = LAMBDA_SEED if lam == 0.0 else lam * 10.0
            if lam > LAMBDA_MAX:
                break
        if not accepted:
            break

    s, x = problem.split(theta)
    return EstimationResult(
        source_estimate=s.copy(),
        sensor_estimates=np.array(x, dtype=float),
        objective=cost,
        iterations=it,
        converged=converged,
        gradient_norm=grad_norm,
        history=history,
    )


def random_initial_source(sensor_meas: np.ndarray, rng: np.random.Generator, inflate: float = 0.2) -> np.ndarray:
    """Uniform draw from the bounding box of the measured sensors, widened by ``inflate`` of its extent."""
    lo = sensor_meas.min(axis=0)
    hi = sensor_meas.max(axis=0)
    pad = 0.5 * inflate * (hi - lo)
    return rng.uniform(lo - pad, hi + pad)


def localize(
    bundle: MeasurementBundle,
    noise: NoiseModel,
    rng: np.random.Generator | None = None,
    init: str = "bbox",
    truth_source=None,
    config: GaussNewtonConfig | None = None,
) -> EstimationResult:
    """Estimate from one measurement bundle.

    ``init="bbox"`` draws the initial source uniformly from the inflated
    bounding box of the sensor measurements; ``init="truth"`` starts at
    ``truth_source``. Initial sensor positions are the measurements ``m``.
    """
    m = bundle.sensor_positions()
    if init == "truth":
        if truth_source is None:
            raise ValueError("init='truth' requires truth_source")
        s0 = as_source(truth_source, bundle.dim)
    elif init == "bbox":
        if rng is None:
            raise ValueError("init='bbox' requires a random generator")
        s0 = random_initial_source(m, rng)
        while np.min(np.linalg.norm(m - s0, axis=1)) <= COINCIDENCE_TOL:
            s0 = random_initial_source(m, rng)
    else:
        raise ValueError(f"unknown initializer {init!r}")
    problem = EstimationProblem(bundle, noise, s0, SensorArray(m))
    return gauss_newton(problem, config)


RESULT_CSV_AXES = "xyz"


def results_to_csv(rows: list[tuple[int, int, EstimationResult]]) -> str:
    """Per-trial rows ``trial,seed,converged,iters,sx,sy[,sz],objective``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not rows:
        return ""
    dim = rows[0][2].source_estimate.shape[0]
    writer.writerow(["trial", "seed", "converged", "iters"] + [f"s{a}" for a in RESULT_CSV_AXES[:dim]] + ["objective"])
    for trial, seed, res in rows:
        writer.writerow(
            [trial, seed, int(res.converged), res.iterations]
            + [repr(float(v)) for v in res.source_estimate]
            + [repr(res.objective)]
        )
    return buf.getvalue()
