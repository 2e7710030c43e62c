"""Stochastic sensitivity: scalar uncertainty per initial condition.

The sensitivity value at (x0, t) is the largest eigenvalue (equivalently the
spectral norm) of the unit-noise covariance of the linearised solution with
zero initial covariance. It is independent of the noise scale and can be
evaluated over grids of initial conditions to expose coherent flow regions;
robust sets collect the nodes whose value stays below a threshold.

Fields are embarrassingly parallel: nodes are pure, independent
computations, partitioned into fixed-size chunks whose results are written
by index, so a field is bit-identical for any worker count.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import FieldError, LinSDEError
from .linearise import InitialCondition, propagate_covariance
from .models import builtin_model, MODEL_NAMES
from .sampling import SimulationConfig, sample_nonlinear

__all__ = ["s2_point", "GridSpec", "S2Field", "s2_field",
           "s2_empirical_limit", "RobustSet", "extract_robust_set",
           "read_field"]

#: nodes per task; fixed so that results do not depend on the worker count
CHUNK_NODES = 64
#: nodes per vectorised block of the fixed-step fast path
CHUNK_NODES_FAST = 4096

MAX_MISSING_FRACTION = 0.001

#: default tolerance for field computation (looser than the point default,
#: which uses the flow-module default of 1e-8)
FIELD_TOL = 1e-6


def s2_point(model, x0, t: float, tol: float = 1e-8,
             method: str = "rk45", dt: float = 2e-3) -> float:
    """Sensitivity value at one initial condition.

    Largest eigenvalue of the unit-noise covariance (epsilon = 1, zero
    initial covariance) propagated to time t; equals the spectral norm
    since the covariance is symmetric positive semi-definite.
    """
    if t == 0.0:
        return 0.0
    state = propagate_covariance(model, x0, t, epsilon=1.0, tol=tol,
                                 method=method, dt=dt)
    return float(np.linalg.eigvalsh(state.covariance)[-1])


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid: one (min, max, count) triple per axis."""

    axes: tuple

    def __post_init__(self):
        for ax in self.axes:
            lo, hi, count = ax
            if count < 1:
                raise ValueError("axis count must be a positive integer")
            if hi < lo:
                raise ValueError("axis max must be at least axis min")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(int(ax[2]) for ax in self.axes)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis_values(self, k: int) -> np.ndarray:
        lo, hi, count = self.axes[k]
        return np.linspace(lo, hi, int(count))

    def points(self) -> np.ndarray:
        """All grid nodes, row-major, shape (n_nodes, dim)."""
        mesh = np.meshgrid(*[self.axis_values(k) for k in range(self.dim)],
                           indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_json(self) -> list:
        return [[float(lo), float(hi), int(c)] for lo, hi, c in self.axes]


@dataclass(frozen=True)
class S2Field:
    """Gridded sensitivity values (row-major, aligned with GridSpec.points)."""

    grid: GridSpec
    values: np.ndarray
    t: float
    model_name: str
    params: dict = field(default_factory=dict)
    n_missing: int = 0

    def header(self) -> dict:
        return {"grid": self.grid.to_json(), "t": float(self.t),
                "model": self.model_name, "params": self.params,
                "n_missing": int(self.n_missing)}

    def write_csv(self, path, json_path=None) -> None:
        points = self.grid.points()
        cols = [f"x{i + 1}" for i in range(self.grid.dim)]
        with open(path, "w") as fh:
            fh.write(",".join(cols + ["s2"]) + "\n")
            for row, value in zip(points, self.values):
                fh.write(",".join(f"{v:.17g}" for v in row)
                         + f",{value:.17g}\n")
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.header(), fh, indent=2, sort_keys=True)
                fh.write("\n")


def read_field(csv_path, json_path) -> S2Field:
    with open(json_path) as fh:
        meta = json.load(fh)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    grid = GridSpec(tuple(tuple(ax) for ax in meta["grid"]))
    return S2Field(grid, data[:, -1], meta["t"], meta["model"],
                   meta.get("params", {}), meta.get("n_missing", 0))


def _rebuild(model):
    return (model.name, model.params) if model.name in MODEL_NAMES else None


def _point_chunk(payload):
    name, params, nodes, t, tol = payload
    model = builtin_model(name, **params)
    return _point_chunk_local(model, nodes, t, tol)


def _point_chunk_local(model, nodes, t, tol):
    out = np.empty(len(nodes))
    for i, x0 in enumerate(nodes):
        try:
            out[i] = s2_point(model, x0, t, tol=tol)
        except LinSDEError:
            out[i] = np.nan
    return out


def _fast_chunk(payload):
    name, params, nodes, t, dt = payload
    model = builtin_model(name, **params)
    return _fast_chunk_local(model, nodes, t, dt)


def _fast_chunk_local(model, nodes, t, dt):
    """Fixed-step sensitivity over a block of nodes, fully vectorised.

    Reference states advance with classical RK4 on half steps (so the step
    midpoints fall on the state grid); the covariance advances with the
    symmetry- and PSD-preserving midpoint congruence of the fixed-step
    covariance integrator.
    """
    n = model.dim_state
    steps = max(1, round(t / dt))
    h = t / steps
    eye = np.eye(n)
    x = np.asarray(nodes, dtype=float).copy()
    cov = np.zeros((len(nodes), n, n))

    def rk4(xc, tc, hc):
        k1 = model.drift(xc, tc)
        k2 = model.drift(xc + 0.5 * hc * k1, tc + 0.5 * hc)
        k3 = model.drift(xc + 0.5 * hc * k2, tc + 0.5 * hc)
        k4 = model.drift(xc + hc * k3, tc + hc)
        return xc + (hc / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            tk = k * h
            x_mid = rk4(x, tk, 0.5 * h)
            x = rk4(x_mid, tk + 0.5 * h, 0.5 * h)
            jac = model.drift_gradient(x_mid, tk + 0.5 * h)
            sig = model.diffusion(x_mid, tk + 0.5 * h)
            phi = np.linalg.solve(eye - 0.5 * h * jac, eye + 0.5 * h * jac)
            phi_half = np.linalg.solve(eye - 0.25 * h * jac,
                                       eye + 0.25 * h * jac)
            moved = phi_half @ sig
            forcing = h * np.einsum("kij,klj->kil", moved, moved)
            cov = phi @ cov @ np.swapaxes(phi, -1, -2) \
                + 0.5 * (forcing + np.swapaxes(forcing, -1, -2))
    out = np.full(len(nodes), np.nan)
    finite = np.all(np.isfinite(cov), axis=(-2, -1))
    if np.any(finite):
        out[finite] = np.linalg.eigvalsh(cov[finite])[..., -1]
    return out


def s2_field(model, grid: GridSpec, t: float, workers: int = 1,
             tol: float = FIELD_TOL, method: str = "rk45",
             dt: float = 2e-3) -> S2Field:
    """Sensitivity field over a rectangular grid of initial conditions.

    ``method`` "rk45" evaluates :func:`s2_point` independently at every
    node with the adaptive integrator; "mazzoni" switches to the fixed-step
    vectorised fast path (step ``dt``). Nodes are partitioned into
    fixed-size chunks computed serially or on a process pool; the partition
    does not depend on ``workers``, so fields are identical for any worker
    count. Individual node failures are recorded as missing values; more
    than 0.1 percent missing raises FieldError.
    """
    if workers < 1:
        raise ValueError("workers must be a positive integer")
    if method not in ("rk45", "mazzoni"):
        raise ValueError(f"unknown field method {method!r}")
    nodes = grid.points()
    if nodes.shape[1] != model.dim_state:
        raise ValueError("grid dimension does not match the model")
    chunk = CHUNK_NODES if method == "rk45" else CHUNK_NODES_FAST
    blocks = [nodes[i:i + chunk] for i in range(0, len(nodes), chunk)]

    spec = _rebuild(model)
    if workers > 1 and spec is None:
        warnings.warn(f"model {model.name!r} is not in the catalog and "
                      "cannot be shipped to worker processes; running "
                      "serially", RuntimeWarning)
        workers = 1

    if method == "rk45":
        local = lambda blk: _point_chunk_local(model, blk, t, tol)
        remote = _point_chunk
        payloads = [(spec[0], spec[1], blk, t, tol) for blk in blocks] \
            if spec else None
    else:
        local = lambda blk: _fast_chunk_local(model, blk, t, dt)
        remote = _fast_chunk
        payloads = [(spec[0], spec[1], blk, t, dt) for blk in blocks] \
            if spec else None

    if workers == 1:
        results = [local(blk) for blk in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(remote, payloads))
    values = np.concatenate(results) if results else np.empty(0)

    n_missing = int(np.count_nonzero(~np.isfinite(values)))
    if n_missing > MAX_MISSING_FRACTION * max(1, len(values)):
        raise FieldError(f"{n_missing} of {len(values)} grid nodes failed "
                         f"for model {model.name!r} at t={t}")
    values = np.where(np.isfinite(values), values, np.nan)
    return S2Field(grid, values, float(t), model.name, dict(model.params),
                   n_missing)


def s2_empirical_limit(model, x0, t: float, epsilons: Sequence[float],
                       config: SimulationConfig) -> list[float]:
    """Small-noise Monte-Carlo estimates converging to the sensitivity value.

    For each noise scale, simulates the nonlinear SDE from the fixed
    initial condition, forms the sample covariance of the terminal states,
    and rescales its top eigenvalue by the squared noise scale. The
    sequence approaches :func:`s2_point` as the scale decreases, up to
    Monte-Carlo error.
    """
    init = InitialCondition.fixed(x0)
    out = []
    for eps in epsilons:
        if eps <= 0:
            raise ValueError("epsilons must be positive")
        y = sample_nonlinear(model, init, eps, t, config)
        cov = np.cov(y, rowvar=False).reshape(model.dim_state,
                                              model.dim_state)
        out.append(float(np.linalg.eigvalsh(cov)[-1] / eps ** 2))
    return out


@dataclass(frozen=True)
class RobustSet:
    """Boolean mask of grid nodes whose sensitivity is below a threshold."""

    mask: np.ndarray
    threshold: float

    @property
    def fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0


def extract_robust_set(field: S2Field, threshold: float) -> RobustSet:
    """Nodes with sensitivity at or below the threshold (missing nodes excluded)."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    with np.errstate(invalid="ignore"):
        mask = field.values <= threshold
    return RobustSet(mask, float(threshold))


def write_robust_csv(field: S2Field, robust: RobustSet, path,
                     json_path=None) -> None:
    """Grid coordinates with sensitivity values and the robust-set flag."""
    points = field.grid.points()
    cols = [f"x{i + 1}" for i in range(field.grid.dim)]
    with open(path, "w") as fh:
        fh.write(",".join(cols + ["s2", "robust"]) + "\n")
        for row, value, flag in zip(points, field.values, robust.mask):
            fh.write(",".join(f"{v:.17g}" for v in row)
                     + f",{value:.17g},{int(flag)}\n")
    if json_path is not None:
        meta = field.header()
        meta["threshold"] = robust.threshold
        meta["robust_fraction"] = robust.fraction
        with open(json_path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
