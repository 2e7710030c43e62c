"""Strong-error estimation and scaling-law validation.

The strong error E_r is the Monte-Carlo average of the r-th power of the
pathwise Euclidean distance between coupled nonlinear and linearised
terminal samples. Sweeps evaluate E_r over a grid of noise scales
(epsilon) and initial-uncertainty scales (rho) with independently seeded
cells, and ordinary least squares in untransformed space (or on log-log
axes) verifies the predicted scaling forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .linearise import InitialCondition
from .sampling import SamplePairBatch, SimulationConfig, sample_coupled

__all__ = ["strong_error", "SweepResult", "run_sweep", "read_sweep",
           "ScalingFit", "fit_scaling", "bootstrap_coefficients",
           "rho_curvature_interval", "BASES"]


def strong_error(batch: SamplePairBatch, r: float) -> tuple[float, float]:
    """Monte-Carlo estimate of E||y - l||^r with its standard error.

    Returns (estimate, standard error); the standard error is the sample
    standard deviation of the per-path values divided by sqrt(N).
    """
    if len(batch) == 0:
        raise ValueError("cannot estimate the strong error of an empty batch")
    if r < 0:
        raise ValueError("moment order must be non-negative")
    dist = np.linalg.norm(batch.y_samples - batch.l_samples, axis=1)
    return _estimate_from_distances(dist, r)


def _estimate_from_distances(dist: np.ndarray, r: float) -> tuple[float, float]:
    powered = dist ** r
    estimate = float(powered.mean())
    stderr = 0.0 if powered.size < 2 \
        else float(powered.std(ddof=1) / np.sqrt(powered.size))
    return estimate, stderr


@dataclass(frozen=True)
class SweepResult:
    """Strong-error estimates over a grid of (epsilon, rho) cells.

    ``epsilons``/``rhos``/``estimates``/``stderrs``/``seeds`` are parallel
    per-cell arrays. ``distances``, when retained, holds the per-cell raw
    pathwise distances and enables bootstrap refits.
    """

    epsilons: np.ndarray
    rhos: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    seeds: np.ndarray
    r: float
    n_samples: int
    distances: Optional[list] = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.estimates.shape[0]

    def restrict(self, epsilon=None, rho=None) -> "SweepResult":
        """Sub-sweep with an axis pinned to a value (exact match)."""
        mask = np.ones(len(self), dtype=bool)
        if epsilon is not None:
            mask &= self.epsilons == epsilon
        if rho is not None:
            mask &= self.rhos == rho
        dist = None if self.distances is None \
            else [d for d, m in zip(self.distances, mask) if m]
        return SweepResult(self.epsilons[mask], self.rhos[mask],
                           self.estimates[mask], self.stderrs[mask],
                           self.seeds[mask], self.r, self.n_samples, dist)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epsilon,rho,r,estimate,stderr,n,seed\n")
            for i in range(len(self)):
                fh.write(f"{self.epsilons[i]:.17g},{self.rhos[i]:.17g},"
                         f"{self.r:.17g},{self.estimates[i]:.17g},"
                         f"{self.stderrs[i]:.17g},{self.n_samples},"
                         f"{int(self.seeds[i])}\n")


def read_sweep(path) -> SweepResult:
    """Round-trip reader for the sweep CSV schema."""
    with open(path) as fh:
        lines = fh.read().strip().splitlines()[1:]
    rows = [line.split(",") for line in lines]
    cols = list(zip(*rows))
    # the seed column is parsed as an integer: 64-bit seeds do not
    # survive a float round trip
    return SweepResult(np.array([float(v) for v in cols[0]]),
                       np.array([float(v) for v in cols[1]]),
                       np.array([float(v) for v in cols[3]]),
                       np.array([float(v) for v in cols[4]]),
                       np.array([int(v) for v in cols[6]], dtype=np.uint64),
                       float(rows[0][2]), int(rows[0][5]))


def _cell_seed(master: int, i_eps: int, j_rho: int) -> int:
    """Per-cell seed derived from the master seed; stable across runs."""
    seq = np.random.SeedSequence(entropy=master, spawn_key=(i_eps, j_rho))
    return int(seq.generate_state(1, np.uint64)[0])


def run_sweep(model, mean, rho_values: Sequence[float],
              epsilon_values: Sequence[float], t: float, r,
              config: SimulationConfig, keep_distances: bool = False):
    """Coupled batch plus strong-error estimate for every (epsilon, rho) cell.

    rho = 0 selects a fixed initial condition at ``mean``; rho > 0 a
    Gaussian with covariance rho^2 I about it. Each cell runs on its own
    seed derived from ``config.seed`` and the cell indices, so cells are
    independent and reproducible regardless of evaluation order.

    ``r`` may be a single moment order or a sequence of orders; a sequence
    returns one SweepResult per order, all sharing the same cell batches.
    """
    orders = [float(o) for o in np.atleast_1d(np.asarray(r, dtype=float))]
    scalar = np.ndim(r) == 0
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    epsilon_values = [float(e) for e in epsilon_values]
    rho_values = [float(x) for x in rho_values]
    if not epsilon_values or not rho_values:
        raise ValueError("epsilon and rho grids must be non-empty")

    eps_col, rho_col, seed_col, dists = [], [], [], []
    estimates = {o: [] for o in orders}
    stderrs = {o: [] for o in orders}
    for j, rho in enumerate(rho_values):
        init = InitialCondition.fixed(mean) if rho == 0 \
            else InitialCondition.gaussian(mean, rho=rho)
        for i, eps in enumerate(epsilon_values):
            seed = _cell_seed(config.seed, i, j)
            cell_cfg = replace(config, seed=seed, t_final=None)
            try:
                batch = sample_coupled(model, init, eps, t, cell_cfg)
            except Exception as exc:
                exc.args = (f"sweep cell (epsilon={eps}, rho={rho}): "
                            f"{exc}",) + exc.args[1:]
                raise
            dist = np.linalg.norm(batch.y_samples - batch.l_samples, axis=1)
            eps_col.append(eps)
            rho_col.append(rho)
            seed_col.append(seed)
            if keep_distances:
                dists.append(dist)
            for o in orders:
                est, se = _estimate_from_distances(dist, o)
                estimates[o].append(est)
                stderrs[o].append(se)

    results = [SweepResult(np.asarray(eps_col), np.asarray(rho_col),
                           np.asarray(estimates[o]), np.asarray(stderrs[o]),
                           np.asarray(seed_col, dtype=np.uint64), o,
                           config.n_samples,
                           dists if keep_distances else None)
               for o in orders]
    return results[0] if scalar else results


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of a scaling form to sweep estimates."""

    basis: str
    coefficients: tuple
    r_squared: float
    slope: Optional[float] = None

    def to_json(self) -> dict:
        return {"basis": self.basis,
                "coefficients": list(self.coefficients),
                "r_squared": self.r_squared,
                "slope": self.slope}


#: basis name -> (design builder, regressor axis, has intercept)
BASES = {
    "const_plus_eps2": (lambda x: np.column_stack([np.ones_like(x), x ** 2]),
                        "epsilon", True),
    "eps_plus_eps2": (lambda x: np.column_stack([x, x ** 2]),
                      "epsilon", False),
    "const_plus_rho": (lambda x: np.column_stack([np.ones_like(x), x]),
                       "rho", True),
    "const_plus_rho2": (lambda x: np.column_stack([np.ones_like(x), x ** 2]),
                        "rho", True),
    "loglog_line": (lambda x: np.column_stack([np.ones_like(x), x]),
                    "epsilon", True),
}


def _fit_axis(sweep: SweepResult, basis: str) -> np.ndarray:
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}; "
                         f"available: {', '.join(sorted(BASES))}")
    axis = BASES[basis][1]
    other = sweep.rhos if axis == "epsilon" else sweep.epsilons
    if np.unique(other).size > 1:
        raise ValueError(f"basis {basis!r} fits along the {axis} axis; "
                         "restrict the sweep so the other axis is constant")
    return sweep.epsilons if axis == "epsilon" else sweep.rhos


def _ols(design: np.ndarray, response: np.ndarray,
         intercept: bool) -> tuple[np.ndarray, float]:
    if design.shape[0] < design.shape[1] + 2:
        raise ValueError("need at least two more cells than fit coefficients")
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise ValueError("degenerate design matrix (repeated axis values?)")
    coef, _, _, _ = np.linalg.lstsq(design, response, rcond=None)
    resid = response - design @ coef
    ss_res = float(resid @ resid)
    if intercept:
        centred = response - response.mean()
        ss_tot = float(centred @ centred)
    else:
        # no-intercept fits use the uncentred total sum of squares
        ss_tot = float(response @ response)
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return coef, r_squared


def fit_scaling(sweep: SweepResult, basis: str) -> ScalingFit:
    """Ordinary least squares of the sweep estimates against a scaling form.

    Polynomial bases are fitted in untransformed space. ``loglog_line``
    regresses log10(E_r) on log10(epsilon) and reports the slope.
    """
    x = _fit_axis(sweep, basis)
    build, _, intercept = BASES[basis]
    if basis == "loglog_line":
        if np.any(x <= 0) or np.any(sweep.estimates <= 0):
            raise ValueError("log-log fit requires positive epsilons and estimates")
        design = build(np.log10(x))
        coef, r2 = _ols(design, np.log10(sweep.estimates), intercept)
        return ScalingFit(basis, tuple(map(float, coef)), r2,
                          slope=float(coef[1]))
    design = build(x)
    coef, r2 = _ols(design, sweep.estimates, intercept)
    return ScalingFit(basis, tuple(map(float, coef)), r2)


def bootstrap_coefficients(sweep: SweepResult, basis: str,
                           n_boot: int = 1000, seed: int = 0) -> np.ndarray:
    """Bootstrap distribution of fit coefficients, resampling within cells.

    Requires the sweep to have been run with ``keep_distances=True``.
    Returns an array of shape (n_boot, n_coefficients).
    """
    if sweep.distances is None:
        raise ValueError("sweep was run without keep_distances=True")
    x = _fit_axis(sweep, basis)
    build, _, _ = BASES[basis]
    design = build(np.log10(x)) if basis == "loglog_line" else build(x)
    rng = np.random.Generator(np.random.Philox(seed=seed))
    out = np.empty((n_boot, design.shape[1]))
    for b in range(n_boot):
        resp = np.empty(len(sweep))
        for c, dist in enumerate(sweep.distances):
            idx = rng.integers(0, dist.size, dist.size)
            resp[c] = np.mean(dist[idx] ** sweep.r)
        if basis == "loglog_line":
            resp = np.log10(resp)
        out[b], _, _, _ = np.linalg.lstsq(design, resp, rcond=None)
    return out


def rho_curvature_interval(sweep: SweepResult, n_boot: int = 1000,
                           seed: int = 0, level: float = 0.95):
    """Bootstrap confidence interval for curvature of E_r in rho.

    Fits E_r = b0 + b1 rho + b2 rho^2 along the rho axis and returns
    (point estimate of b2, lower, upper) at the given confidence level.
    An interval containing 0 means no significant curvature: the growth
    is statistically consistent with a straight line in rho.
    """
    if sweep.distances is None:
        raise ValueError("sweep was run without keep_distances=True")
    if np.unique(sweep.epsilons).size > 1:
        raise ValueError("restrict the sweep to a single epsilon first")
    x = sweep.rhos
    design = np.column_stack([np.ones_like(x), x, x ** 2])
    # one residual degree of freedom is enough here: the interval width,
    # not the point fit, carries the uncertainty
    if design.shape[0] < design.shape[1] + 1:
        raise ValueError("need at least four distinct rho cells")
    coef, _, _, _ = np.linalg.lstsq(design, sweep.estimates, rcond=None)
    rng = np.random.Generator(np.random.Philox(seed=seed))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        resp = np.empty(len(sweep))
        for c, dist in enumerate(sweep.distances):
            idx = rng.integers(0, dist.size, dist.size)
            resp[c] = np.mean(dist[idx] ** sweep.r)
        fit, _, _, _ = np.linalg.lstsq(design, resp, rcond=None)
        boots[b] = fit[2]
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(boots, [alpha, 1.0 - alpha])
    return float(coef[2]), float(lo), float(hi)
