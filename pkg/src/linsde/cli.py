"""Command-line front end: JSON-configured experiment runs.

Usage: ``linsde CONFIG.json [--seed S] [--workers K] [--out DIR]``. The
configuration file selects the command and all run parameters; the flags
override the corresponding config fields. Data artifacts (CSV for arrays,
JSON for structured records) are byte-identical across reruns of the same
effective configuration; the wall-clock timestamp is isolated in a separate
``provenance.txt`` line. Every JSON artifact embeds the configuration hash
and master seed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .exceptions import ConfigError, LinSDEError
from .linearise import InitialCondition, linearised_distribution
from .models import MODEL_NAMES, builtin_model
from .sampling import SCHEMES, SimulationConfig, sample_coupled
from .scaling import BASES, fit_scaling, run_sweep
from .sensitivity import (GridSpec, extract_robust_set, s2_field,
                          write_robust_csv)

COMMANDS = ("simulate", "histogram", "validate-scaling", "bound",
            "s2-field", "robust-set")


def _get(cfg: dict, path: str, kind=None, required: bool = True, default=None):
    node = cfg
    walked = []
    for part in path.split("."):
        walked.append(part)
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(".".join(walked), "missing required field")
            return default
        node = node[part]
    if kind is not None and not isinstance(node, kind):
        names = kind.__name__ if isinstance(kind, type) \
            else "/".join(k.__name__ for k in kind)
        raise ConfigError(path, f"expected {names}, got {type(node).__name__}")
    return node


def _build_model(cfg: dict):
    name = _get(cfg, "model.name", str)
    if name not in MODEL_NAMES:
        raise ConfigError("model.name",
                          f"unknown model {name!r}; available: "
                          f"{', '.join(MODEL_NAMES)}")
    params = _get(cfg, "model.params", dict, required=False, default={})
    try:
        return builtin_model(name, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError("model.params", str(exc)) from exc


def _build_init(cfg: dict, n: int) -> InitialCondition:
    kind = _get(cfg, "init.kind", str)
    try:
        if kind == "fixed":
            return InitialCondition.fixed(_get(cfg, "init.point", list))
        if kind == "gaussian":
            mean = _get(cfg, "init.mean", list)
            rho = _get(cfg, "init.rho", (int, float), required=False)
            cov = _get(cfg, "init.covariance", list, required=False)
            ref = _get(cfg, "init.reference_point", list, required=False)
            return InitialCondition.gaussian(mean, covariance=cov, rho=rho,
                                             reference_point=ref)
    except ValueError as exc:
        raise ConfigError("init", str(exc)) from exc
    raise ConfigError("init.kind", f"expected 'fixed' or 'gaussian', got {kind!r}")


def _build_sim(cfg: dict) -> SimulationConfig:
    sim = _get(cfg, "simulation", dict, required=False, default={})
    try:
        out = SimulationConfig(
            dt=sim.get("dt", 1e-3), scheme=sim.get("scheme", "euler_maruyama"),
            n_samples=sim.get("n_samples", 1000), seed=sim.get("seed", 0))
    except ValueError as exc:
        raise ConfigError("simulation", str(exc)) from exc
    if out.scheme not in SCHEMES:
        raise ConfigError("simulation.scheme", f"unknown scheme {out.scheme!r}")
    return out


def _positive_time(cfg: dict) -> float:
    t = _get(cfg, "t", (int, float))
    if t <= 0:
        raise ConfigError("t", "horizon must be positive")
    return float(t)


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class _Run:
    """One validated run: effective config, output directory, provenance."""

    def __init__(self, cfg: dict, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.hash = _config_hash(cfg)
        self.seed = int(_get(cfg, "simulation.seed", (int,),
                             required=False, default=0))

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, payload: dict) -> None:
        record = {"config_sha256": self.hash, "seed": self.seed}
        record.update(payload)
        with open(self.path(name), "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_provenance(self, command: str) -> None:
        stamp = datetime.now(timezone.utc).isoformat()
        with open(self.path("provenance.txt"), "w") as fh:
            fh.write(f"timestamp={stamp} config_sha256={self.hash} "
                     f"seed={self.seed} command={command}\n")


def _run_simulate(run: _Run) -> None:
    cfg = run.cfg
    model = _build_model(cfg)
    init = _build_init(cfg, model.dim_state)
    t = _positive_time(cfg)
    epsilon = float(_get(cfg, "epsilon", (int, float)))
    sim = _build_sim(cfg)
    batch = sample_coupled(model, init, epsilon, t, sim)
    law = linearised_distribution(model, init, t, epsilon)
    sidecar = batch.sidecar()
    sidecar["config_sha256"] = run.hash
    batch.write_csv(run.path("batch.csv"))
    with open(run.path("batch.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.write_json("linearised.json", law.to_json())
    return batch, law


def _run_histogram(run: _Run) -> None:
    batch, law = _run_simulate(run)
    bins = _get(run.cfg, "histogram.bins", (int, str), required=False,
                default="fd")
    rows = []
    for j in range(batch.y_samples.shape[1]):
        y = batch.y_samples[:, j]
        sd = math.sqrt(max(law.covariance[j, j], 0.0))
        if sd == 0.0 or np.ptp(y) == 0.0:
            raise LinSDEError("degenerate marginal (zero variance); "
                              "histogram is undefined")
        edges = np.histogram_bin_edges(y, bins=bins)
        density, _ = np.histogram(y, bins=edges, density=True)
        centres = 0.5 * (edges[:-1] + edges[1:])
        pdf = np.exp(-0.5 * ((centres - law.mean[j]) / sd) ** 2) \
            / (sd * math.sqrt(2.0 * math.pi))
        for k in range(density.size):
            rows.append((j + 1, edges[k], edges[k + 1], density[k], pdf[k]))
    with open(run.path("histogram.csv"), "w") as fh:
        fh.write("component,bin_left,bin_right,density,gaussian_density\n")
        for row in rows:
            fh.write(f"{row[0]}," + ",".join(f"{v:.17g}" for v in row[1:])
                     + "\n")
    run.write_json("histogram.json",
                   {"bins": bins, "n_components": batch.y_samples.shape[1],
                    "n_samples": len(batch)})


def _run_validate_scaling(run: _Run) -> None:
    cfg = run.cfg
    model = _build_model(cfg)
    x0 = _get(cfg, "x0", list)
    eps_grid = [float(v) for v in _get(cfg, "epsilon_grid", list)]
    rho_grid = [float(v) for v in _get(cfg, "rho_grid", list)]
    if not eps_grid:
        raise ConfigError("epsilon_grid", "grid must be non-empty")
    if not rho_grid:
        raise ConfigError("rho_grid", "grid must be non-empty")
    t = _positive_time(cfg)
    orders = _get(cfg, "r", list, required=False, default=[1])
    bases = _get(cfg, "basis", (str, list), required=False,
                 default="const_plus_eps2")
    if isinstance(bases, str):
        bases = [bases]
    for basis in bases:
        if basis not in BASES:
            raise ConfigError("basis", f"unknown basis {basis!r}; available: "
                              f"{', '.join(sorted(BASES))}")
        axis_len = len(eps_grid) if BASES[basis][1] == "epsilon" else len(rho_grid)
        arity = 2
        if axis_len < arity + 2:
            raise ConfigError("basis", f"basis {basis!r} needs at least "
                              f"{arity + 2} cells along its axis, got {axis_len}")
    sim = _build_sim(cfg)
    sweeps = run_sweep(model, x0, rho_grid, eps_grid, t, orders, sim)
    fits = []
    for sweep in sweeps:
        tag = f"{sweep.r:g}".replace(".", "p")
        sweep.write_csv(run.path(f"sweep_r{tag}.csv"))
        for basis in bases:
            axis = BASES[basis][1]
            fixed_values = rho_grid if axis == "epsilon" else eps_grid
            for v in fixed_values:
                sub = sweep.restrict(rho=v) if axis == "epsilon" \
                    else sweep.restrict(epsilon=v)
                fit = fit_scaling(sub, basis)
                entry = {"r": sweep.r,
                         "fixed_rho" if axis == "epsilon" else "fixed_epsilon": v}
                entry.update(fit.to_json())
                fits.append(entry)
    run.write_json("fits.json", {"fits": fits})


def _build_constants(cfg: dict, model) -> bnd.BoundConstants:
    spec = _get(cfg, "bound.constants", (dict, str), required=False,
                default="model")
    if spec == "model":
        return model.constants
    if spec == "estimate":
        return bnd.estimate_constants(model)
    if isinstance(spec, dict):
        try:
            return bnd.BoundConstants(
                k_grad_u=spec["k_grad_u"], k_hess_u=spec["k_hess_u"],
                k_grad_sigma=spec["k_grad_sigma"], k_sigma=spec["k_sigma"],
                k_linear_growth=spec.get("k_linear_growth", 0.0),
                n=spec.get("n", model.dim_state))
        except (KeyError, ValueError) as exc:
            raise ConfigError("bound.constants", str(exc)) from exc
    raise ConfigError("bound.constants",
                      "expected 'model', 'estimate' or a mapping")


def _run_bound(run: _Run) -> None:
    cfg = run.cfg
    model = _build_model(cfg)
    r = float(_get(cfg, "bound.r", (int, float)))
    t = float(_get(cfg, "bound.t", (int, float)))
    epsilon = float(_get(cfg, "bound.epsilon", (int, float)))
    rho = _get(cfg, "bound.rho", (int, float), required=False)
    if rho is not None:
        sigma0 = float(rho) ** 2 * np.eye(model.dim_state)
        delta_r = bnd.gaussian_delta_bound(sigma0, r)
        delta_2r = bnd.gaussian_delta_bound(sigma0, 2 * r)
    else:
        delta_r = float(_get(cfg, "bound.delta_r", (int, float),
                             required=False, default=0.0))
        delta_2r = float(_get(cfg, "bound.delta_2r", (int, float),
                              required=False, default=0.0))
    constants = _build_constants(cfg, model)
    try:
        breakdown = bnd.bound_rhs(r, t, epsilon, delta_r, delta_2r, constants)
    except ValueError as exc:
        raise ConfigError("bound", str(exc)) from exc
    payload = breakdown.to_json()
    payload["constants"] = {
        "k_grad_u": constants.k_grad_u, "k_hess_u": constants.k_hess_u,
        "k_grad_sigma": constants.k_grad_sigma, "k_sigma": constants.k_sigma,
        "n": constants.n}
    run.write_json("bound.json", payload)


def _build_grid(cfg: dict, model) -> GridSpec:
    axes = _get(cfg, "grid", list)
    try:
        grid = GridSpec(tuple(tuple(ax) for ax in axes))
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid", str(exc)) from exc
    if grid.dim != model.dim_state:
        raise ConfigError("grid", f"grid dimension {grid.dim} does not match "
                          f"model dimension {model.dim_state}")
    return grid


def _run_s2_field(run: _Run, with_robust: bool) -> None:
    cfg = run.cfg
    model = _build_model(cfg)
    grid = _build_grid(cfg, model)
    t = _positive_time(cfg)
    workers = int(_get(cfg, "workers", int, required=False, default=1))
    fld = _get(cfg, "field", dict, required=False, default={})
    method = fld.get("method", "rk45")
    if method not in ("rk45", "mazzoni"):
        raise ConfigError("field.method", f"unknown method {method!r}")
    field = s2_field(model, grid, t, workers=workers,
                     tol=fld.get("tol", 1e-6), method=method,
                     dt=fld.get("dt", 2e-3))
    if with_robust:
        threshold = _get(cfg, "threshold", (int, float))
        if threshold < 0:
            raise ConfigError("threshold", "must be non-negative")
        robust = extract_robust_set(field, float(threshold))
        write_robust_csv(field, robust, run.path("robust.csv"))
        meta = field.header()
        meta["threshold"] = robust.threshold
        meta["robust_fraction"] = robust.fraction
        run.write_json("robust.json", meta)
    else:
        field.write_csv(run.path("field.csv"))
        run.write_json("field.json", field.header())


_DISPATCH = {
    "simulate": _run_simulate,
    "histogram": _run_histogram,
    "validate-scaling": _run_validate_scaling,
    "bound": _run_bound,
    "s2-field": lambda run: _run_s2_field(run, with_robust=False),
    "robust-set": lambda run: _run_s2_field(run, with_robust=True),
}


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg.setdefault("simulation", {})["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["output_dir"] = args.out
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="linsde",
        description="Run a JSON-configured experiment: coupled simulation, "
                    "scaling validation, error bounds or sensitivity fields.")
    parser.add_argument("config", help="path to the JSON run configuration")
    parser.add_argument("--seed", type=int, help="override simulation.seed")
    parser.add_argument("--workers", type=int, help="override workers")
    parser.add_argument("--out", help="override output_dir")
    args = parser.parse_args(argv)

    try:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}")
        if not isinstance(cfg, dict):
            raise ConfigError("config", "top level must be a JSON object")
        cfg = _apply_overrides(cfg, args)
        command = _get(cfg, "command", str)
        if command not in COMMANDS:
            raise ConfigError("command", f"unknown command {command!r}; "
                              f"available: {', '.join(COMMANDS)}")
        out_dir = Path(_get(cfg, "output_dir", str, required=False,
                            default="."))
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError("output_dir", f"not writable: {exc}")
        run = _Run(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        _DISPATCH[command](run)
        run.write_provenance(command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LinSDEError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
