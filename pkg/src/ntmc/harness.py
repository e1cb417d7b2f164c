"""Configuration ingestion, estimator statistics, and experiment orchestration.

All randomness flows from one integer master seed: trial k uses the stream
seeded by (master_seed, k), plus further subkeys for nested processes. This
makes every experiment reproducible bit-for-bit regardless of thread count,
because per-trial work never shares generator state.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, Box, GeometryError, VelocitySpace
from .materials import KernelSpec, MaterialModel, MaterialRegion, MaterialsError

__all__ = [
    "EstimateWithError",
    "EstimationError",
    "ConfigError",
    "ExperimentConfig",
    "summarize_values",
    "combine_estimates",
    "seed_root",
    "trial_rng",
    "map_trials",
    "load_config",
    "parse_config",
    "config_to_dict",
    "save_config",
    "criticality_scan",
]


class EstimationError(RuntimeError):
    """No usable trials (for example, every trial hit a cap)."""


@dataclass(frozen=True)
class EstimateWithError:
    """Monte Carlo point estimate with its standard error."""

    mean: float
    std_error: float
    trials_used: int
    trials_truncated: int = 0

    def __post_init__(self):
        if self.trials_used < 1:
            raise EstimationError("an estimate needs at least one usable trial")
        if not self.std_error >= 0.0:
            raise EstimationError(f"negative standard error {self.std_error}")

    def agrees_with(self, other, n_se=3.0, slack=0.0) -> bool:
        """Two-estimate consistency at n_se combined standard errors."""
        tol = n_se * math.hypot(self.std_error, other.std_error) + slack
        return abs(self.mean - other.mean) <= tol


def summarize_values(values, trials_truncated=0) -> EstimateWithError:
    """Sample mean and standard error of per-trial values.

    Uses exactly-rounded summation so the result does not depend on how the
    trials were sharded across threads.
    """
    values = [float(x) for x in values]
    n = len(values)
    if n == 0:
        raise EstimationError("no usable trials")
    mean = math.fsum(values) / n
    if n == 1:
        return EstimateWithError(mean, 0.0, 1, trials_truncated)
    var = math.fsum((x - mean) ** 2 for x in values) / (n - 1)
    return EstimateWithError(mean, math.sqrt(max(var, 0.0) / n), n, trials_truncated)


def combine_estimates(shards) -> EstimateWithError:
    """Pool per-shard estimates from identically configured runs."""
    shards = list(shards)
    if not shards:
        raise EstimationError("nothing to combine")
    if len(shards) == 1:
        return shards[0]
    n_total = sum(s.trials_used for s in shards)
    trunc = sum(s.trials_truncated for s in shards)
    total = math.fsum(s.trials_used * s.mean for s in shards)
    mean = total / n_total
    # reassemble sum of squares from each shard's (mean, se, n)
    ss = math.fsum(
        (s.trials_used - 1) * (s.std_error**2 * s.trials_used) + s.trials_used * s.mean**2
        for s in shards
    )
    var = max(ss - n_total * mean**2, 0.0) / (n_total - 1)
    return EstimateWithError(mean, math.sqrt(var / n_total), n_total, trunc)


def seed_root(rng_or_seed) -> int:
    """Normalize a seed argument (int, key tuple, or Generator) to an integer root."""
    if isinstance(rng_or_seed, (int, np.integer)):
        root = int(rng_or_seed)
        if root < 0:
            raise ValueError("seeds must be nonnegative")
        return root
    if isinstance(rng_or_seed, (tuple, list)):
        keys = tuple(int(k) for k in rng_or_seed)
        return int(np.random.default_rng(keys).integers(0, 2**63 - 1))
    if isinstance(rng_or_seed, np.random.Generator):
        return int(rng_or_seed.integers(0, 2**63 - 1))
    raise TypeError(f"expected an int seed or numpy Generator, got {type(rng_or_seed)!r}")


def trial_rng(root: int, trial_index: int, *subkeys) -> np.random.Generator:
    """Independent stream for one trial (and optional nested subprocesses)."""
    return np.random.default_rng((root, trial_index) + tuple(int(k) for k in subkeys))


def map_trials(fn, n_trials, threads=1):
    """Run fn(trial_index) for each trial, returning results in trial order.

    Results are identical for any thread count: each trial derives its own
    random stream from its index, and aggregation order is fixed.
    """
    if threads <= 1:
        return [fn(i) for i in range(n_trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_trials)))


# ---------------------------------------------------------------------------
# configuration


class ConfigError(ValueError):
    """Schema or invariant violations, with one (field_path, message) per issue."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid config: {lines}")


@dataclass(frozen=True)
class ExperimentConfig:
    domain: object
    vspace: VelocitySpace
    regions: tuple
    initial: tuple  # ((r, v), ...)
    horizons: tuple
    trials: int
    master_seed: int
    offspring_mode: str = "remark22"
    offspring_pmf: tuple = ()
    grid: tuple = ()  # (nx, ny, nz, velocity_nodes, dt) or empty
    outputs: str = ""

    def model(self) -> MaterialModel:
        return MaterialModel(
            self.domain,
            self.vspace,
            self.regions,
            offspring_mode=self.offspring_mode,
            offspring_pmf=self.offspring_pmf or None,
        )

    @property
    def horizon(self) -> float:
        return self.horizons[0]


def _parse_shape(node, path, errors, allow_rest=False):
    if allow_rest and node == "rest":
        return None
    if not isinstance(node, dict):
        errors.append((path, "expected a shape object" + (' or "rest"' if allow_rest else "")))
        return None
    kind = node.get("shape")
    try:
        if kind == "ball":
            return Ball(tuple(node["center"]), node["radius"])
        if kind == "box":
            return Box(tuple(node["lo"]), tuple(node["hi"]))
        errors.append((f"{path}.shape", f'unknown shape {kind!r} (want "ball" or "box")'))
    except (KeyError, TypeError, ValueError) as exc:
        errors.append((path, str(exc)))
    return None


def _parse_kernel(node, path, errors):
    if node in (None, "isotropic", "isotropic_uniform"):
        return KernelSpec()
    if isinstance(node, dict) and "atoms" in node:
        try:
            return KernelSpec(
                kind="finite_atoms",
                atoms=tuple((tuple(a["v"]), a["w"]) for a in node["atoms"]),
            )
        except (KeyError, TypeError, ValueError, MaterialsError) as exc:
            errors.append((path, str(exc)))
            return KernelSpec()
    errors.append((path, f"unknown kernel spec {node!r}"))
    return KernelSpec()


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; raises ConfigError listing all problems."""
    errors = []
    if not isinstance(doc, dict):
        raise ConfigError([("", "config must be a JSON object")])

    domain = None
    if "domain" not in doc:
        errors.append(("domain", "missing"))
    else:
        domain = _parse_shape(doc["domain"], "domain", errors)

    vspace = None
    vs = doc.get("vspace")
    if not isinstance(vs, dict):
        errors.append(("vspace", "missing or not an object"))
    else:
        try:
            vspace = VelocitySpace(vs.get("v_min", 0.0), vs.get("v_max", 0.0))
        except (GeometryError, TypeError) as exc:
            errors.append(("vspace.v_min", str(exc)))

    regions = []
    reg_nodes = doc.get("regions")
    if not isinstance(reg_nodes, list) or not reg_nodes:
        errors.append(("regions", "must be a nonempty list"))
        reg_nodes = []
    for i, node in enumerate(reg_nodes):
        path = f"regions[{i}]"
        if not isinstance(node, dict):
            errors.append((path, "must be an object"))
            continue
        shape = _parse_shape(node.get("region", "rest"), f"{path}.region", errors, allow_rest=True)
        try:
            regions.append(
                MaterialRegion(
                    shape=shape,
                    sigma_s=node.get("sigma_s", 0.0),
                    sigma_f=node.get("sigma_f", 0.0),
                    fission_mean=node.get("fission_mean", 0.0),
                    scatter_kernel=_parse_kernel(node.get("scatter_kernel"), f"{path}.scatter_kernel", errors),
                    fission_kernel=_parse_kernel(node.get("fission_kernel"), f"{path}.fission_kernel", errors),
                )
            )
        except (MaterialsError, TypeError) as exc:
            errors.append((path, str(exc)))
    if regions and regions[-1].shape is not None:
        errors.append(("regions", 'regions must cover domain: last entry must be "rest"'))

    initial = []
    for i, node in enumerate(doc.get("initial", [])):
        path = f"initial[{i}]"
        try:
            r = tuple(float(x) for x in node["r"])
            v = tuple(float(x) for x in node["v"])
        except (KeyError, TypeError, ValueError) as exc:
            errors.append((path, str(exc)))
            continue
        if domain is not None and not domain.contains(r):
            errors.append((f"{path}.r", "initial position outside the domain"))
        if vspace is not None and not vspace.contains(v):
            errors.append((f"{path}.v", "initial velocity outside the velocity space"))
        initial.append((r, v))
    if not initial:
        errors.append(("initial", "at least one initial particle is required"))

    horizons_node = doc.get("horizon", doc.get("horizons"))
    horizons = ()
    if horizons_node is None:
        errors.append(("horizon", "missing"))
    else:
        if isinstance(horizons_node, (int, float)):
            horizons_node = [horizons_node]
        try:
            horizons = tuple(float(h) for h in horizons_node)
            if any(h <= 0 for h in horizons):
                errors.append(("horizon", "horizons must be positive"))
        except (TypeError, ValueError):
            errors.append(("horizon", "must be a number or list of numbers"))

    trials = doc.get("trials", 0)
    if not isinstance(trials, int) or trials < 1:
        errors.append(("trials", "must be a positive integer"))
    master_seed = doc.get("master_seed", 0)
    if not isinstance(master_seed, int) or master_seed < 0:
        errors.append(("master_seed", "must be a nonnegative integer"))

    grid = ()
    if "grid" in doc:
        gnode = doc["grid"]
        try:
            cells = tuple(int(c) for c in gnode["cells"])
            grid = cells + (int(gnode["velocity_nodes"]), float(gnode["dt"]))
            if len(cells) != 3 or any(c < 1 for c in cells):
                errors.append(("grid.cells", "must be three positive integers"))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(("grid", str(exc)))

    mode = doc.get("offspring_mode", "remark22")
    pmf = tuple(doc.get("offspring_pmf", ()))
    if mode not in ("remark22", "iid"):
        errors.append(("offspring_mode", f"unknown mode {mode!r}"))

    if errors:
        raise ConfigError(errors)

    cfg = ExperimentConfig(
        domain=domain,
        vspace=vspace,
        regions=tuple(regions),
        initial=tuple(initial),
        horizons=horizons,
        trials=trials,
        master_seed=master_seed,
        offspring_mode=mode,
        offspring_pmf=pmf,
        grid=grid,
        outputs=str(doc.get("outputs", "")),
    )
    try:
        cfg.model()
    except MaterialsError as exc:
        raise ConfigError([("regions", str(exc))])
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"malformed JSON: {exc}")])
    return parse_config(doc)


def _shape_to_dict(shape):
    if shape is None:
        return "rest"
    if isinstance(shape, Ball):
        return {"shape": "ball", "center": list(shape.center), "radius": shape.radius}
    return {"shape": "box", "lo": list(shape.lo), "hi": list(shape.hi)}


def _kernel_to_dict(kernel: KernelSpec):
    if kernel.kind == "isotropic_uniform":
        return "isotropic"
    return {"atoms": [{"v": list(v), "w": w} for v, w in kernel.atoms]}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "domain": _shape_to_dict(cfg.domain),
        "vspace": {"v_min": cfg.vspace.v_min, "v_max": cfg.vspace.v_max},
        "regions": [
            {
                "region": _shape_to_dict(reg.shape),
                "sigma_s": reg.sigma_s,
                "sigma_f": reg.sigma_f,
                "fission_mean": reg.fission_mean,
                "scatter_kernel": _kernel_to_dict(reg.scatter_kernel),
                "fission_kernel": _kernel_to_dict(reg.fission_kernel),
            }
            for reg in cfg.regions
        ],
        "initial": [{"r": list(r), "v": list(v)} for r, v in cfg.initial],
        "horizon": list(cfg.horizons) if len(cfg.horizons) > 1 else cfg.horizons[0],
        "trials": cfg.trials,
        "master_seed": cfg.master_seed,
    }
    if cfg.offspring_mode != "remark22":
        doc["offspring_mode"] = cfg.offspring_mode
        doc["offspring_pmf"] = list(cfg.offspring_pmf)
    if cfg.grid:
        doc["grid"] = {
            "cells": list(cfg.grid[:3]),
            "velocity_nodes": cfg.grid[3],
            "dt": cfg.grid[4],
        }
    if cfg.outputs:
        doc["outputs"] = cfg.outputs
    return doc


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def replace_fission_mean(cfg: ExperimentConfig, m: float) -> ExperimentConfig:
    """Copy of the config with fission_mean set to m in every fissile region."""
    regions = tuple(
        MaterialRegion(
            shape=reg.shape,
            sigma_s=reg.sigma_s,
            sigma_f=reg.sigma_f,
            fission_mean=m if reg.sigma_f > 0.0 else reg.fission_mean,
            scatter_kernel=reg.scatter_kernel,
            fission_kernel=reg.fission_kernel,
        )
        for reg in cfg.regions
    )
    return ExperimentConfig(
        domain=cfg.domain,
        vspace=cfg.vspace,
        regions=regions,
        initial=cfg.initial,
        horizons=cfg.horizons,
        trials=cfg.trials,
        master_seed=cfg.master_seed,
        offspring_mode=cfg.offspring_mode,
        offspring_pmf=cfg.offspring_pmf,
        grid=cfg.grid,
        outputs=cfg.outputs,
    )


def criticality_scan(
    base_config: ExperimentConfig,
    fission_mean_values,
    trials,
    rng,
    horizon=None,
    grid=None,
    t_window=(2.0, 4.0),
    threads=1,
):
    """Growth rate and survival across a fission-mean sweep.

    For each value m the model is re-tuned, the grid eigenvalue and the
    Monte Carlo growth-rate readout are computed, and the survival fraction
    at the horizon is estimated. Returns (rows, m_star) where each row is a
    dict with keys m, lambda_grid, lambda_mc, lambda_mc_se, survival,
    survival_se, and m_star is the linear-interpolation zero crossing of the
    grid eigenvalue (None if the scan does not bracket zero).
    """
    from . import branching, spectral  # deferred: these modules import harness

    values = sorted(float(m) for m in fission_mean_values)
    if any(m <= 0.0 for m in values):
        raise ValueError("fission mean scan values must be positive")
    root = seed_root(rng)
    horizon = float(horizon if horizon is not None else max(base_config.horizons))
    grid_spec = grid if grid is not None else (base_config.grid or (12, 12, 12, 16, 0.02))
    r0, v0 = base_config.initial[0]

    rows = []
    for j, m in enumerate(values):
        cfg = replace_fission_mean(base_config, m)
        mm = cfg.model()
        pg = spectral.PhaseGrid(
            mm.domain, mm.vspace, cells=grid_spec[:3], velocity_nodes=grid_spec[3], dt=grid_spec[4]
        )
        triple = spectral.power_iterate(spectral.build_step_operator(mm, pg))
        lam_mc = spectral.estimate_lambda_mc(
            mm, r0, v0, t_window[0], t_window[1], trials, (root, 2 * j), threads=threads
        )
        ext = branching.extinction_probability(
            mm, r0, v0, horizon, trials, (root, 2 * j + 1), threads=threads
        )
        rows.append(
            {
                "m": m,
                "lambda_grid": triple.lambda_star,
                "lambda_mc": lam_mc.mean,
                "lambda_mc_se": lam_mc.std_error,
                "survival": 1.0 - ext.mean,
                "survival_se": ext.std_error,
            }
        )

    m_star = None
    for a, b in zip(rows[:-1], rows[1:]):
        la, lb = a["lambda_grid"], b["lambda_grid"]
        if la == 0.0:
            m_star = a["m"]
        elif la < 0.0 <= lb:
            m_star = a["m"] + (b["m"] - a["m"]) * (0.0 - la) / (lb - la)
    return rows, m_star
