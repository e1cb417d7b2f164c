"""Cross-sections, scatter/fission kernels, and the offspring mechanism.

A material model is a list of regions with piecewise-constant scatter and
fission rates. Rates are constant in velocity, which keeps per-segment event
sampling exact. The first region in the list that contains a point wins; the
last region must cover the rest of the domain (``shape=None``).

The combined walk data (``alpha``, ``pi_density``) and the potential
(``beta``) are derived fields; ``draw_offspring`` implements the bounded
all-same-velocity fission mechanism (count in {0, n_max}) plus an iid mode
where the count comes from a user pmf and velocities are drawn independently.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, Box, GeometryError, VelocitySpace

__all__ = [
    "MaterialsError",
    "KernelSpec",
    "MaterialRegion",
    "MaterialModel",
    "OffspringDraw",
    "alpha",
    "pi_density",
    "beta",
    "beta_bar",
    "draw_offspring",
]

log = logging.getLogger(__name__)


class MaterialsError(ValueError):
    """Invalid material construction or query."""


@dataclass(frozen=True)
class KernelSpec:
    """Velocity kernel: uniform density on V, or a finite set of atoms.

    Atom weights are normalized to sum to 1 on construction. The uniform
    kind has Lebesgue density 1/volume(V); the atomic kind has none, so
    ``density`` is only defined for the uniform kind.
    """

    kind: str = "isotropic_uniform"
    atoms: tuple = ()

    def __post_init__(self):
        if self.kind not in ("isotropic_uniform", "finite_atoms"):
            raise MaterialsError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "finite_atoms":
            if not self.atoms:
                raise MaterialsError("finite_atoms kernel needs at least one atom")
            total = 0.0
            cleaned = []
            for v, w in self.atoms:
                w = float(w)
                if w < 0.0:
                    raise MaterialsError("atom weights must be nonnegative")
                cleaned.append(((float(v[0]), float(v[1]), float(v[2])), w))
                total += w
            if total <= 0.0:
                raise MaterialsError("atom weights must have positive total")
            object.__setattr__(
                self, "atoms", tuple((v, w / total) for v, w in cleaned)
            )
        elif self.atoms:
            raise MaterialsError("isotropic_uniform kernel carries no atoms")

    def sample(self, vspace: VelocitySpace, rng):
        if self.kind == "isotropic_uniform":
            return vspace.sample_uniform(rng)
        u = rng.random()
        acc = 0.0
        for v, w in self.atoms:
            acc += w
            if u < acc:
                return v
        return self.atoms[-1][0]

    def density(self, vspace: VelocitySpace, v) -> float:
        if self.kind != "isotropic_uniform":
            raise MaterialsError("finite_atoms kernel has no Lebesgue density")
        return 1.0 / vspace.volume()

    def mean_of(self, vspace: VelocitySpace, g) -> float:
        """Expectation of g(v') under this (normalized) kernel.

        Uniform kind integrates exactly in the radial variable and uses a
        dense spherical average for the angular part of g; atomic kind sums.
        """
        if self.kind == "finite_atoms":
            return sum(w * g(v) for v, w in self.atoms)
        # midpoint product rule, fine for the smooth g used in tests
        n_rho, n_z, n_phi = 64, 32, 32
        lo3, hi3 = vspace.v_min**3, vspace.v_max**3
        total = 0.0
        for i in range(n_rho):
            rho = ((lo3 + (i + 0.5) / n_rho * (hi3 - lo3))) ** (1.0 / 3.0)
            for j in range(n_z):
                z = -1.0 + 2.0 * (j + 0.5) / n_z
                s = math.sqrt(1.0 - z * z)
                for k in range(n_phi):
                    ph = 2.0 * math.pi * (k + 0.5) / n_phi
                    total += g((rho * s * math.cos(ph), rho * s * math.sin(ph), rho * z))
        return total / (n_rho * n_z * n_phi)


@dataclass(frozen=True)
class MaterialRegion:
    """Homogeneous subvolume: rates, fission mean, and kernels.

    ``shape=None`` matches everywhere and is the required final catch-all.
    """

    shape: object  # Ball | Box | None ("rest of the domain")
    sigma_s: float
    sigma_f: float
    fission_mean: float = 0.0
    scatter_kernel: KernelSpec = field(default_factory=KernelSpec)
    fission_kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        object.__setattr__(self, "sigma_s", float(self.sigma_s))
        object.__setattr__(self, "sigma_f", float(self.sigma_f))
        object.__setattr__(self, "fission_mean", float(self.fission_mean))
        for name in ("sigma_s", "sigma_f", "fission_mean"):
            x = getattr(self, name)
            if not (x >= 0.0 and math.isfinite(x)):
                raise MaterialsError(f"{name} must be finite and nonnegative, got {x}")

    @property
    def alpha(self) -> float:
        return self.sigma_s + self.sigma_f * self.fission_mean

    @property
    def beta(self) -> float:
        return self.sigma_f * (self.fission_mean - 1.0)


@dataclass(frozen=True)
class OffspringDraw:
    """Outcome of one fission: the released velocities and their count."""

    velocities: tuple
    count: int


class MaterialModel:
    """Domain + velocity space + ordered material regions (first match wins).

    offspring_mode:
      "remark22"  count in {0, n_max}, all offspring share one velocity drawn
                  from the fission kernel; P(count = n_max) = mean / n_max.
      "iid"       count drawn from ``offspring_pmf``, velocities iid from the
                  fission kernel. The pmf mean must equal the region's
                  fission_mean.
    """

    def __init__(self, domain, vspace, regions, offspring_mode="remark22", offspring_pmf=None):
        if not regions:
            raise MaterialsError("at least one material region is required")
        if regions[-1].shape is not None:
            raise MaterialsError('last region must be the catch-all ("rest")')
        self.domain = domain
        self.vspace = vspace
        self.regions = tuple(regions)
        if offspring_mode not in ("remark22", "iid"):
            raise MaterialsError(f"unknown offspring mode {offspring_mode!r}")
        self.offspring_mode = offspring_mode
        self.offspring_pmf = None
        if offspring_mode == "iid":
            if not offspring_pmf:
                raise MaterialsError("iid offspring mode needs a pmf over counts")
            pmf = tuple(float(p) for p in offspring_pmf)
            if any(p < 0 for p in pmf) or abs(sum(pmf) - 1.0) > 1e-12:
                raise MaterialsError("offspring pmf must be nonnegative and sum to 1")
            self.offspring_pmf = pmf

        fission_means = [reg.fission_mean for reg in self.regions if reg.sigma_f > 0.0]
        self.has_fission = bool(fission_means)
        if self.has_fission:
            n_max = max(1, math.ceil(max(fission_means) - 1e-12))
            # bounded-offspring assumption wants n_max > 1 whenever fission exists
            self.n_max = max(n_max, 2)
        else:
            self.n_max = 0
        if self.offspring_pmf is not None and self.has_fission:
            pmf_mean = sum(k * p for k, p in enumerate(self.offspring_pmf))
            for reg in self.regions:
                if reg.sigma_f > 0.0 and abs(pmf_mean - reg.fission_mean) > 1e-9:
                    raise MaterialsError(
                        f"offspring pmf mean {pmf_mean} != fission_mean {reg.fission_mean}"
                    )
            self.n_max = max(self.n_max, len(self.offspring_pmf) - 1)

        if any(reg.alpha == 0.0 for reg in self.regions):
            log.warning(
                "material model has a region with zero total walk rate; "
                "irreducibility of the velocity mixing is not guaranteed"
            )

    def region_index_at(self, r) -> int:
        for i, reg in enumerate(self.regions):
            if reg.shape is None or reg.shape.contains(r):
                return i
        raise MaterialsError(f"point {tuple(r)} matched no region")  # unreachable

    def region_at(self, r) -> MaterialRegion:
        return self.regions[self.region_index_at(r)]

    def beta_bar(self) -> float:
        return max(reg.beta for reg in self.regions)

    def segment_ray(self, r, v, t_max):
        """Split the flight r + v s, 0 < s <= t_max, into material segments.

        Returns (segments, exited) where segments is a list of
        (s_lo, s_hi, region_index) and exited says the flight reaches the
        domain boundary at the final segment end. Region lookup uses segment
        midpoints, which is exact away from the measure-zero crossing set.
        """
        kappa = self.domain.exit_time(r, v)
        end = min(t_max, kappa)
        cuts = [0.0, end]
        for reg in self.regions:
            if reg.shape is None:
                continue
            for t in reg.shape.ray_boundary_times(r, v):
                if 0.0 < t < end:
                    cuts.append(t)
        cuts = sorted(set(cuts))
        segments = []
        for s_lo, s_hi in zip(cuts[:-1], cuts[1:]):
            if s_hi - s_lo <= 0.0:
                continue
            mid = 0.5 * (s_lo + s_hi)
            rm = (r[0] + v[0] * mid, r[1] + v[1] * mid, r[2] + v[2] * mid)
            segments.append((s_lo, s_hi, self.region_index_at(rm)))
        return segments, kappa <= t_max


def alpha(mm: MaterialModel, r, v) -> float:
    """Total walk rate sigma_s + sigma_f * fission_mean at (r, v)."""
    if not mm.domain.contains(r):
        raise GeometryError(f"alpha: point {tuple(r)} outside the domain")
    return mm.region_at(r).alpha


def pi_density(mm: MaterialModel, r, v, v_prime) -> float:
    """Normalized mixture kernel density at v_prime for a walker at (r, v)."""
    reg = mm.region_at(r)
    a = reg.alpha
    if a <= 0.0:
        raise MaterialsError("pi_density undefined where the total walk rate is zero")
    dens = reg.sigma_s * reg.scatter_kernel.density(mm.vspace, v_prime)
    if reg.sigma_f > 0.0 and reg.fission_mean > 0.0:
        dens += reg.sigma_f * reg.fission_mean * reg.fission_kernel.density(mm.vspace, v_prime)
    return dens / a


def beta(mm: MaterialModel, r, v) -> float:
    """Net local mass-creation rate sigma_f * (fission_mean - 1)."""
    if not mm.domain.contains(r):
        raise GeometryError(f"beta: point {tuple(r)} outside the domain")
    return mm.region_at(r).beta


def beta_bar(mm: MaterialModel) -> float:
    """Supremum of beta over the model; exact for piecewise-constant rates."""
    return mm.beta_bar()


def sample_pi(mm: MaterialModel, region: MaterialRegion, rng):
    """Draw a velocity from the normalized mixture kernel of the region."""
    a = region.alpha
    if a <= 0.0:
        raise MaterialsError("mixture kernel undefined where the total walk rate is zero")
    if rng.random() * a < region.sigma_s:
        return region.scatter_kernel.sample(mm.vspace, rng)
    return region.fission_kernel.sample(mm.vspace, rng)


def draw_offspring(mm: MaterialModel, r, v, rng) -> OffspringDraw:
    """Sample one fission outcome at (r, v).

    In remark22 mode the count is n_max with probability mean/n_max (else 0)
    and all offspring share one velocity from the fission kernel, which
    reproduces the required mean identity for any bounded g.
    """
    reg = mm.region_at(r)
    if reg.sigma_f <= 0.0:
        raise MaterialsError("draw_offspring requires sigma_f > 0 at the fission point")
    m = reg.fission_mean
    if mm.offspring_mode == "remark22":
        if m > mm.n_max + 1e-12:
            raise MaterialsError("fission mean exceeds the offspring bound")  # unreachable
        if rng.random() * mm.n_max < m:
            v_new = reg.fission_kernel.sample(mm.vspace, rng)
            return OffspringDraw(velocities=(v_new,) * mm.n_max, count=mm.n_max)
        return OffspringDraw(velocities=(), count=0)
    # iid mode
    u = rng.random()
    acc = 0.0
    n = len(mm.offspring_pmf) - 1
    for k, p in enumerate(mm.offspring_pmf):
        acc += p
        if u < acc:
            n = k
            break
    vels = tuple(reg.fission_kernel.sample(mm.vspace, rng) for _ in range(n))
    return OffspringDraw(velocities=vels, count=n)
