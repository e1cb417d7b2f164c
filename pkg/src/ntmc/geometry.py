"""Convex spatial domains and the velocity annulus.

Two domain shapes are supported, a ball and an axis-aligned box. Both are
convex with closed-form ray exit times, which keeps flight sampling exact.
Membership is strict (open interior): a point exactly on the boundary is
outside.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeometryError",
    "Ball",
    "Box",
    "VelocitySpace",
    "contains",
    "exit_time",
    "sample_velocity_uniform",
    "volume",
]


class GeometryError(ValueError):
    """Invalid geometric construction or query."""


def _as_point(p):
    x, y, z = p
    return (float(x), float(y), float(z))


@dataclass(frozen=True)
class Ball:
    """Open ball { r : |r - center| < radius }."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0.0:
            raise GeometryError(f"ball radius must be positive, got {self.radius}")

    def contains(self, r) -> bool:
        cx, cy, cz = self.center
        dx = r[0] - cx
        dy = r[1] - cy
        dz = r[2] - cz
        return dx * dx + dy * dy + dz * dz < self.radius * self.radius

    def bounding_box(self):
        cx, cy, cz = self.center
        R = self.radius
        return (cx - R, cy - R, cz - R), (cx + R, cy + R, cz + R)

    def ray_boundary_times(self, r, v):
        """Positive times at which the ray r + v t crosses the sphere."""
        cx, cy, cz = self.center
        px = r[0] - cx
        py = r[1] - cy
        pz = r[2] - cz
        a = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        if a == 0.0:
            return []
        b = px * v[0] + py * v[1] + pz * v[2]
        c = px * px + py * py + pz * pz - self.radius * self.radius
        disc = b * b - a * c
        if disc <= 0.0:
            return []
        s = math.sqrt(disc)
        t0 = (-b - s) / a
        t1 = (-b + s) / a
        return [t for t in (t0, t1) if t > 0.0]

    def exit_time(self, r, v) -> float:
        if not self.contains(r):
            raise GeometryError(f"exit_time: starting point {tuple(r)} is outside the ball")
        cx, cy, cz = self.center
        px = r[0] - cx
        py = r[1] - cy
        pz = r[2] - cz
        a = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        if a == 0.0:
            raise GeometryError("exit_time requires a nonzero velocity")
        b = px * v[0] + py * v[1] + pz * v[2]
        c = px * px + py * py + pz * pz - self.radius * self.radius
        # c < 0 inside, so the discriminant is positive and the + root is the exit
        return (-b + math.sqrt(b * b - a * c)) / a


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box { r : lo < r < hi componentwise }."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", _as_point(self.lo))
        object.__setattr__(self, "hi", _as_point(self.hi))
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise GeometryError(f"box needs lo < hi componentwise, got lo={self.lo} hi={self.hi}")

    def contains(self, r) -> bool:
        lo, hi = self.lo, self.hi
        return (
            lo[0] < r[0] < hi[0]
            and lo[1] < r[1] < hi[1]
            and lo[2] < r[2] < hi[2]
        )

    def bounding_box(self):
        return self.lo, self.hi

    def ray_boundary_times(self, r, v):
        """Positive times at which the ray enters or leaves the box (slab method)."""
        t_near = -math.inf
        t_far = math.inf
        for k in range(3):
            if v[k] == 0.0:
                if not (self.lo[k] < r[k] < self.hi[k]):
                    return []
                continue
            ta = (self.lo[k] - r[k]) / v[k]
            tb = (self.hi[k] - r[k]) / v[k]
            if ta > tb:
                ta, tb = tb, ta
            t_near = max(t_near, ta)
            t_far = min(t_far, tb)
        if t_near >= t_far:
            return []
        return [t for t in (t_near, t_far) if t > 0.0]

    def exit_time(self, r, v) -> float:
        if not self.contains(r):
            raise GeometryError(f"exit_time: starting point {tuple(r)} is outside the box")
        t_exit = math.inf
        for k in range(3):
            if v[k] > 0.0:
                t_exit = min(t_exit, (self.hi[k] - r[k]) / v[k])
            elif v[k] < 0.0:
                t_exit = min(t_exit, (self.lo[k] - r[k]) / v[k])
        if not math.isfinite(t_exit):
            raise GeometryError("exit_time requires a nonzero velocity")
        return t_exit


@dataclass(frozen=True)
class VelocitySpace:
    """Annulus { v : v_min <= |v| <= v_max } with 0 < v_min < v_max."""

    v_min: float
    v_max: float

    def __post_init__(self):
        object.__setattr__(self, "v_min", float(self.v_min))
        object.__setattr__(self, "v_max", float(self.v_max))
        if not (0.0 < self.v_min < self.v_max < math.inf):
            raise GeometryError(
                f"velocity space needs 0 < v_min < v_max, got [{self.v_min}, {self.v_max}]"
            )

    def contains(self, v) -> bool:
        s2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        return self.v_min**2 <= s2 <= self.v_max**2

    def volume(self) -> float:
        return (4.0 * math.pi / 3.0) * (self.v_max**3 - self.v_min**3)

    def sample_uniform(self, rng, size=None):
        """Velocities with law = normalized Lebesgue measure on the annulus.

        Speed has density proportional to rho^2, sampled by inverting the
        cube law; directions are uniform on the sphere. With ``size=None``
        returns a single (vx, vy, vz) tuple, otherwise an (size, 3) array.
        """
        scalar = size is None
        n = 1 if scalar else int(size)
        u = rng.random(n)
        rho = np.cbrt(self.v_min**3 + u * (self.v_max**3 - self.v_min**3))
        z = rng.uniform(-1.0, 1.0, n)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        s = np.sqrt(1.0 - z * z)
        out = np.column_stack((rho * s * np.cos(phi), rho * s * np.sin(phi), rho * z))
        if scalar:
            return (out[0, 0], out[0, 1], out[0, 2])
        return out


def contains(d, r) -> bool:
    """True iff the point r is strictly inside the domain d."""
    return d.contains(r)


def exit_time(d, r, v) -> float:
    """First t > 0 with r + v t outside d; finite for bounded domains."""
    return d.exit_time(r, v)


def sample_velocity_uniform(V: VelocitySpace, rng, size=None):
    """Draw uniformly from the velocity annulus V."""
    return V.sample_uniform(rng, size=size)


def volume(V: VelocitySpace) -> float:
    """Lebesgue volume of the velocity annulus."""
    return V.volume()
