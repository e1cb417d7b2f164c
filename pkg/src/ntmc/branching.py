"""Event-driven simulation of the neutron branching process.

Particles fly in straight lines; scatter and fission compete as exponential
clocks whose rates are constant per material segment, so event times are
sampled exactly (no time-step bias). A particle that reaches the domain
boundary is removed; fission replaces the parent by the offspring draw at the
same position; scatter redraws the velocity from the region's scatter kernel.

Lines of descent are independent, so one trial is processed depth-first with
a stack. All flight segments can be recorded, which lets a single simulation
evaluate population functionals at any set of intermediate times.
"""

import math
from collections import namedtuple
from dataclasses import dataclass, field

from .harness import EstimateWithError, EstimationError, map_trials, seed_root, summarize_values, trial_rng
from .materials import MaterialModel, draw_offspring

__all__ = [
    "ParticleState",
    "Population",
    "EventLog",
    "Caps",
    "NBPResult",
    "advance_particle",
    "simulate_nbp",
    "estimate_psi_branching",
    "martingale_trace",
    "martingale_means",
    "extinction_probability",
]


@dataclass(frozen=True)
class ParticleState:
    r: tuple
    v: tuple
    birth_time: float = 0.0


@dataclass
class Population:
    """Particles alive at a given time; an empty list encodes extinction."""

    time: float
    particles: list

    def count(self) -> int:
        return len(self.particles)

    def functional(self, g) -> float:
        return math.fsum(g(p.r, p.v) for p in self.particles)


@dataclass
class EventLog:
    """Per-trial record of (time, kind, parent (r, v), offspring states)."""

    events: list = field(default_factory=list)

    def kinds(self):
        return [e[1] for e in self.events]


@dataclass(frozen=True)
class Caps:
    """Guards against supercritical explosion within a single trial."""

    max_particles: int = 10**6
    max_events: int = 10**8


# kind is one of "scatter", "fission", "boundary", "horizon"; time is absolute
Advance = namedtuple("Advance", ["kind", "time", "r"])


def advance_particle(mm: MaterialModel, p: ParticleState, horizon, rng) -> Advance:
    """Fly one particle until its next event, the boundary, or the horizon.

    One unit-exponential threshold is compared against the accumulated
    hazard across material segments, which is exact for piecewise-constant
    rates. With all rates zero the particle simply flies to the boundary.
    """
    budget = horizon - p.birth_time
    r, v = p.r, p.v
    if budget <= 0.0:
        return Advance("horizon", horizon, r)
    segments, exited = mm.segment_ray(r, v, budget)
    threshold = rng.exponential()
    acc = 0.0
    for s_lo, s_hi, idx in segments:
        reg = mm.regions[idx]
        sig = reg.sigma_s + reg.sigma_f
        if sig > 0.0:
            s = s_lo + (threshold - acc) / sig
            if s < s_hi:
                r_new = (r[0] + v[0] * s, r[1] + v[1] * s, r[2] + v[2] * s)
                kind = "scatter" if rng.random() * sig < reg.sigma_s else "fission"
                return Advance(kind, p.birth_time + s, r_new)
            acc += (s_hi - s_lo) * sig
    end = segments[-1][1]
    r_end = (r[0] + v[0] * end, r[1] + v[1] * end, r[2] + v[2] * end)
    if exited:
        return Advance("boundary", p.birth_time + end, r_end)
    return Advance("horizon", horizon, r_end)


@dataclass
class NBPResult:
    population: Population
    event_log: object  # EventLog | None
    truncated: bool
    extinction_time: float  # last removal time if extinct by the horizon, else nan
    segments: list  # (t0, t1, r_at_t0, v) flight records, or None
    n_events: int
    n_particles: int

    @property
    def extinct(self) -> bool:
        return self.population.count() == 0


def simulate_nbp(
    mm: MaterialModel,
    initial,
    horizon,
    rng,
    caps: Caps = Caps(),
    record_events: bool = False,
    record_segments: bool = False,
) -> NBPResult:
    """Run one trial of the branching process up to the horizon.

    ``initial`` is a Population or an iterable of ParticleState. If a cap is
    hit the result is flagged truncated and must not enter estimators.
    """
    if isinstance(initial, Population):
        initial = initial.particles
    stack = [(p.r, p.v, p.birth_time) for p in reversed(list(initial))]
    survivors = []
    events = [] if record_events else None
    segments = [] if record_segments else None
    n_events = 0
    n_particles = len(stack)
    last_removal = 0.0
    truncated = False

    while stack:
        r, v, t = stack.pop()
        while True:
            adv = advance_particle(mm, ParticleState(r, v, t), horizon, rng)
            if segments is not None:
                segments.append((t, adv.time, r, v))
            if adv.kind == "horizon":
                survivors.append(ParticleState(adv.r, v, t))
                break
            n_events += 1
            if n_events > caps.max_events:
                truncated = True
                break
            if adv.kind == "boundary":
                last_removal = max(last_removal, adv.time)
                if events is not None:
                    events.append((adv.time, "boundary_kill", (r, v), ()))
                break
            assert mm.domain.contains(adv.r)
            if adv.kind == "scatter":
                reg = mm.region_at(adv.r)
                v_new = reg.scatter_kernel.sample(mm.vspace, rng)
                if events is not None:
                    events.append((adv.time, "scatter", (r, v), ((adv.r, v_new),)))
                r, v, t = adv.r, v_new, adv.time
                continue
            # fission
            off = draw_offspring(mm, adv.r, v, rng)
            if events is not None:
                events.append(
                    (adv.time, "fission", (r, v), tuple((adv.r, w) for w in off.velocities))
                )
            if off.count == 0:
                last_removal = max(last_removal, adv.time)
                break
            n_particles += off.count
            if n_particles > caps.max_particles:
                truncated = True
                break
            for w in off.velocities:
                stack.append((adv.r, w, adv.time))
            break
        if truncated:
            break

    log = None
    if events is not None:
        events.sort(key=lambda e: e[0])
        log = EventLog(events=events)
    pop = Population(float(horizon), survivors)
    extinction_time = last_removal if (not truncated and not survivors) else math.nan
    return NBPResult(
        population=pop,
        event_log=log,
        truncated=truncated,
        extinction_time=extinction_time,
        segments=segments,
        n_events=n_events,
        n_particles=n_particles,
    )


def estimate_psi_branching(
    mm: MaterialModel, r, v, g, t, trials, rng, caps: Caps = Caps(), threads: int = 1
) -> EstimateWithError:
    """Mean of the population functional sum(g) at time t over many trials."""
    root = seed_root(rng)
    start = (ParticleState(tuple(r), tuple(v), 0.0),)

    def one(i):
        res = simulate_nbp(mm, start, t, trial_rng(root, i), caps=caps)
        if res.truncated:
            return None
        return res.population.functional(g)

    values = map_trials(one, trials, threads)
    used = [x for x in values if x is not None]
    n_trunc = len(values) - len(used)
    if not used:
        raise EstimationError(f"all {trials} trials hit a cap")
    return summarize_values(used, trials_truncated=n_trunc)


def _phi_population_sum(segments, spectral, t, horizon):
    """Sum of phi over particles alive at time t, from flight segments."""
    total = 0.0
    at_horizon = t >= horizon
    for t0, t1, r, v in segments:
        if t0 <= t < t1 or (at_horizon and t1 >= horizon and t0 <= t):
            s = t - t0
            total += spectral.phi_at((r[0] + v[0] * s, r[1] + v[1] * s, r[2] + v[2] * s), v)
    return total


def martingale_trace(mm: MaterialModel, spectral, r, v, time_grid, rng, caps: Caps = Caps()):
    """One trajectory of W_t = exp(-lambda* t) <phi, X_t> / phi(r, v)."""
    r = tuple(r)
    v = tuple(v)
    phi0 = spectral.phi_at(r, v)
    if not phi0 > 0.0:
        raise ValueError(f"phi is not positive at the start point, got {phi0}")
    times = sorted(float(t) for t in time_grid)
    horizon = times[-1] if times else 0.0
    if isinstance(rng, (int, tuple, list)):
        rng = trial_rng(seed_root(rng), 0)
    res = simulate_nbp(
        mm, (ParticleState(r, v, 0.0),), horizon, rng, caps=caps, record_segments=True
    )
    if res.truncated:
        raise EstimationError("trial hit a cap; no trace available")
    lam = spectral.lambda_star
    return [
        (t, math.exp(-lam * t) * _phi_population_sum(res.segments, spectral, t, horizon) / phi0)
        for t in times
    ]


def martingale_means(
    mm: MaterialModel, spectral, r, v, time_grid, trials, rng, caps: Caps = Caps(), threads: int = 1
):
    """E[W_t] on a time grid; returns a list of (t, EstimateWithError)."""
    r = tuple(r)
    v = tuple(v)
    phi0 = spectral.phi_at(r, v)
    if not phi0 > 0.0:
        raise ValueError(f"phi is not positive at the start point, got {phi0}")
    times = sorted(float(t) for t in time_grid)
    horizon = times[-1]
    lam = spectral.lambda_star
    root = seed_root(rng)
    start = (ParticleState(r, v, 0.0),)

    def one(i):
        res = simulate_nbp(
            mm, start, horizon, trial_rng(root, i), caps=caps, record_segments=True
        )
        if res.truncated:
            return None
        return [
            math.exp(-lam * t) * _phi_population_sum(res.segments, spectral, t, horizon) / phi0
            for t in times
        ]

    rows = map_trials(one, trials, threads)
    used = [row for row in rows if row is not None]
    n_trunc = len(rows) - len(used)
    if not used:
        raise EstimationError(f"all {trials} trials hit a cap")
    return [
        (t, summarize_values([row[j] for row in used], trials_truncated=n_trunc))
        for j, t in enumerate(times)
    ]


def extinction_probability(
    mm: MaterialModel, r, v, horizon, trials, rng, caps: Caps = Caps(), threads: int = 1
) -> EstimateWithError:
    """Fraction of trials with an empty population at the horizon."""
    root = seed_root(rng)
    start = (ParticleState(tuple(r), tuple(v), 0.0),)

    def one(i):
        res = simulate_nbp(mm, start, horizon, trial_rng(root, i), caps=caps)
        if res.truncated:
            return None
        return 1.0 if res.extinct else 0.0

    values = map_trials(one, trials, threads)
    used = [x for x in values if x is not None]
    n_trunc = len(values) - len(used)
    if not used:
        raise EstimationError(f"all {trials} trials hit a cap")
    return summarize_values(used, trials_truncated=n_trunc)
