"""Single-particle neutron random walks and the many-to-one estimator.

A walk is piecewise-linear with exponential jump clocks (rate per region) and
a velocity kernel applied at jumps; it dies at the domain boundary. The
many-to-one instance uses the combined rate alpha and mixture kernel pi, and
carries the exponential weight exp(integral of beta) accumulated analytically
per constant-beta segment. The killed variant adds an independent exponential
kill clock at rate (beta_bar - beta), sampled exactly per segment.

Functions are valued 0 at the cemetery: dead walkers contribute nothing.
"""

import math
from dataclasses import dataclass

from .harness import EstimateWithError, map_trials, seed_root, summarize_values, trial_rng
from .materials import MaterialModel, sample_pi

__all__ = [
    "WalkState",
    "WalkSpec",
    "simulate_nrw",
    "walk_snapshots",
    "many_to_one_values",
    "many_to_one_estimate",
    "killed_walk_survival",
]


@dataclass(frozen=True)
class WalkState:
    r: tuple
    v: tuple
    log_weight: float = 0.0
    alive: bool = True


@dataclass(frozen=True)
class WalkSpec:
    """Jump rates, weight rates, kill rates (all per region), and the kernel."""

    mm: MaterialModel
    rates: tuple
    betas: tuple
    kill_rates: tuple
    kernel: object  # None = per-region alpha-pi mixture, else a KernelSpec

    @classmethod
    def many_to_one(cls, mm: MaterialModel):
        """The alpha-pi walk with the beta weight of the many-to-one formula."""
        return cls(
            mm=mm,
            rates=tuple(reg.alpha for reg in mm.regions),
            betas=tuple(reg.beta for reg in mm.regions),
            kill_rates=(0.0,) * len(mm.regions),
            kernel=None,
        )

    @classmethod
    def killed(cls, mm: MaterialModel):
        """The alpha-pi walk killed at the extra rate beta_bar - beta."""
        bb = mm.beta_bar()
        return cls(
            mm=mm,
            rates=tuple(reg.alpha for reg in mm.regions),
            betas=(0.0,) * len(mm.regions),
            kill_rates=tuple(bb - reg.beta for reg in mm.regions),
            kernel=None,
        )

    @classmethod
    def custom(cls, mm: MaterialModel, rate: float, kernel):
        """Constant-rate walk with a fixed kernel (testing and diagnostics)."""
        n = len(mm.regions)
        return cls(mm=mm, rates=(float(rate),) * n, betas=(0.0,) * n, kill_rates=(0.0,) * n, kernel=kernel)

    def sample_velocity(self, region_index, r, v, rng):
        if self.kernel is not None:
            return self.kernel.sample(self.mm.vspace, rng)
        return sample_pi(self.mm, self.mm.regions[region_index], rng)


def walk_snapshots(spec: WalkSpec, r, v, times, rng):
    """State of one walk at each requested time.

    ``times`` must be sorted ascending. Returns a list of WalkState aligned
    with times; once the walk is killed (boundary or kill clock) the
    remaining snapshots are dead states with the weight frozen at death.
    """
    mm = spec.mm
    r = tuple(r)
    v = tuple(v)
    t = 0.0
    logw = 0.0
    k = 0
    n = len(times)
    horizon = times[-1]
    out = []
    while k < n:
        budget = horizon - t
        if budget <= 0.0:
            out.append(WalkState(r, v, logw, True))
            k += 1
            continue
        segments, exited = mm.segment_ray(r, v, budget)
        threshold = rng.exponential()
        acc = 0.0
        event = None  # (s, region_index, is_kill)
        for s_lo, s_hi, idx in segments:
            jump = spec.rates[idx]
            kill = spec.kill_rates[idx]
            total = jump + kill
            if total > 0.0:
                s = s_lo + (threshold - acc) / total
                if s < s_hi:
                    event = (s, idx, rng.random() * total >= jump)
                    break
                acc += (s_hi - s_lo) * total
        flight_end = event[0] if event is not None else segments[-1][1]
        ends_alive = event is None and not exited  # reached the horizon mid-flight

        # snapshots inside this flight, with the partial beta integral
        while k < n:
            s_k = times[k] - t
            if s_k < flight_end or (ends_alive and s_k <= flight_end):
                dw = 0.0
                for s_lo, s_hi, idx in segments:
                    if s_lo >= s_k:
                        break
                    dw += spec.betas[idx] * (min(s_hi, s_k) - s_lo)
                out.append(
                    WalkState(
                        (r[0] + v[0] * s_k, r[1] + v[1] * s_k, r[2] + v[2] * s_k),
                        v,
                        logw + dw,
                        True,
                    )
                )
                k += 1
            else:
                break
        if k >= n:
            break

        for s_lo, s_hi, idx in segments:
            if s_lo >= flight_end:
                break
            logw += spec.betas[idx] * (min(s_hi, flight_end) - s_lo)
        r = (r[0] + v[0] * flight_end, r[1] + v[1] * flight_end, r[2] + v[2] * flight_end)
        t += flight_end

        if event is not None and not event[2]:
            v = spec.sample_velocity(event[1], r, v, rng)
            continue
        if event is None and not exited:
            continue
        # killed: boundary exit or kill clock
        dead = WalkState(r, v, logw, False)
        while k < n:
            out.append(dead)
            k += 1
    return out


def simulate_nrw(spec: WalkSpec, r, v, horizon, rng):
    """Full time-stamped path of one walk: start, every jump, and the end.

    Returns a list of (time, WalkState); the final entry is either the
    horizon state (alive) or the death state at the boundary/kill time.
    """
    mm = spec.mm
    r = tuple(r)
    v = tuple(v)
    t = 0.0
    logw = 0.0
    path = [(0.0, WalkState(r, v, 0.0, True))]
    while t < horizon:
        segments, exited = mm.segment_ray(r, v, horizon - t)
        threshold = rng.exponential()
        acc = 0.0
        event = None
        for s_lo, s_hi, idx in segments:
            total = spec.rates[idx] + spec.kill_rates[idx]
            if total > 0.0:
                s = s_lo + (threshold - acc) / total
                if s < s_hi:
                    event = (s, idx, rng.random() * total >= spec.rates[idx])
                    break
                acc += (s_hi - s_lo) * total
        flight_end = event[0] if event is not None else segments[-1][1]
        for s_lo, s_hi, idx in segments:
            if s_lo >= flight_end:
                break
            logw += spec.betas[idx] * (min(s_hi, flight_end) - s_lo)
        r = (r[0] + v[0] * flight_end, r[1] + v[1] * flight_end, r[2] + v[2] * flight_end)
        t += flight_end
        if event is not None and not event[2]:
            v = spec.sample_velocity(event[1], r, v, rng)
            path.append((t, WalkState(r, v, logw, True)))
            continue
        if event is None and not exited:
            path.append((t, WalkState(r, v, logw, True)))
            break
        path.append((t, WalkState(r, v, logw, False)))
        break
    return path


def many_to_one_values(mm: MaterialModel, g, r, v, times, trials, rng, threads: int = 1):
    """Per-trial many-to-one contributions exp(log_weight) g(R, Y) 1{alive}.

    Returns a trials x len(times) list of lists, all times served by the
    same walks (useful for growth-rate readouts across correlated windows).
    """
    spec = WalkSpec.many_to_one(mm)
    times = [float(t) for t in times]
    if times != sorted(times):
        raise ValueError("times must be sorted ascending")
    root = seed_root(rng)
    r = tuple(r)
    v = tuple(v)

    def one(i):
        snaps = walk_snapshots(spec, r, v, times, trial_rng(root, i))
        return [math.exp(s.log_weight) * g(s.r, s.v) if s.alive else 0.0 for s in snaps]

    return map_trials(one, trials, threads)


def many_to_one_estimate(
    mm: MaterialModel, g, r, v, t, trials, rng, threads: int = 1
) -> EstimateWithError:
    """Feynman-Kac single-walk estimate of the expected population functional."""
    if t == 0.0:
        return summarize_values([g(tuple(r), tuple(v))] * 1)
    rows = many_to_one_values(mm, g, r, v, [t], trials, rng, threads=threads)
    return summarize_values([row[0] for row in rows])


def killed_walk_survival(
    mm: MaterialModel, r, v, t, trials, rng, threads: int = 1
) -> EstimateWithError:
    """P(t < kill) for the walk killed at rate beta_bar - beta and the boundary."""
    spec = WalkSpec.killed(mm)
    root = seed_root(rng)
    r = tuple(r)
    v = tuple(v)
    times = [float(t)]

    def one(i):
        snaps = walk_snapshots(spec, r, v, times, trial_rng(root, i))
        return 1.0 if snaps[0].alive else 0.0

    return summarize_values(map_trials(one, trials, threads))
