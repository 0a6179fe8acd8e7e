"""Monte Carlo engine: exact-increment samplers and event estimators.

Diffusions are simulated through their *free* coordinate (a Brownian motion
with optional drift); reflection, wrapping onto the circle and killing are
applied on top.  Barrier crossings between grid points are detected with the
Brownian-bridge probability ``exp(-2 (b - x)(b - y) / dt)``.  Crossings are
drawn by comparing the accumulated bridge hazard of each path with a single
``Exp(1)`` threshold, which has the same law as one Bernoulli draw per step.

Randomness is organized in fixed-size chunks of paths.  Chunk ``k`` of a
stream draws from ``default_rng([seed, *stream, k])`` so results do not depend
on how chunks are spread across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import (
    CEMETERY,
    Circle,
    DomainError,
    EstimateWithCI,
    FiniteStateSet,
    ForkSpace,
    Interval,
    IntegerSet,
    ObservationMap,
    Piece,
    Product,
    RealLine,
    RealSet,
    StateSet,
    Trajectory,
    is_cemetery,
    wrap_angle,
)

CHUNK_ELEMENTS = 1 << 22
BLOCK_STEPS = 256
HAZARD_CUTOFF = 40.0

# ---------------------------------------------------------------------------
# Process kinds


@dataclass(frozen=True)
class DeterministicDrift:
    a: float


@dataclass(frozen=True)
class BrownianMotion:
    pass


@dataclass(frozen=True)
class DriftedBM:
    a: float


@dataclass(frozen=True)
class AbsorbedBM:
    """Standard Brownian motion killed on leaving ``(lo, hi)``."""

    lo: float = 0.0
    hi: float = math.inf


@dataclass(frozen=True)
class ReflectedBM:
    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class CircleBM:
    radius: float = 1.0 / (2 * math.pi)


@dataclass(frozen=True)
class ForkProcess:
    fork_at: float = 95.0
    end: float = 100.0


@dataclass(frozen=True, eq=False)
class EmbeddedLMP:
    lmp: Any

    def __eq__(self, other):
        return isinstance(other, EmbeddedLMP) and self.lmp == other.lmp

    def __hash__(self):
        return id(self.lmp)


DIFFUSIONS = (BrownianMotion, DriftedBM, AbsorbedBM, ReflectedBM, CircleBM)


def kind_space(kind):
    if isinstance(kind, (DeterministicDrift, BrownianMotion, DriftedBM)):
        return RealLine()
    if isinstance(kind, AbsorbedBM):
        if math.isinf(kind.lo) and math.isinf(kind.hi):
            return RealLine()
        return Interval(kind.lo, kind.hi, "absorbing")
    if isinstance(kind, ReflectedBM):
        return Interval(kind.lo, kind.hi, "reflecting")
    if isinstance(kind, CircleBM):
        return Circle(kind.radius)
    if isinstance(kind, ForkProcess):
        return ForkSpace(kind.fork_at, kind.end)
    if isinstance(kind, EmbeddedLMP):
        return Product(kind.lmp.n)
    raise TypeError(f"unknown process kind {kind!r}")


@dataclass(frozen=True)
class ProcessModel:
    kind: Any
    obs: ObservationMap
    horizon: float = 10.0
    grid_step: float = 1e-3

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if not 0 < self.grid_step <= self.horizon / 100 + 1e-15:
            raise DomainError("grid_step must lie in (0, horizon/100]")

    @property
    def space(self):
        return kind_space(self.kind)

    @property
    def is_deterministic(self) -> bool:
        return isinstance(self.kind, DeterministicDrift)

    @property
    def is_exact(self) -> bool:
        """Processes whose trajectory laws are finite mixtures, evaluated exactly."""
        return isinstance(self.kind, (DeterministicDrift, ForkProcess))

    def window(self) -> tuple[float, float]:
        """Natural window for grids of scalar states."""
        k = self.kind
        if isinstance(k, AbsorbedBM):
            lo = k.lo if math.isfinite(k.lo) else min(-3.0, k.hi - 6.0)
            hi = k.hi if math.isfinite(k.hi) else max(3.0, lo + 3.0)
            return lo, hi
        if isinstance(k, ReflectedBM):
            return k.lo, k.hi
        if isinstance(k, CircleBM):
            return -math.pi, math.pi
        return -3.0, 3.0

    def with_(self, **changes) -> "ProcessModel":
        from dataclasses import replace

        return replace(self, **changes)


def check_state(m: ProcessModel, x0):
    space = m.space
    if isinstance(space, (RealLine, Interval, Circle)) and isinstance(x0, (int, np.integer)):
        x0 = float(x0)
    if not space.contains(x0):
        raise DomainError(f"state {x0!r} outside {space}")
    return x0


# ---------------------------------------------------------------------------
# Events


@dataclass(frozen=True)
class HitSetBefore:
    target: StateSet
    t: float


@dataclass(frozen=True)
class ValueAtTimeIn:
    t: float
    target: StateSet


@dataclass(frozen=True)
class DeadAt:
    t: float


@dataclass(frozen=True)
class ObsWordEquals:
    times: tuple[float, ...]
    obs_values: tuple  # tuples of bools, or CEMETERY

    def __post_init__(self):
        if len(self.times) != len(self.obs_values):
            raise DomainError("times and obs_values differ in length")


EventSpec = HitSetBefore | ValueAtTimeIn | DeadAt | ObsWordEquals


def event_times(ev) -> tuple[float, ...]:
    if isinstance(ev, ObsWordEquals):
        return tuple(ev.times)
    return (ev.t,)


def describe_event(ev) -> str:
    if isinstance(ev, HitSetBefore):
        return f"hit({_describe_set(ev.target)}) before t={ev.t:g}"
    if isinstance(ev, ValueAtTimeIn):
        return f"value at t={ev.t:g} in {_describe_set(ev.target)}"
    if isinstance(ev, DeadAt):
        return f"dead at t={ev.t:g}"
    word = ",".join(f"{t:g}:{_describe_obs(v)}" for t, v in zip(ev.times, ev.obs_values))
    return f"obs word [{word}]"


def _describe_obs(v) -> str:
    if v is CEMETERY:
        return "∂"
    return "".join("1" if b else "0" for b in v) or "-"


def _describe_set(s) -> str:
    if isinstance(s, IntegerSet):
        return "Z"
    if isinstance(s, RealSet):
        parts = []
        for p in s.pieces:
            if p.lo == p.hi:
                parts.append(f"{{{p.lo:g}}}")
            else:
                parts.append(f"{'[' if p.lo_closed else '('}{p.lo:g},{p.hi:g}{']' if p.hi_closed else ')'}")
        return "∪".join(parts) or "∅"
    if isinstance(s, FiniteStateSet):
        return "{" + ",".join(map(str, sorted(s.states, key=str))) + "}"
    return repr(s)


def _check_event_times(m: ProcessModel, ev):
    for t in event_times(ev):
        if t < 0 or t > m.horizon:
            raise DomainError(f"event time {t} outside [0, horizon={m.horizon}]")


# ---------------------------------------------------------------------------
# Preimage sets on the free coordinate


@dataclass(frozen=True)
class PeriodicSet(StateSet):
    """``base`` repeated with the given period; ``base`` lives in
    ``[origin, origin + period)``."""

    base: RealSet
    period: float
    origin: float

    def _reduce(self, x):
        x = np.asarray(x, dtype=float)
        u = self.origin + np.mod(x - self.origin, self.period)
        return u, x - u

    def contains(self, states):
        u, _ = self._reduce(states)
        return self.base.contains(u)

    def gap_bounds(self, states):
        u, shift = self._reduce(states)
        pieces = []
        for k in (-1, 0, 1):
            off = k * self.period
            pieces += [Piece(p.lo + off, p.hi + off, p.lo_closed, p.hi_closed) for p in self.base.pieces]
        lo, hi = RealSet(tuple(pieces)).gap_bounds(u)
        return lo + shift, hi + shift


def _scale_set(s: RealSet, c: float, shift: float = 0.0) -> RealSet:
    return RealSet(tuple(Piece(p.lo * c + shift, p.hi * c + shift, p.lo_closed, p.hi_closed) for p in s.pieces))


def _mirror_set(s: RealSet, about: float) -> RealSet:
    return RealSet(tuple(Piece(2 * about - p.hi, 2 * about - p.lo, p.hi_closed, p.lo_closed) for p in s.pieces))


def _free_preimage(kind, target: StateSet) -> StateSet:
    if isinstance(kind, ReflectedBM):
        if not isinstance(target, RealSet):
            raise DomainError("reflected targets must be real sets")
        base = RealSet(target.pieces + _mirror_set(target, kind.hi).pieces)
        return PeriodicSet(base, 2 * (kind.hi - kind.lo), kind.lo)
    if isinstance(kind, CircleBM):
        if not isinstance(target, RealSet):
            raise DomainError("circle targets must be real sets of angles")
        r = kind.radius
        return PeriodicSet(_scale_set(target, r), 2 * math.pi * r, -math.pi * r)
    return target


def _drift(kind) -> float:
    return float(getattr(kind, "a", 0.0)) if isinstance(kind, DriftedBM) else 0.0


def _to_free(kind, x0: float) -> float:
    if isinstance(kind, CircleBM):
        return x0 * kind.radius
    return float(x0)


def _observe(kind, free: np.ndarray) -> np.ndarray:
    if isinstance(kind, ReflectedBM):
        length = kind.hi - kind.lo
        u = np.mod(free - kind.lo, 2 * length)
        return kind.lo + length - np.abs(u - length)
    if isinstance(kind, CircleBM):
        return wrap_angle(free / kind.radius)
    return free


def _kill_set(kind) -> RealSet | None:
    if not isinstance(kind, AbsorbedBM):
        return None
    pieces = []
    if math.isfinite(kind.lo):
        pieces.append(Piece(-math.inf, kind.lo, False, True))
    if math.isfinite(kind.hi):
        pieces.append(Piece(kind.hi, math.inf, True, False))
    return RealSet(tuple(pieces))


# ---------------------------------------------------------------------------
# Bridge hazard


def _single_point(target: StateSet) -> float | None:
    if isinstance(target, RealSet) and len(target.pieces) == 1:
        p = target.pieces[0]
        if p.lo == p.hi:
            return p.lo
    return None


def _crossing_terms(x0: np.ndarray, x1: np.ndarray, dt: np.ndarray, target: StateSet):
    """Steps certainly crossing ``target`` and the sparse bridge hazard of the
    remaining steps that pass close to a wall.

    Returns ``(certain, rows, cols, hazard)``; steps not listed carry hazard
    below ``exp(-HAZARD_CUTOFF)`` and are treated as crossing-free.  The two
    walls of a gap are treated as independent, which is exact for a one-sided
    gap.
    """
    limit = 0.5 * HAZARD_CUTOFF * dt
    b = _single_point(target)
    if b is not None:
        y0 = x0 - b
        y1 = x1 - b
        prod = y0 * y1
        certain = prod <= 0
        rows, cols = np.nonzero(prod < limit)
        keep = ~certain[rows, cols]
        rows, cols = rows[keep], cols[keep]
        q = 2.0 * prod[rows, cols] / dt[cols]
        return certain, rows, cols, -np.log1p(-np.exp(-q))
    lo, hi = target.gap_bounds(x0)
    certain = (x1 <= lo) | (x1 >= hi)
    with np.errstate(invalid="ignore"):
        up = (hi - x0) * (hi - x1)
        down = (x0 - lo) * (x1 - lo)
    rows, cols = np.nonzero((up < limit) | (down < limit))
    keep = ~certain[rows, cols]
    rows, cols = rows[keep], cols[keep]
    h = np.zeros(rows.size)
    for prod in (up[rows, cols], down[rows, cols]):
        q = 2.0 * prod / dt[cols]
        near = q < HAZARD_CUTOFF
        h[near] -= np.log1p(-np.exp(-q[near]))
    return certain, rows, cols, h


def _first_crossing(x0, x1, dt, target, thresh, carried):
    """Per row: first step whose cumulative hazard (plus ``carried``) exceeds
    ``thresh`` or that certainly crosses; ``x0.shape[1]`` if none.  Also
    returns the updated carried hazard."""
    n_rows, n_cols = x0.shape
    certain, rows, cols, h = _crossing_terms(x0, x1, np.broadcast_to(dt, (n_cols,)), target)
    first = np.where(certain.any(axis=1), np.argmax(certain, axis=1), n_cols)
    total = carried + np.bincount(rows, weights=h, minlength=n_rows)
    if rows.size:
        cs = np.cumsum(h)
        starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
        base = np.repeat(cs[starts] - h[starts], np.diff(np.r_[starts, rows.size]))
        over = (cs - base + carried[rows]) > thresh[rows]
        if over.any():
            r_over, c_over = rows[over], cols[over]
            uniq, idx = np.unique(r_over, return_index=True)
            first[uniq] = np.minimum(first[uniq], c_over[idx])
    return first, total


# ---------------------------------------------------------------------------
# Time grids


def _time_grid(m: ProcessModel, extra: Sequence[float], t_end: float, fine: bool) -> np.ndarray:
    pts = [0.0, *extra]
    if fine:
        n = int(math.ceil(t_end / m.grid_step - 1e-9))
        grid = np.arange(n + 1) * m.grid_step
        grid = grid[grid <= t_end + 1e-12]
        keep = np.ones(grid.size, dtype=bool)
        for t in extra:
            keep &= np.abs(grid - t) > 1e-9 * m.grid_step
        keep[0] = True
        pts = np.concatenate([grid[keep], np.asarray(extra, dtype=float)])
    return np.unique(np.asarray(pts, dtype=float))


def _index_of(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t))
    if i >= times.size or times[i] != t:
        raise AssertionError(f"time {t} missing from grid")
    return i


def _rng(seed: int, stream: Sequence[int], chunk: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, stream), int(chunk)])


# ---------------------------------------------------------------------------
# Diffusion engines


def _diffusion_values(m: ProcessModel, x0: float, times: np.ndarray, n: int, rng) -> np.ndarray:
    """Observed values on ``times`` (NaN after death), shape ``(n, len(times))``."""
    kind = m.kind
    dt = np.diff(times)
    free = np.empty((n, times.size))
    free[:, 0] = _to_free(kind, x0)
    if dt.size:
        inc = rng.standard_normal((n, dt.size))
        inc *= np.sqrt(dt)
        inc += _drift(kind) * dt
        np.cumsum(inc, axis=1, out=free[:, 1:])
        free[:, 1:] += free[:, :1]
    kill = _kill_set(kind)
    values = _observe(kind, free)
    if kill is not None and dt.size:
        step, _ = _first_crossing(free[:, :-1], free[:, 1:], dt, kill, rng.exponential(size=n), np.zeros(n))
        dead = np.arange(times.size)[None, :] > step[:, None]
        values = np.where(dead, np.nan, values)
    return values


def _first_passage(m: ProcessModel, x0: float, t_end: float, n: int, rng, target: StateSet | None):
    """Step indices of the first target crossing and of death, with the grid.

    ``-1`` marks a start inside the target; ``n_steps`` marks no event.
    """
    kind = m.kind
    times = _time_grid(m, [t_end], t_end, fine=True)
    dt_all = np.diff(times)
    n_steps = dt_all.size
    tgt = _free_preimage(kind, target) if target is not None else None
    kill = _kill_set(kind)
    a = _drift(kind)
    pos = np.full(n, _to_free(kind, x0))
    hit = np.full(n, n_steps, dtype=np.int64)
    died = np.full(n, n_steps, dtype=np.int64)
    if tgt is not None and tgt.contains(pos[:1])[0]:
        hit[:] = -1
        return hit, died, times
    e_hit = rng.exponential(size=n)
    e_kill = rng.exponential(size=n)
    h_hit = np.zeros(n)
    h_kill = np.zeros(n)
    active = np.arange(n)
    start = 0
    while active.size and start < n_steps:
        stop = min(start + BLOCK_STEPS, n_steps)
        dt = dt_all[start:stop]
        width = dt.size
        path = np.empty((active.size, width + 1))
        rng.standard_normal(out=path)
        inc = path[:, 1:]
        inc *= np.sqrt(dt)
        if a:
            inc += a * dt
        path[:, 0] = pos[active]
        np.cumsum(path, axis=1, out=path)
        x0, x1 = path[:, :-1], path[:, 1:]
        done = np.zeros(active.size, dtype=bool)
        if tgt is not None:
            j, h_hit[active] = _first_crossing(x0, x1, dt, tgt, e_hit[active], h_hit[active])
            got = j < width
            hit[active[got]] = start + j[got]
            done |= got
        if kill is not None:
            j, h_kill[active] = _first_crossing(x0, x1, dt, kill, e_kill[active], h_kill[active])
            got = j < width
            died[active[got]] = start + j[got]
            done |= got
        pos[active] = path[:, -1]
        active = active[~done]
        start = stop
    return hit, died, times


# ---------------------------------------------------------------------------
# Exact processes


def drift_value(kind: DeterministicDrift, x0: float, t):
    return x0 + kind.a * np.asarray(t, dtype=float)


def fork_branches(kind: ForkProcess, state) -> list[tuple[float, Any]]:
    """The finitely many trajectories from ``state``: ``(probability, path)``
    with ``path(times) -> (len(times), 2)`` array."""
    p0, j0 = float(state[0]), int(state[1])
    fork, end = kind.fork_at, kind.end

    def along(branch_before, branch_after, switch_at):
        def path(times):
            t = np.asarray(times, dtype=float)
            pos = np.minimum(p0 + t, end)
            br = np.where(pos > switch_at, branch_after, branch_before).astype(float)
            br = np.where(t == 0, j0, br)
            pos = np.where(t == 0, p0, pos)
            return np.stack([pos, br], axis=-1)

        return path

    if j0 == 1:
        return [(0.5, along(j, j, -math.inf)) for j in (2, 3)]
    if j0 == 4:
        if p0 < fork or p0 == fork:
            return [(0.5, along(4, j, fork)) for j in (5, 6)]
    return [(1.0, along(j0, j0, -math.inf))]


def _exact_indicator_paths(m: ProcessModel, x0) -> list[tuple[float, Any]]:
    if isinstance(m.kind, DeterministicDrift):
        return [(1.0, lambda t: drift_value(m.kind, x0, t))]
    return fork_branches(m.kind, x0)


def _segment_hits(target: StateSet, lo_val: float, hi_val: float, include_lo: bool, include_hi: bool) -> bool:
    """Does the segment between two values meet ``target``?"""
    if isinstance(target, IntegerSet):
        k = math.ceil(lo_val) if include_lo else math.floor(lo_val) + 1
        return k < hi_val or (include_hi and k <= hi_val)
    if isinstance(target, RealSet):
        for p in target.pieces:
            a_ok = p.hi > lo_val or (p.hi == lo_val and p.hi_closed and include_lo)
            b_ok = p.lo < hi_val or (p.lo == hi_val and p.lo_closed and include_hi)
            if a_ok and b_ok:
                return True
        return False
    raise DomainError(f"unsupported target {target!r} for deterministic paths")


def _exact_event(m: ProcessModel, x0, ev) -> float:
    total = 0.0
    for prob, path in _exact_indicator_paths(m, x0):
        total += prob * float(_path_event(m, path, ev))
    return total


def _path_event(m: ProcessModel, path, ev) -> bool:
    if isinstance(ev, DeadAt):
        return False
    if isinstance(ev, ValueAtTimeIn):
        return bool(ev.target.contains(path([ev.t]))[0])
    if isinstance(ev, ObsWordEquals):
        vals = path(list(ev.times))
        codes = m.obs.codes(vals)
        want = [m.obs.encode(v) for v in ev.obs_values]
        return bool(np.array_equal(codes, want))
    if isinstance(ev, HitSetBefore):
        if isinstance(m.kind, DeterministicDrift):
            x0 = float(path([0.0])[0])
            x1 = float(path([ev.t])[0])
            if ev.t == 0:
                return False
            if x1 >= x0:
                return _segment_hits(ev.target, x0, x1, True, False) or (x0 == x1 and bool(ev.target.contains([x0])[0]))
            return _segment_hits(ev.target, x1, x0, False, True)
        # fork: piecewise-linear motion, check on the position breakpoints
        grid = np.unique(np.concatenate([np.linspace(0.0, ev.t, 2001)[:-1], [0.0]]))
        return bool(ev.target.contains(path(grid)).any())
    raise TypeError(f"unknown event {ev!r}")


# ---------------------------------------------------------------------------
# Embedded LMP chain


def _chain(tau: np.ndarray, x0: int, steps: int, n: int, rng) -> np.ndarray:
    """States after 0..steps jumps, ``-1`` once dead."""
    cum = np.cumsum(tau, axis=1)
    k = tau.shape[0]
    out = np.empty((n, steps + 1), dtype=np.int64)
    out[:, 0] = x0
    for i in range(steps):
        cur = out[:, i]
        alive = cur >= 0
        u = rng.random(n)
        nxt = (u[:, None] >= cum[np.where(alive, cur, 0)]).sum(axis=1)
        out[:, i + 1] = np.where(alive & (nxt < k), nxt, -1)
    return out


def _embedded_values(m: ProcessModel, x0, times: np.ndarray, n: int, rng) -> np.ndarray:
    x, s = int(x0[0]), float(x0[1])
    times = np.asarray(times, dtype=float)
    jumps = np.floor(times + s).astype(np.int64)
    chain = _chain(np.asarray(m.kind.lmp.tau, dtype=float), x, int(jumps.max(initial=0)), n, rng)
    xs = chain[:, jumps].astype(float)
    xs[xs < 0] = np.nan
    frac = (times + s) - jumps
    ss = np.broadcast_to(frac, xs.shape).copy()
    ss[np.isnan(xs)] = np.nan
    return np.stack([xs, ss], axis=-1)


# ---------------------------------------------------------------------------
# Public sampling API


def sample_paths(m: ProcessModel, x0, times, n: int, seed: int, stream: Sequence[int] = ()) -> np.ndarray:
    """Values of ``n`` independent trajectories at ``times``.

    Diffusions without killing are sampled exactly at the requested times;
    killed diffusions are stepped on ``m.grid_step`` so the bridge correction
    applies.
    """
    x0 = check_state(m, x0)
    req = np.asarray(sorted(set(float(t) for t in times)), dtype=float)
    order = np.searchsorted(req, np.asarray(times, dtype=float))
    if isinstance(m.kind, DIFFUSIONS):
        fine = _kill_set(m.kind) is not None
        grid = _time_grid(m, list(req), float(req.max(initial=0.0)), fine)
        idx = np.array([_index_of(grid, t) for t in req], dtype=np.int64)
        chunk = max(1, CHUNK_ELEMENTS // grid.size)
        parts = []
        for k, lo in enumerate(range(0, n, chunk)):
            vals = _diffusion_values(m, x0, grid, min(chunk, n - lo), _rng(seed, stream, k))
            parts.append(vals[:, idx])
        return np.concatenate(parts)[:, order]
    if isinstance(m.kind, EmbeddedLMP):
        vals = _embedded_values(m, x0, req, n, _rng(seed, stream, 0))
        return vals[:, order]
    if isinstance(m.kind, DeterministicDrift):
        return np.broadcast_to(drift_value(m.kind, x0, req)[order], (n, len(order))).copy()
    if isinstance(m.kind, ForkProcess):
        rng = _rng(seed, stream, 0)
        branches = fork_branches(m.kind, x0)
        pick = rng.choice(len(branches), size=n, p=[b[0] for b in branches])
        out = np.empty((n, req.size, 2))
        for b, (_, path) in enumerate(branches):
            out[pick == b] = path(req)
        return out[:, order]
    raise TypeError(f"unknown process kind {m.kind!r}")


def sample_trajectory(m: ProcessModel, x0, seed: int) -> Trajectory:
    """One trajectory on the regular grid ``0, grid_step, ..., horizon``."""
    x0 = check_state(m, x0)
    times = _time_grid(m, [m.horizon], m.horizon, fine=True)
    if isinstance(m.kind, DIFFUSIONS):
        values = _diffusion_values(m, x0, times, 1, _rng(seed, (), 0))[0]
    else:
        values = sample_paths(m, x0, times, 1, seed)[0]
    return Trajectory(times, values, m.grid_step, m.horizon)


# ---------------------------------------------------------------------------
# Estimators


def _chunk_moments(values: np.ndarray) -> tuple[float, float, int]:
    v = np.asarray(values, dtype=float)
    return float(v.sum()), float((v * v).sum()), int(v.size)


def _run_chunks(job, n: int, chunk: int, workers: int):
    bounds = [(k, lo, min(chunk, n - lo)) for k, lo in enumerate(range(0, n, chunk))]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: job(*b), bounds))
    else:
        results = [job(*b) for b in bounds]
    total = sum(r[0] for r in results)
    total_sq = sum(r[1] for r in results)
    return total, total_sq


def _event_values(m: ProcessModel, x0, ev, size: int, rng) -> np.ndarray:
    """Indicator of ``ev`` for ``size`` fresh trajectories."""
    kind = m.kind
    if isinstance(kind, DIFFUSIONS):
        if isinstance(ev, HitSetBefore):
            hit, died, times = _first_passage(m, x0, ev.t, size, rng, ev.target)
            return (hit < times.size - 1) & (hit <= died)
        if isinstance(ev, DeadAt):
            _, died, times = _first_passage(m, x0, ev.t, size, rng, None)
            return died < times.size - 1
        fine = _kill_set(kind) is not None
        ts = list(event_times(ev))
        grid = _time_grid(m, ts, max(ts), fine)
        vals = _diffusion_values(m, x0, grid, size, rng)
        return _array_event(m, grid, vals, ev)
    if isinstance(kind, EmbeddedLMP):
        ts = list(event_times(ev))
        if isinstance(ev, HitSetBefore):
            raise DomainError("hitting events are not supported for embedded LMPs")
        vals = _embedded_values(m, x0, np.asarray(ts), size, rng)
        return _array_event(m, np.asarray(ts), vals, ev)
    raise TypeError(f"unknown process kind {kind!r}")


def _n_steps(m: ProcessModel, t: float) -> int:
    return _time_grid(m, [t], t, fine=True).size - 1


def _array_event(m: ProcessModel, grid: np.ndarray, vals: np.ndarray, ev) -> np.ndarray:
    if isinstance(ev, ValueAtTimeIn):
        v = vals[:, _index_of(grid, ev.t)]
        dead = np.isnan(v) if v.ndim == 1 else np.isnan(v[..., 0])
        return ev.target.contains(v) & ~dead
    if isinstance(ev, DeadAt):
        v = vals[:, _index_of(grid, ev.t)]
        return np.isnan(v) if v.ndim == 1 else np.isnan(v[..., 0])
    if isinstance(ev, ObsWordEquals):
        idx = [_index_of(grid, t) for t in ev.times]
        codes = m.obs.codes(vals[:, idx])
        want = np.array([m.obs.encode(v) for v in ev.obs_values])
        return np.all(codes == want, axis=1)
    raise TypeError(f"unsupported event {ev!r}")


def estimate_event(
    m: ProcessModel, x0, ev, n: int, seed: int, *, stream: Sequence[int] = (), workers: int = 1
) -> EstimateWithCI:
    """Frequency estimate of ``P^{x0}(ev)``; exact for deterministic and fork models."""
    if n < 100:
        raise DomainError("n must be at least 100")
    x0 = check_state(m, x0)
    _check_event_times(m, ev)
    if m.is_exact:
        return EstimateWithCI(_exact_event(m, x0, ev), 0.0, n, seed)
    if isinstance(ev, DeadAt) and _kill_set(m.kind) is None and isinstance(m.kind, DIFFUSIONS):
        return EstimateWithCI(0.0, 0.0, n, seed)
    ts = event_times(ev)
    per_path = max(2, _n_steps(m, max(ts))) if isinstance(m.kind, DIFFUSIONS) else len(ts) + 1
    chunk = max(1, CHUNK_ELEMENTS // per_path)

    def job(k, lo, size):
        return _chunk_moments(_event_values(m, x0, ev, size, _rng(seed, stream, k)))

    total, total_sq = _run_chunks(job, n, chunk, workers)
    return EstimateWithCI.from_moments(total, total_sq, n, seed)


def estimate_hitting_laplace(
    m: ProcessModel,
    x0,
    target: StateSet,
    lam: float,
    n: int,
    seed: int,
    *,
    t_max: float | None = None,
    stream: Sequence[int] = (),
    workers: int = 1,
) -> EstimateWithCI:
    """Estimate ``E^{x0}[exp(-lam T); T < death]`` for the first hitting time
    ``T`` of ``target``, truncated at ``t_max`` (default: the horizon).

    A crossing detected inside step ``[t_i, t_{i+1}]`` is timed at the step
    midpoint.
    """
    if n < 100:
        raise DomainError("n must be at least 100")
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    if not isinstance(m.kind, DIFFUSIONS):
        raise DomainError("Laplace estimates need a diffusion model")
    x0 = check_state(m, x0)
    t_end = m.horizon if t_max is None else float(t_max)
    chunk = max(1, CHUNK_ELEMENTS // max(2, BLOCK_STEPS))

    def job(k, lo, size):
        hit, died, times = _first_passage(m, x0, t_end, size, _rng(seed, stream, k), target)
        n_steps = times.size - 1
        ok = (hit < n_steps) & (hit <= died)
        mid = np.where(hit < 0, 0.0, 0.5 * (times[np.clip(hit, 0, n_steps - 1)] + times[np.clip(hit, 0, n_steps - 1) + 1]))
        return _chunk_moments(np.where(ok, np.exp(-lam * mid), 0.0))

    total, total_sq = _run_chunks(job, n, chunk, workers)
    return EstimateWithCI.from_moments(total, total_sq, n, seed)


# ---------------------------------------------------------------------------
# Distinguishing two states


@dataclass(frozen=True)
class Distinguished:
    event: Any
    gap: float
    z_score: float
    estimate_x: EstimateWithCI
    estimate_y: EstimateWithCI


@dataclass(frozen=True)
class Indistinguishable:
    max_z: float
    n_events: int


def distinguish(
    m: ProcessModel,
    x,
    y,
    events: Sequence,
    n: int,
    seed: int,
    *,
    z_crit: float = 4.0,
    workers: int = 1,
):
    """Two-sample z-tests on each event with independent streams for ``x`` and
    ``y``.  Returns the event with the largest ``|z|`` when it exceeds ``z_crit``."""
    if not events:
        raise DomainError("need at least one event")
    best = None
    max_z = 0.0
    for i, ev in enumerate(events):
        ex = estimate_event(m, x, ev, n, seed, stream=(1, i), workers=workers)
        ey = estimate_event(m, y, ev, n, seed, stream=(2, i), workers=workers)
        z = ex.z_against(ey)
        if abs(z) > max_z or best is None:
            if abs(z) >= max_z:
                max_z = abs(z)
                best = (ev, ex, ey, z)
    ev, ex, ey, z = best
    if max_z > z_crit:
        return Distinguished(ev, ex.mean - ey.mean, z, ex, ey)
    return Indistinguishable(max_z, len(events))


# ---------------------------------------------------------------------------
# Event families


def obs_level_sets(obs: ObservationMap) -> list[StateSet]:
    """Real state sets on which the observation is constant and distinguished."""
    from .core import IntegerObs, IntervalObs, PointObs

    if isinstance(obs, PointObs):
        return [RealSet.points(*obs.points)]
    if isinstance(obs, IntegerObs):
        return [IntegerSet()]
    if isinstance(obs, IntervalObs):
        inside = RealSet.interval(obs.lo, obs.hi)
        return [inside, inside.complement()]
    return []


def bt_family(m: ProcessModel, t_grid: Sequence[float] = (0.25, 0.5, 1.0, 2.0)) -> list:
    """``B_t = {some s < t has an observation outside the starting one}``-style
    hitting events for each distinguished observation level set, plus death."""
    events = []
    for s in obs_level_sets(m.obs):
        events += [HitSetBefore(s, t) for t in t_grid if t <= m.horizon]
    if _kill_set(m.kind) is not None:
        events += [DeadAt(t) for t in t_grid if t <= m.horizon]
    return events


def word_family(m: ProcessModel, times: Sequence[float] = (0.5, 1.0, 2.0)) -> list:
    """Single-letter observation words at each time for every observation value."""
    k = len(m.obs.ap_names)
    values = [tuple(bool(c >> i & 1) for i in range(k)) for c in range(1 << k)]
    if _kill_set(m.kind) is not None or isinstance(m.kind, EmbeddedLMP):
        values.append(CEMETERY)
    return [ObsWordEquals((t,), (v,)) for t in times if t <= m.horizon for v in values]


# ---------------------------------------------------------------------------
# Two-sample comparison of finite-dimensional marginals


def _bin_codes(a: np.ndarray, b: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Pooled-quantile bin index per sample; the cemetery (NaN) gets its own
    code.  Returns both code arrays and the code count."""
    pooled = np.concatenate([a, b])
    live = pooled[~np.isnan(pooled)]
    if live.size:
        edges = np.unique(np.quantile(live, np.linspace(0, 1, bins + 1)[1:-1]))
    else:
        edges = np.empty(0)
    k = edges.size + 1

    def code(v):
        c = np.searchsorted(edges, v, side="right")
        return np.where(np.isnan(v), k, c)

    return code(a), code(b), k + 1


def chi2_two_sample_z(codes_a: np.ndarray, codes_b: np.ndarray, n_codes: int) -> float:
    """Chi-squared homogeneity test on categorical samples, reported as the
    equivalent two-sided normal deviate (``z = 4`` at ``p ~ 6.3e-5``)."""
    from scipy.stats import chi2, norm

    ca = np.bincount(codes_a, minlength=n_codes).astype(float)
    cb = np.bincount(codes_b, minlength=n_codes).astype(float)
    na, nb = ca.sum(), cb.sum()
    used = (ca + cb) > 0
    ca, cb = ca[used], cb[used]
    dof = ca.size - 1
    if dof < 1:
        return 0.0
    stat = float(np.sum((ca * math.sqrt(nb / na) - cb * math.sqrt(na / nb)) ** 2 / (ca + cb)))
    p = float(chi2.sf(stat, dof))
    if p <= 0.0:
        return math.inf
    return float(norm.isf(p / 2))


@dataclass(frozen=True)
class MarginalComparison:
    label: str
    z: float


def compare_marginals(
    a: np.ndarray, b: np.ndarray, times: Sequence[float], bins: int = 20, joint_bins: tuple[int, int] = (5, 4)
) -> list[MarginalComparison]:
    """Chi-squared comparisons of scalar path samples ``a`` and ``b`` (rows are
    paths, columns follow ``times``): every one-time marginal on ``bins``
    quantile bins and each consecutive two-time joint on a
    ``joint_bins[0] x joint_bins[1]`` grid."""
    out = []
    for j, t in enumerate(times):
        ca, cb, k = _bin_codes(a[:, j], b[:, j], bins)
        out.append(MarginalComparison(f"t={t:g}", chi2_two_sample_z(ca, cb, k)))
    for j in range(len(times) - 1):
        c1a, c1b, k1 = _bin_codes(a[:, j], b[:, j], joint_bins[0])
        c2a, c2b, k2 = _bin_codes(a[:, j + 1], b[:, j + 1], joint_bins[1])
        z = chi2_two_sample_z(c1a * k2 + c2a, c1b * k2 + c2b, k1 * k2)
        out.append(MarginalComparison(f"t=({times[j]:g},{times[j + 1]:g})", z))
    return out
