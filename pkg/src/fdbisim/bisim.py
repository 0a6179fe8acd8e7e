"""Continuous-time bisimulation checks.

Soundness comes from symmetry certificates.  A relation generated by
measure-preserving state maps that commute with the observations satisfies
both bisimulation conditions by a change of variables.  Maximality is
refuted or supported pair by pair, by finding an observation-closed event
(hitting laws, Laplace transforms, exact events of deterministic paths or
Monte Carlo estimates) on which two states disagree.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import analytic
from .core import (
    REL_TOL,
    DomainError,
    FinitePartition,
    FiniteStateSet,
    ForkSpace,
    Generator,
    IntegerObs,
    IntegerSet,
    IntervalObs,
    NoObs,
    PointObs,
    RealSet,
    StateSet,
    SymmetryGroup,
    relation_related,
)
from .embed import PreconditionError, join_partitions
from .mc import (
    AbsorbedBM,
    BrownianMotion,
    DeterministicDrift,
    DriftedBM,
    ForkProcess,
    ObsWordEquals,
    ProcessModel,
    ValueAtTimeIn,
    bt_family,
    compare_marginals,
    describe_event,
    distinguish,
    drift_value,
    estimate_event,
    fork_branches,
    sample_paths,
    word_family,
    Distinguished,
)

Z_CRIT = 4.0
SEP_TOL = 1e-9
LAMBDAS = (0.5, 1.0, 2.0, 4.0)
TIMES = (0.5, 1.0, 2.0, 4.0)


class UnsupportedWitnessError(DomainError):
    pass


@dataclass(frozen=True)
class CheckRecord:
    subject: str
    passed: bool
    detail: str = ""
    z: float | None = None


@dataclass
class Report:
    check: str
    passed: bool
    records: list[CheckRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def failures(self) -> list[CheckRecord]:
        return [r for r in self.records if not r.passed]

    def to_dict(self, max_records: int = 20) -> dict:
        recs = sorted(self.records, key=lambda r: (r.passed, r.subject))
        return {
            "check": self.check,
            "passed": self.passed,
            "summary": self.summary,
            "records": [
                {"subject": r.subject, "passed": r.passed, "detail": r.detail, **({"z": _json_float(r.z)} if r.z is not None else {})}
                for r in recs[:max_records]
            ],
            "n_records": len(self.records),
        }


def _json_float(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return float(f"{v:.12g}")


@dataclass
class BisimClaim:
    """A model (or two, combined as a disjoint union by the caller), a
    candidate relation and the evidence gathered for it."""

    models: tuple
    witness: Any
    evidence: list[Report] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.evidence)


# ---------------------------------------------------------------------------
# State sampling


def _fmt(x) -> str:
    if isinstance(x, tuple):
        return "(" + ",".join(_fmt(v) for v in x) + ")"
    return f"{float(x):.6g}"


def special_points(m: ProcessModel) -> list[float]:
    lo, hi = m.window()
    obs = m.obs
    pts: list[float] = []
    if isinstance(obs, PointObs):
        pts += list(obs.points)
    elif isinstance(obs, IntegerObs):
        pts += [float(k) for k in range(math.ceil(lo), math.floor(hi) + 1)]
    elif isinstance(obs, IntervalObs):
        pts += [obs.lo, obs.hi]
    return [p for p in pts if m.space.contains(float(p))]


def sample_states(m: ProcessModel, rng: np.random.Generator, k: int) -> np.ndarray:
    lo, hi = m.window()
    xs = rng.uniform(lo, hi, k)
    ok = np.array([m.space.contains(float(x)) for x in xs])
    return xs[ok]


def grid_states(m: ProcessModel, size: int, offset: float) -> np.ndarray:
    """``size`` interior points of the model window, shifted by ``offset``
    cells so that two grids never share points."""
    lo, hi = m.window()
    step = (hi - lo) / size
    xs = lo + (np.arange(size) + offset) * step
    return np.array([x for x in xs if m.space.contains(float(x))])


def _word(gens: Sequence[Generator], rng: np.random.Generator, length: int) -> list[Generator]:
    return [gens[int(rng.integers(len(gens)))] for _ in range(length)]


def related_pairs(m: ProcessModel, w: SymmetryGroup, n_pairs: int, seed: int) -> list[tuple[float, float]]:
    """Pairs related by ``w``: generator images of random states, plus pairs of
    random and special states filtered by the relation."""
    rng = np.random.default_rng([seed, 7])
    pairs: list[tuple[float, float]] = []
    starts = list(sample_states(m, rng, n_pairs)) + special_points(m)
    if w.generators:
        for x in starts:
            y = float(x)
            for g in _word(w.generators, rng, int(rng.integers(1, 4))):
                y = float(g(np.asarray(y)))
            if m.space.contains(y):
                pairs.append((float(x), y))
        # every single-generator image of a special point, so violations at
        # observed points are never left to chance
        for p in special_points(m):
            for g in w.generators:
                y = float(g(np.asarray(float(p))))
                if m.space.contains(y):
                    pairs.append((float(p), y))
    pool = starts + list(sample_states(m, rng, n_pairs))
    for x, y in itertools.combinations(pool, 2):
        if relation_related(w, float(x), float(y)):
            pairs.append((float(x), float(y)))
        if len(pairs) >= 2 * n_pairs:
            break
    return pairs


# ---------------------------------------------------------------------------
# (initiation 1)


def check_initiation1(m, w, samples: int = 200, seed: int = 0) -> Report:
    """Related states must carry the same observation."""
    from .lmp import FiniteLMP

    records: list[CheckRecord] = []
    if isinstance(w, FinitePartition):
        if not isinstance(m, FiniteLMP):
            raise UnsupportedWitnessError("partition witnesses need a finite LMP")
        for blk in w.blocks:
            keys = {m.label_key(x) for x in blk}
            records.append(CheckRecord(f"block {sorted(blk)}", len(keys) == 1, "" if len(keys) == 1 else f"labels {sorted(keys)}"))
        return Report("initiation1", all(r.passed for r in records), records, {"pairs": len(records)})
    if not isinstance(w, SymmetryGroup):
        raise UnsupportedWitnessError(f"unsupported witness {type(w).__name__}")
    pairs = related_pairs(m, w, samples, seed)
    for x, y in pairs:
        if not relation_related(w, x, y):
            records.append(CheckRecord(f"{_fmt(x)}~{_fmt(y)}", False, "generator image not related by the invariant"))
            continue
        ox, oy = m.obs(x), m.obs(y)
        records.append(CheckRecord(f"{_fmt(x)}~{_fmt(y)}", ox == oy, "" if ox == oy else f"obs {ox} vs {oy}"))
    return Report("initiation1", all(r.passed for r in records), records, {"pairs": len(pairs)})


# ---------------------------------------------------------------------------
# (induction 2) via symmetry certificates


def _certificate_states(m: ProcessModel, states) -> list[float]:
    if states is not None:
        return [float(s) for s in states]
    lo, hi = m.window()
    return [float(x) for x in (lo + (hi - lo) * np.array([0.23, 0.61, 0.87])) if m.space.contains(float(x))]


def check_induction2_symmetry(
    m: ProcessModel,
    w,
    *,
    n: int = 100_000,
    seed: int = 0,
    times: Sequence[float] = (0.25, 0.5, 1.0),
    states: Sequence[float] | None = None,
    z_crit: float = Z_CRIT,
) -> Report:
    """Certify (induction 2) for the relation generated by ``w``.

    Each generator ``g`` must commute with the observations, preserve the
    invariant and map the law from ``x`` onto the law from ``g(x)``.  For a
    deterministic drift this is checked pathwise: the paths from ``x`` and
    ``g(x)`` stay related at all times.  Diffusions are checked by
    chi-squared comparison of one- and two-time marginals of ``g`` applied
    to paths from ``x`` against paths from ``g(x)``.
    """
    if not isinstance(w, SymmetryGroup):
        raise UnsupportedWitnessError("symmetry certificates need a SymmetryGroup witness")
    if isinstance(m.kind, ForkProcess):
        raise UnsupportedWitnessError("fork relations are checked with exact events, not symmetries")
    if not w.generators:
        return Report("induction2", True, [CheckRecord("identity", True, "no generators: equality relation")],
                      {"certificate": "equality"})
    records: list[CheckRecord] = []
    xs = _certificate_states(m, states)
    lo, hi = m.window()
    grid = np.linspace(lo, hi, 401)
    grid = grid[[m.space.contains(float(x)) for x in grid]]
    for g in w.generators:
        img = g(grid)
        inside = np.array([m.space.contains(float(v)) for v in img])
        obs_ok = np.array_equal(m.obs.codes(grid[inside]), m.obs.codes(img[inside]))
        inv_ok = bool(np.all(np.abs(w.features(grid[inside]) - w.features(img[inside])) <= REL_TOL * np.maximum(1, np.abs(w.features(grid[inside])))))
        records.append(CheckRecord(f"{g.name}: obs", obs_ok, "" if obs_ok else "generator changes observations"))
        records.append(CheckRecord(f"{g.name}: invariant", inv_ok, "" if inv_ok else "generator changes the invariant"))
    if isinstance(m.kind, DeterministicDrift):
        t_grid = np.linspace(0.0, m.horizon, 201)
        for g in w.generators:
            for x in xs:
                y = float(g(np.asarray(x)))
                if not m.space.contains(y):
                    continue
                px = drift_value(m.kind, x, t_grid)
                py = drift_value(m.kind, y, t_grid)
                fx, fy = w.features(px), w.features(py)
                ok = bool(np.all(np.abs(fx - fy) <= 1e-9)) and np.array_equal(m.obs.codes(px), m.obs.codes(py))
                records.append(CheckRecord(f"{g.name} x={_fmt(x)}", ok, "paths stay related" if ok else "paths separate"))
        return Report("induction2", all(r.passed for r in records), records, {"certificate": "pathwise"})
    max_z = 0.0
    for gi, g in enumerate(w.generators):
        for xi, x in enumerate(xs):
            y = float(g(np.asarray(x)))
            if not m.space.contains(y):
                records.append(CheckRecord(f"{g.name} x={_fmt(x)}", True, "image outside the space; skipped"))
                continue
            a = g(sample_paths(m, x, times, n, seed, stream=(3, gi, xi)))
            b = sample_paths(m, y, times, n, seed, stream=(4, gi, xi))
            worst = max(compare_marginals(a, b, list(times)), key=lambda c: c.z)
            max_z = max(max_z, worst.z)
            records.append(CheckRecord(f"{g.name} x={_fmt(x)}", worst.z <= z_crit, f"worst marginal {worst.label}", worst.z))
    return Report("induction2", all(r.passed for r in records), records,
                  {"certificate": "symmetry", "max_z": _json_float(max_z), "z_crit": z_crit, "n": n,
                   "tests": sum(1 for r in records if r.z is not None)})


# ---------------------------------------------------------------------------
# Separating states


@dataclass(frozen=True)
class Separation:
    x: Any
    y: Any
    separated: bool
    method: str
    gap: float
    detail: str = ""


def _frac(z: float) -> float:
    return z - math.floor(z)


def _stat_vector(m: ProcessModel, z: float):
    """Closed-form distinguishing statistics of ``z`` or ``None``."""
    kind, obs = m.kind, m.obs
    if isinstance(kind, BrownianMotion):
        if isinstance(obs, PointObs) and len(obs.points) == 1:
            p = obs.points[0]
            return "hit-cdf", [analytic.bm_hit_zero_cdf(z - p, t) for t in TIMES]
        if isinstance(obs, IntegerObs):
            f = _frac(z)
            return "two-barrier-laplace", [analytic.bm_two_barrier_laplace(f, lam) for lam in LAMBDAS]
        if isinstance(obs, IntervalObs):
            lo, hi = obs.lo, obs.hi
            if lo < z < hi:
                w = hi - lo
                return "exit-laplace", [analytic.bm_two_barrier_laplace((z - lo) / w, lam * w * w) for lam in LAMBDAS]
            if z in (lo, hi):
                return "exit-laplace", [1.0] * len(LAMBDAS)
            d = lo - z if z < lo else z - hi
            return "entry-cdf", [analytic.bm_hit_zero_cdf(d, t) for t in TIMES]
    if isinstance(kind, DriftedBM):
        a = kind.a
        if isinstance(obs, PointObs) and len(obs.points) == 1:
            p = obs.points[0]
            return "hit-cdf", [analytic.drifted_bm_hit_zero_cdf(z - p, a, t) for t in TIMES]
        if isinstance(obs, IntervalObs) and (obs.lo, obs.hi) == (-1.0, 1.0) and abs(z) > 1:
            b = 1.0 if z > 1 else -1.0
            return "entry-laplace", [analytic.drifted_bm_one_sided_laplace(z, b, a, lam) for lam in (0.0,) + LAMBDAS]
    if isinstance(kind, AbsorbedBM) and math.isfinite(kind.lo):
        lo, hi = kind.lo, kind.hi
        if math.isinf(hi):
            return "death-cdf", [analytic.absorbed_bm_death_cdf(z - lo, t) for t in TIMES]
        stats = [analytic.absorbed_two_wall_laplace(z - lo, hi - lo, lam) for lam in LAMBDAS]
        if isinstance(obs, PointObs) and len(obs.points) == 1 and lo < obs.points[0] < hi:
            b = obs.points[0]
            stats += [analytic.absorbed_bm_reach_b_laplace(z - lo, b - lo, hi - lo, lam) for lam in LAMBDAS]
            return "death-and-mark-laplace", stats
        if isinstance(obs, NoObs):
            return "death-laplace", stats
    return None


def _occupation(kind, obs: IntervalObs, z: float) -> list[float]:
    """``P^z(X_t in [lo, hi])`` for Brownian motion with drift."""
    a = kind.a if isinstance(kind, DriftedBM) else 0.0
    return [analytic.gaussian_kernel(z + a * t, (obs.lo, obs.hi), t) for t in TIMES]


def closed_form_separator(m: ProcessModel, x: float, y: float) -> Separation | None:
    """Separate ``x`` and ``y`` with a closed-form law; ``None`` when no closed
    form covers the model."""
    kind, obs = m.kind, m.obs
    if isinstance(kind, DriftedBM) and isinstance(obs, IntegerObs):
        fx, fy = _frac(x), _frac(y)
        same = analytic.g_injectivity_check(fx, fy, kind.a)
        return Separation(x, y, not same, "g-injectivity", abs(fx - fy))
    if isinstance(kind, DriftedBM) and isinstance(obs, IntervalObs) and (obs.lo, obs.hi) == (-1.0, 1.0):
        if abs(x) <= 1 and abs(y) <= 1:
            if not analytic.h_injectivity_check(x, y, kind.a):
                return Separation(x, y, True, "h-injectivity", abs(x - y))
            # Exit laplace transforms coincide (both start on the boundary);
            # fall back to one-time occupation of the interval.
            occ = [_occupation(kind, obs, z) for z in (x, y)]
            gap = float(np.max(np.abs(np.subtract(*occ))))
            return Separation(x, y, gap > SEP_TOL, "occupation", gap)
    sx, sy = _stat_vector(m, x), _stat_vector(m, y)
    if sx is None or sy is None or sx[0] != sy[0]:
        return None
    gap = float(np.max(np.abs(np.subtract(sx[1], sy[1]))))
    return Separation(x, y, gap > SEP_TOL, sx[0], gap)


def _drift_hit_times(m: ProcessModel, z: float) -> list[float]:
    """Times at which the deterministic path from ``z`` shows a distinguished
    observation, within the horizon."""
    a = m.kind.a
    obs = m.obs
    if a == 0:
        return [0.0]
    out = []
    if isinstance(obs, PointObs):
        out += [(p - z) / a for p in obs.points]
    elif isinstance(obs, IntegerObs):
        nxt = math.ceil(z) if a > 0 else math.floor(z)
        out += [(nxt - z) / a, (nxt - z) / a + 1 / abs(a)]
    elif isinstance(obs, IntervalObs):
        out += [(obs.lo - z) / a, (obs.hi - z) / a]
    return [t for t in out if 0 <= t <= m.horizon]


def _fork_events(m: ProcessModel, x, y) -> list:
    """Every observation value at the moment either start reaches the end of
    its branch, the only times the fork's observations can change."""
    k = len(m.obs.ap_names)
    values = [tuple(bool(c >> i & 1) for i in range(k)) for c in range(1 << k)]
    times = sorted({m.kind.end - float(z[0]) for z in (x, y)})
    return [ObsWordEquals((t,), (v,)) for t in times if 0 <= t <= m.horizon for v in values]


def exact_separator(m: ProcessModel, x, y) -> Separation | None:
    """Exact processes: single-time observation events at the moments either
    path meets a distinguished observation."""
    if isinstance(m.kind, ForkProcess):
        events = _fork_events(m, x, y)
    elif isinstance(m.kind, DeterministicDrift):
        events = []
        for z in (x, y):
            for t in _drift_hit_times(m, z):
                val = m.obs(float(drift_value(m.kind, z, t)))
                events.append(ObsWordEquals((t,), (val,)))
    else:
        return None
    for ev in events:
        px = estimate_event(m, x, ev, 100, 0).mean
        py = estimate_event(m, y, ev, 100, 0).mean
        if px != py:
            return Separation(x, y, True, "exact-event", abs(px - py), describe_event(ev))
    return Separation(x, y, False, "exact-event", 0.0)


def mc_events(m: ProcessModel, family: str) -> list:
    if family == "bt":
        return bt_family(m)
    if family == "word":
        return word_family(m)
    if family == "auto":
        return bt_family(m) + word_family(m)
    raise DomainError(f"unknown event family {family!r}")


def mc_separator(m: ProcessModel, x, y, family: str, n: int, seed: int, z_crit: float) -> Separation:
    events = mc_events(m, family)
    if not events:
        return Separation(x, y, False, f"mc-{family}", 0.0, "no events")
    v = distinguish(m, x, y, events, n, seed, z_crit=z_crit)
    if isinstance(v, Distinguished):
        return Separation(x, y, True, f"mc-{family}", abs(v.gap), describe_event(v.event))
    return Separation(x, y, False, f"mc-{family}", 0.0, f"max z {v.max_z:.3g}")


def laplace_separator(m: ProcessModel, x, y, n: int, seed: int, z_crit: float) -> Separation:
    """Monte Carlo Laplace transforms of the first time the observation
    changes, compared with a z-test at several rates."""
    from .mc import estimate_hitting_laplace, obs_level_sets

    best = Separation(x, y, False, "mc-laplace", 0.0)
    for k, target in enumerate(obs_level_sets(m.obs)):
        if target.contains(np.asarray([x]))[0] or target.contains(np.asarray([y]))[0]:
            target = target.complement() if isinstance(target, RealSet) else target
        for lam in (0.5, 2.0):
            ex = estimate_hitting_laplace(m, x, target, lam, n, seed, stream=(5, k))
            ey = estimate_hitting_laplace(m, y, target, lam, n, seed, stream=(6, k))
            z = abs(ex.z_against(ey))
            if z > z_crit:
                return Separation(x, y, True, "mc-laplace", abs(ex.mean - ey.mean), f"lambda={lam:g}")
    return best


def separate(m: ProcessModel, x, y, family: str = "auto", *, n: int = 20_000, seed: int = 0, z_crit: float = Z_CRIT) -> Separation:
    """Try, in order: observations, exact events of deterministic paths, closed
    forms, then Monte Carlo."""
    ox, oy = m.obs(x), m.obs(y)
    if ox != oy:
        return Separation(x, y, True, "obs", 1.0, f"{ox} vs {oy}")
    if family in ("auto", "exact"):
        sep = exact_separator(m, x, y)
        if sep is not None:
            return sep
    if family in ("auto", "closed-form"):
        sep = closed_form_separator(m, x, y)
        if sep is not None:
            return sep
    if m.is_exact and family not in ("bt", "word"):
        return mc_separator(m, x, y, "word", n, seed, z_crit)
    if family == "laplace":
        return laplace_separator(m, x, y, n, seed, z_crit)
    if family in ("exact", "closed-form"):
        return Separation(x, y, False, family, 0.0, "no closed form for this model")
    return mc_separator(m, x, y, family, n, seed, z_crit)


def unrelated_grid(m: ProcessModel, w, size: int = 20) -> list[tuple[float, float]]:
    xs = grid_states(m, size, 0.5)
    ys = grid_states(m, size, 0.5 + 1.0 / 3.0)
    if isinstance(m.obs, IntegerObs):
        # Translated fractions so that nearby integer cells are compared too.
        ys = np.array([v + 0.5 for v in ys if m.space.contains(float(v + 0.5))])
    return [(float(x), float(y)) for x in xs for y in ys if not relation_related(w, float(x), float(y))]


def refute_maximality(
    m: ProcessModel,
    w,
    family: str = "auto",
    *,
    pairs: Sequence[tuple] | None = None,
    grid_size: int = 20,
    n: int = 20_000,
    seed: int = 0,
    z_crit: float = Z_CRIT,
) -> Report:
    """Separate unrelated pairs; full coverage is evidence that no strictly
    larger relation satisfies (initiation 2)."""
    if pairs is None:
        pairs = unrelated_grid(m, w, grid_size)
    records = []
    methods: dict[str, int] = {}
    for i, (x, y) in enumerate(pairs):
        sep = separate(m, x, y, family, n=n, seed=seed + i, z_crit=z_crit)
        methods[sep.method] = methods.get(sep.method, 0) + int(sep.separated)
        records.append(CheckRecord(f"{_fmt(x)} vs {_fmt(y)}", sep.separated, f"{sep.method} gap={sep.gap:.3g} {sep.detail}".strip()))
    separated = sum(r.passed for r in records)
    coverage = separated / len(records) if records else 1.0
    return Report("maximality", coverage >= 0.99, records,
                  {"pairs": len(records), "separated": separated, "coverage": _json_float(coverage),
                   "methods": dict(sorted(methods.items())), "z_crit": z_crit})


def refute_relation(
    m: ProcessModel, w, family: str = "auto", *, pairs: Sequence[tuple] | None = None, samples: int = 100,
    n: int = 20_000, seed: int = 0, z_crit: float = Z_CRIT,
) -> Report:
    """Look for related pairs that an observation-closed event separates; any
    hit shows the relation is not a bisimulation."""
    if pairs is None:
        pairs = [(x, y) for x, y in related_pairs(m, w, samples, seed) if x != y]
    records = []
    for i, (x, y) in enumerate(pairs):
        sep = separate(m, x, y, family, n=n, seed=seed + i, z_crit=z_crit)
        records.append(CheckRecord(f"{_fmt(x)}~{_fmt(y)}", not sep.separated,
                                   f"{sep.method} gap={sep.gap:.3g} {sep.detail}".strip()))
    refuted = sum(not r.passed for r in records)
    return Report("relation", refuted == 0, records, {"pairs": len(records), "separated": refuted})


# ---------------------------------------------------------------------------
# (induction 1)


def _kernel_exact(m: ProcessModel, x, target: StateSet, t: float) -> float | None:
    kind = m.kind
    if isinstance(kind, (BrownianMotion, DriftedBM)) and isinstance(target, RealSet):
        if t == 0:
            return float(target.contains(np.asarray([x]))[0])
        centre = x + (kind.a * t if isinstance(kind, DriftedBM) else 0.0)
        return float(sum(analytic.gaussian_kernel(centre, (p.lo, p.hi), t) for p in target.pieces if p.lo < p.hi))
    if m.is_exact:
        return estimate_event(m, x, ValueAtTimeIn(t, target), 100, 0).mean
    return None


def kernel_mass(m: ProcessModel, x, target: StateSet, t: float, *, n: int = 100_000, seed: int = 0, stream=()):
    """``P_t(x, target)`` as ``(value, std_err)``; the error is 0 for closed forms."""
    v = _kernel_exact(m, x, target, t)
    if v is not None:
        return v, 0.0
    est = estimate_event(m, x, ValueAtTimeIn(t, target), n, seed, stream=stream)
    return est.mean, est.std_err


def check_induction1(
    m: ProcessModel,
    w,
    t_grid: Sequence[float],
    sets: Sequence[StateSet],
    *,
    pairs: Sequence[tuple] | None = None,
    n: int = 100_000,
    seed: int = 0,
    z_crit: float = Z_CRIT,
) -> Report:
    """Equal one-time kernel masses of related states on relation-closed sets."""
    if pairs is None:
        if not isinstance(w, SymmetryGroup):
            raise UnsupportedWitnessError("pairs must be given for this witness")
        pairs = related_pairs(m, w, 50, seed)
    for ci, c in enumerate(sets):
        for x, y in pairs:
            if not relation_related(w, x, y):
                raise PreconditionError(f"pair {_fmt(x)}, {_fmt(y)} is not related")
            if bool(c.contains(np.asarray([x], dtype=float))[0]) != bool(c.contains(np.asarray([y], dtype=float))[0]):
                raise PreconditionError(f"set {ci} is not closed under the relation ({_fmt(x)} vs {_fmt(y)})")
    records = []
    for pi, (x, y) in enumerate(pairs):
        for ci, c in enumerate(sets):
            for ti, t in enumerate(t_grid):
                vx, sx = kernel_mass(m, x, c, t, n=n, seed=seed, stream=(8, pi, ci, ti))
                vy, sy = kernel_mass(m, y, c, t, n=n, seed=seed, stream=(9, pi, ci, ti))
                se = math.hypot(sx, sy)
                if se == 0:
                    ok = abs(vx - vy) <= 1e-12
                    z = None
                else:
                    z = abs(vx - vy) / se
                    ok = z <= z_crit
                records.append(CheckRecord(f"{_fmt(x)}~{_fmt(y)} set{ci} t={t:g}", ok, f"{vx:.6g} vs {vy:.6g}", z))
    return Report("induction1", all(r.passed for r in records), records, {"pairs": len(pairs), "sets": len(sets), "times": len(t_grid)})


# ---------------------------------------------------------------------------
# Relation algebra


def _orbit_key(groups: Sequence[SymmetryGroup], gens: Sequence[Generator], depth: int):
    def key(states):
        arr = np.atleast_1d(np.asarray(states, dtype=float))
        out = []
        for x in arr.reshape(-1):
            seen = {round(float(x), 9): float(x)}
            frontier = [float(x)]
            for _ in range(depth):
                nxt = []
                for z in frontier:
                    for g in gens:
                        v = float(g(np.asarray(z)))
                        k = round(v, 9)
                        if k not in seen and math.isfinite(v):
                            seen[k] = v
                            nxt.append(v)
                frontier = nxt
            best = min(tuple(float(gr.features(z)[0]) for gr in groups) for z in seen.values())
            out.append(best)
        res = np.asarray(out, dtype=float)
        return res.reshape(arr.shape + (len(groups),)) if np.ndim(states) else res[0]

    return key


def union_closure(w1, w2, *, depth: int = 8):
    """Transitive closure of the union of two relations.

    Partitions are joined with union-find.  Symmetry groups pool their
    generators; the joint invariant is the smallest pair of original
    invariants over the generator orbit explored to ``depth`` steps.  This
    is exact when each invariant is preserved by the other group's generators
    or when orbits are reached within ``depth`` steps.
    """
    if isinstance(w1, FinitePartition) and isinstance(w2, FinitePartition):
        if w1.n != w2.n:
            raise DomainError("partitions live on different state spaces")
        return join_partitions(w1.n, [w1, w2])
    if isinstance(w1, SymmetryGroup) and isinstance(w2, SymmetryGroup):
        if w1.space != w2.space:
            raise DomainError("witnesses live on different state spaces")
        if not w2.generators and _same_relation_as_identity(w2):
            return w1
        if not w1.generators and _same_relation_as_identity(w1):
            return w2
        names = {g.name for g in w1.generators}
        gens = tuple(w1.generators) + tuple(g for g in w2.generators if g.name not in names)
        return SymmetryGroup(w1.space, gens, _orbit_key((w1, w2), gens, depth), name=f"{w1.name}∪{w2.name}")
    raise DomainError("cannot combine a partition with a symmetry group")


def _same_relation_as_identity(w: SymmetryGroup) -> bool:
    return w.name == "identity"


@dataclass(frozen=True, eq=False)
class PairRelation:
    """Equality plus an explicit list of related pairs (closed under symmetry,
    not under transitivity); used for hypothesised relations on exact
    processes."""

    space: Any
    pairs: tuple = ()

    def related(self, x, y) -> bool:
        for s in (x, y):
            if not self.space.contains(s):
                raise DomainError(f"state {s!r} outside {self.space}")
        return x == y or (x, y) in self.pairs or (y, x) in self.pairs


def identity_witness(space) -> SymmetryGroup:
    return SymmetryGroup(space, (), lambda x: np.asarray(x, dtype=float), name="identity")
