"""Homomorphisms between processes, kernel bisimulations, and pushouts and
cospans of finite embedded processes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import DomainError, FinitePartition, Generator, IntegerObs, PointObs, SymmetryGroup, wrap_angle
from .embed import EmbeddedProcess, join_partitions
from .lmp import MASS_TOL, FiniteLMP, dt_bisim_refine, quotient_lmp, union_lmp, verify_dt_bisim
from .mc import BrownianMotion, CircleBM, ProcessModel, ReflectedBM, compare_marginals, sample_paths


class ConstructionError(DomainError):
    pass


# ---------------------------------------------------------------------------
# Homomorphisms between continuous models


@dataclass(frozen=True)
class FDHom:
    source: ProcessModel
    target: ProcessModel
    map: Callable[[np.ndarray], np.ndarray]
    name: str
    kernel_generators: tuple[Generator, ...] = ()

    def __call__(self, x):
        out = self.map(np.asarray(x, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def then(self, other: "FDHom", name: str | None = None) -> "FDHom":
        """``other ∘ self``."""
        if other.source != self.target:
            raise DomainError(f"cannot compose {self.name} with {other.name}: model mismatch")
        return FDHom(self.source, other.target, lambda x: other.map(self.map(x)), name or f"{other.name}∘{self.name}",
                     self.kernel_generators)


@dataclass(frozen=True)
class HomReport:
    name: str
    obs_commutes: bool
    obs_failures: tuple[float, ...]
    max_z: float
    worst: str
    z_crit: float

    @property
    def passed(self) -> bool:
        return self.obs_commutes and self.max_z <= self.z_crit


def verify_hom(h: FDHom, grid: Sequence[float], times: Sequence[float], n: int, seed: int, *,
               marginal_states: Sequence[float] | None = None, z_crit: float = 4.0) -> HomReport:
    """Check that ``h`` commutes with observations on ``grid`` and pushes the
    source law to the target law: paths from ``x`` mapped by ``h`` are
    compared with target paths from ``h(x)`` on one- and two-time marginals."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DomainError("grid must be nonempty")
    src_codes = h.source.obs.codes(grid)
    tgt_codes = h.target.obs.codes(h.map(grid))
    bad = grid[src_codes != tgt_codes]
    states = grid if marginal_states is None else np.asarray(marginal_states, dtype=float)
    max_z, worst = 0.0, ""
    for i, x in enumerate(states):
        pushed = h.map(sample_paths(h.source, float(x), times, n, seed, stream=(1, i)))
        direct = sample_paths(h.target, float(h.map(np.asarray(x))), times, n, seed, stream=(2, i))
        for cmp in compare_marginals(pushed, direct, list(times)):
            if cmp.z > max_z:
                max_z, worst = cmp.z, f"x={x:g} {cmp.label}"
    return HomReport(h.name, bad.size == 0, tuple(float(b) for b in bad[:10]), float(max_z), worst, z_crit)


def triangle_wave(x):
    """Fold of the real line onto ``[0, 1]`` with period 2."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - 2.0 * np.floor(x / 2.0 + 0.5))


def fold_half(x):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.5, x, 1.0 - x)


def signed_angle_to_nearest_integer(x):
    """``2 pi (x - y)`` with ``y`` the nearest integer (the lower one at ties),
    an angle in ``(-pi, pi]``."""
    x = np.asarray(x, dtype=float)
    y = np.ceil(x - 0.5)
    return 2.0 * np.pi * (x - y)


def angle_to_half_interval(theta):
    return np.abs(np.asarray(theta, dtype=float)) / (2.0 * np.pi)


def distance_to_nearest_integer(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


def hom_models() -> dict[str, ProcessModel]:
    return {
        "M1": ProcessModel(BrownianMotion(), IntegerObs()),
        "M2": ProcessModel(ReflectedBM(0.0, 1.0), PointObs((0.0, 1.0))),
        "M3": ProcessModel(ReflectedBM(0.0, 0.5), PointObs((0.0,))),
        "M4": ProcessModel(CircleBM(1.0 / (2 * math.pi)), PointObs((0.0,))),
    }


def builtin_homs() -> dict[str, FDHom]:
    """The four maps of the square ``M1 -> M2 -> M3`` and ``M1 -> M4 -> M3``
    together with both composites."""
    m = hom_models()
    int_translations = (
        Generator("shift+1", lambda x: x + 1.0, "shift-1"),
        Generator("shift-1", lambda x: x - 1.0, "shift+1"),
    )
    reflect0 = Generator("negate", lambda x: -x)
    phi1 = FDHom(m["M4"], m["M3"], angle_to_half_interval, "phi1", (reflect0,))
    phi2 = FDHom(m["M2"], m["M3"], fold_half, "phi2", (Generator("mirror", lambda x: 1.0 - x),))
    phi3 = FDHom(m["M1"], m["M4"], signed_angle_to_nearest_integer, "phi3", int_translations)
    phi4 = FDHom(
        m["M1"], m["M2"], triangle_wave, "phi4",
        (reflect0, Generator("shift+2", lambda x: x + 2.0, "shift-2"), Generator("shift-2", lambda x: x - 2.0, "shift+2")),
    )
    comp_a = phi4.then(phi2, "phi2∘phi4")
    comp_a = FDHom(comp_a.source, comp_a.target, comp_a.map, comp_a.name, int_translations + (reflect0,))
    comp_b = phi3.then(phi1, "phi1∘phi3")
    comp_b = FDHom(comp_b.source, comp_b.target, comp_b.map, comp_b.name, int_translations + (reflect0,))
    return {h.name: h for h in (phi1, phi2, phi3, phi4, comp_a, comp_b)}


def broken_halving_hom() -> FDHom:
    """``x -> x/2`` on Brownian motion with no observations on either side:
    commutes with observations but quarters the variance."""
    from .core import NoObs

    bm = ProcessModel(BrownianMotion(), NoObs())
    return FDHom(bm, bm, lambda x: np.asarray(x, dtype=float) / 2.0, "halving")


def hom_kernel_bisim(h: FDHom) -> SymmetryGroup:
    """The relation ``h(x) = h(y)``, decided by the feature ``h(x)``."""
    return SymmetryGroup(h.source.space, tuple(h.kernel_generators), h.map, name=f"ker {h.name}")


# ---------------------------------------------------------------------------
# Finite homomorphisms between embedded processes


@dataclass(frozen=True, eq=False)
class FiniteHom:
    """``(x, s) -> (mapping[x], s)`` between embedded finite LMPs."""

    source: FiniteLMP
    target: FiniteLMP
    mapping: tuple[int, ...]
    name: str = "f"

    def __post_init__(self):
        if len(self.mapping) != self.source.n:
            raise DomainError("mapping must assign every source state")
        if any(not 0 <= y < self.target.n for y in self.mapping):
            raise DomainError("mapping leaves the target state space")
        object.__setattr__(self, "mapping", tuple(int(y) for y in self.mapping))

    def __call__(self, x: int) -> int:
        return self.mapping[x]

    def on_embedded(self, state):
        x, s = state
        return (self.mapping[x], s)

    def then(self, other: "FiniteHom") -> "FiniteHom":
        return FiniteHom(self.source, other.target, tuple(other.mapping[y] for y in self.mapping), f"{other.name}∘{self.name}")


def is_finite_hom(source: FiniteLMP, target: FiniteLMP, mapping: Sequence[int], tol: float = MASS_TOL) -> bool:
    """Labels are preserved and ``tau'(f(x), {z}) = tau(x, f^-1(z))``."""
    mapping = np.asarray(mapping, dtype=np.int64)
    if source.ap_names != target.ap_names:
        return False
    if not np.array_equal(source.labels, target.labels[mapping]):
        return False
    pushed = np.zeros((source.n, target.n))
    for z in range(target.n):
        pushed[:, z] = source.tau[:, mapping == z].sum(axis=1)
    return bool(np.max(np.abs(target.tau[mapping] - pushed)) <= tol)


def verify_finite_hom(h: FiniteHom) -> bool:
    return is_finite_hom(h.source, h.target, h.mapping)


@dataclass(frozen=True, eq=False)
class PushoutResult:
    apex: FiniteLMP
    phi1: FiniteHom
    phi3: FiniteHom
    classes: tuple[frozenset[int], ...]  # over E1 + E3 (E3 states offset by |E1|)

    @property
    def embedded(self) -> EmbeddedProcess:
        return EmbeddedProcess(self.apex)


def _describe_class(cls, n1: int) -> str:
    names = [f"E1:{i}" if i < n1 else f"E3:{i - n1}" for i in sorted(cls)]
    return "{" + ", ".join(names) + "}"


def pushout_finite(f: FiniteHom, g: FiniteHom, tol: float = MASS_TOL) -> PushoutResult:
    """Glue ``E1`` and ``E3`` along ``f: E2 -> E1`` and ``g: E2 -> E3``."""
    if f.source != g.source:
        raise DomainError("legs must share their source")
    for h in (f, g):
        if not verify_finite_hom(h):
            raise ConstructionError(f"leg {h.name} is not a homomorphism")
    e1, e3 = f.target, g.target
    n1 = e1.n
    union = union_lmp(e1, e3)
    glue = _glue(union.n, [(f(z), n1 + g(z)) for z in range(f.source.n)])
    for blk in glue.blocks:
        if len({union.label_key(x) for x in blk}) > 1:
            raise ConstructionError(f"observations disagree on class {_describe_class(blk, n1)}")
    masses = union.block_masses(glue)
    for blk in glue.blocks:
        rows = masses[sorted(blk)]
        if np.max(rows.max(axis=0) - rows.min(axis=0)) > tol:
            raise ConstructionError(f"kernel disagrees on class {_describe_class(blk, n1)}")
    apex = quotient_lmp(union, glue, tol)
    cls = glue.block_of
    phi1 = FiniteHom(e1, apex, tuple(int(cls[x]) for x in range(n1)), "phi1")
    phi3 = FiniteHom(e3, apex, tuple(int(cls[n1 + y]) for y in range(e3.n)), "phi3")
    return PushoutResult(apex, phi1, phi3, glue.blocks)


def _glue(n: int, pairs) -> FinitePartition:
    """Smallest equivalence on ``range(n)`` relating each pair."""
    singles = FinitePartition.identity(n)
    return join_partitions(n, [singles] + [
        FinitePartition.from_blocks(n, [{a, b}] + [{i} for i in range(n) if i not in (a, b)]) for a, b in pairs
    ])


def mediating_map(po: PushoutResult, h1: FiniteHom, h3: FiniteHom) -> FiniteHom | None:
    """The map ``u`` with ``u∘phi1 = h1`` and ``u∘phi3 = h3``, or ``None`` when
    the cocone is not constant on some class."""
    n1 = po.phi1.source.n
    out = []
    for cls in po.classes:
        images = {h1(x) if x < n1 else h3(x - n1) for x in cls}
        if len(images) != 1:
            return None
        out.append(images.pop())
    return FiniteHom(po.apex, h1.target, tuple(out), "u")


@dataclass(frozen=True)
class UniversalReport:
    targets: int
    cocones: int
    failures: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.failures


def homs_between(source: FiniteLMP, target: FiniteLMP) -> list[tuple[int, ...]]:
    return [m for m in itertools.product(range(target.n), repeat=source.n) if is_finite_hom(source, target, m)]


def check_universal_property(f: FiniteHom, g: FiniteHom, po: PushoutResult, targets: Sequence[FiniteLMP]) -> UniversalReport:
    """Exhaustive over every cocone ``(h1, h3)`` into each target: a unique
    mediating homomorphism exists and factors both legs."""
    failures = []
    count = 0
    for ti, t in enumerate(targets):
        if t.ap_names != po.apex.ap_names:
            continue
        h1s = homs_between(f.target, t)
        h3s = homs_between(g.target, t)
        for m1, m3 in itertools.product(h1s, h3s):
            if any(m1[f(z)] != m3[g(z)] for z in range(f.source.n)):
                continue
            count += 1
            h1, h3 = FiniteHom(f.target, t, m1, "h1"), FiniteHom(g.target, t, m3, "h3")
            u = mediating_map(po, h1, h3)
            if u is None:
                failures.append(f"target {ti}: no mediating map for {m1},{m3}")
                continue
            if not verify_finite_hom(u):
                failures.append(f"target {ti}: mediating map {u.mapping} is not a homomorphism")
            if po.phi1.then(u).mapping != h1.mapping or po.phi3.then(u).mapping != h3.mapping:
                failures.append(f"target {ti}: mediating map does not factor the cocone")
            others = [m for m in homs_between(po.apex, t)
                      if tuple(m[c] for c in po.phi1.mapping) == m1 and tuple(m[c] for c in po.phi3.mapping) == m3]
            if others != [u.mapping]:
                failures.append(f"target {ti}: mediating map not unique ({others})")
    return UniversalReport(len(targets), count, tuple(failures))


def lumped_images(l: FiniteLMP, max_states: int = 3) -> list[FiniteLMP]:
    """All quotients of ``l`` by lumpable label-respecting partitions with at
    most ``max_states`` blocks."""
    from .lmp import all_partitions

    out = []
    for p in all_partitions(l.n):
        if len(p.blocks) <= max_states and verify_dt_bisim(l, p):
            out.append(quotient_lmp(l, p))
    return out


# ---------------------------------------------------------------------------
# Cospans from bisimulations


@dataclass(frozen=True, eq=False)
class CospanResult:
    apex: FiniteLMP
    f: FiniteHom
    g: FiniteHom
    relation: FinitePartition
    iff_cross: bool
    iff_left: bool
    iff_right: bool

    @property
    def passed(self) -> bool:
        return self.iff_cross and self.iff_left and self.iff_right


def cospan_from_bisim(l1: FiniteLMP, l2: FiniteLMP, w: FinitePartition) -> CospanResult:
    """Quotient of the disjoint union by a bisimulation ``w`` (states of ``l2``
    offset by ``l1.n``), with ``f`` and ``g`` the induced maps."""
    union = union_lmp(l1, l2)
    if w.n != union.n:
        raise DomainError("relation must live on the disjoint union")
    if not verify_dt_bisim(union, w):
        raise ConstructionError("relation is not a bisimulation on the disjoint union")
    apex = quotient_lmp(union, w)
    blk = w.block_of
    f = FiniteHom(l1, apex, tuple(int(blk[x]) for x in range(l1.n)), "f")
    g = FiniteHom(l2, apex, tuple(int(blk[l1.n + y]) for y in range(l2.n)), "g")
    if not (verify_finite_hom(f) and verify_finite_hom(g)):
        raise ConstructionError("quotient maps are not homomorphisms")
    n1 = l1.n
    cross = all((blk[x] == blk[n1 + y]) == (f(x) == g(y)) for x in range(l1.n) for y in range(l2.n))
    left = all((blk[x] == blk[x2]) == (f(x) == f(x2)) for x in range(l1.n) for x2 in range(l1.n))
    right = all((blk[n1 + y] == blk[n1 + y2]) == (g(y) == g(y2)) for y in range(l2.n) for y2 in range(l2.n))
    return CospanResult(apex, f, g, w, cross, left, right)


def bisimilar_across(l1: FiniteLMP, l2: FiniteLMP) -> tuple[FinitePartition, CospanResult]:
    """Greatest bisimulation on the disjoint union and its cospan."""
    w = dt_bisim_refine(union_lmp(l1, l2))
    return w, cospan_from_bisim(l1, l2, w)


# ---------------------------------------------------------------------------
# Curated finite examples


def curated_pushout_example() -> tuple[FiniteHom, FiniteHom]:
    """A one-state looping process glued into two two-state processes.

    ``E1``: ``a`` loops (label P), ``b`` jumps to ``a``.
    ``E3``: ``c`` loops (label P), ``d`` (label Q) jumps to ``c`` or dies, each
    with probability 1/2.  The apex has three classes ``{a, c}, {b}, {d}``.
    """
    aps = ("P", "Q")
    e2 = FiniteLMP(np.array([[1.0]]), np.array([[True, False]]), aps)
    e1 = FiniteLMP(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[True, False], [False, False]]), aps)
    e3 = FiniteLMP(np.array([[1.0, 0.0], [0.5, 0.0]]), np.array([[True, False], [False, True]]), aps)
    return FiniteHom(e2, e1, (0,), "f"), FiniteHom(e2, e3, (0,), "g")


def curated_targets(po: PushoutResult) -> list[FiniteLMP]:
    """Targets of at most three states for the universal-property check: the
    apex, its lumped images, the legs' lumped images and a few extra
    processes with spare states."""
    aps = po.apex.ap_names
    out: list[FiniteLMP] = []
    for l in (po.apex, po.phi1.source, po.phi3.source):
        out += [q for q in lumped_images(l) if q.n <= 3]
    loop_p = FiniteLMP(np.array([[1.0]]), np.array([[True, False]]), aps)
    out.append(loop_p)
    out.append(union_lmp(loop_p, FiniteLMP(np.array([[0.0]]), np.array([[False, False]]), aps)))
    out.append(union_lmp(loop_p, FiniteLMP(np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([[False, False], [False, True]]), aps)))
    out.append(FiniteLMP(np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]),
                         np.array([[True, False], [False, False], [False, True]]), aps))
    uniq: list[FiniteLMP] = []
    for t in out:
        if t.n <= 3 and all(t != u for u in uniq):
            uniq.append(t)
    return uniq


def small_lmps(label_choices: Sequence[tuple[bool, ...]], ap_names: tuple[str, ...], max_states: int = 3,
               weights: Sequence[float] = (0.0, 0.5, 1.0)) -> list[FiniteLMP]:
    """Every LMP with at most ``max_states`` states, entries from ``weights``
    (row sums at most 1) and labels from ``label_choices``."""
    out = []
    for n in range(1, max_states + 1):
        rows = [r for r in itertools.product(weights, repeat=n) if sum(r) <= 1.0 + 1e-12]
        for tau in itertools.product(rows, repeat=n):
            for labels in itertools.product(label_choices, repeat=n):
                out.append(FiniteLMP(np.array(tau, dtype=float), np.array(labels, dtype=bool).reshape(n, len(ap_names)), ap_names))
    return out
