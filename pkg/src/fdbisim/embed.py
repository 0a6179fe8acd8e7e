"""Embedding a finite LMP as a continuous-time process on ``X x [0, 1)``.

The second coordinate is a clock: from ``(x, s)`` the process stays at ``x``
while the clock runs, and jumps with ``tau`` each time ``t + s`` crosses an
integer.  Relations on the embedded space are represented by one partition of
``X`` per clock value (:class:`SlicedRelation`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DomainError, FinitePartition, Product
from .lmp import FiniteLMP, dt_bisim_refine, verify_dt_bisim
from .mc import EmbeddedLMP, ProcessModel


class PreconditionError(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddedProcess:
    base: FiniteLMP

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def space(self) -> Product:
        return Product(self.base.n)

    def model(self, horizon: float = 10.0, grid_step: float = 0.01) -> ProcessModel:
        return ProcessModel(EmbeddedLMP(self.base), self.base.obs(paired=True), horizon, grid_step)

    def tau_k(self, k: int) -> np.ndarray:
        if k < 0:
            raise DomainError("k must be non-negative")
        return np.linalg.matrix_power(self.base.tau, k)

    def kernel(self, state, t: float) -> tuple[np.ndarray, float]:
        """Distribution at time ``t`` from ``state = (x, s)``: masses over ``X``
        on the clock slice returned alongside (missing mass is death)."""
        x, s = state
        if not self.space.contains((x, s)):
            raise DomainError(f"state {state!r} outside {self.space}")
        if t < 0:
            raise DomainError("time must be non-negative")
        k = math.floor(t + s)
        return self.tau_k(k)[x].copy(), (t + s) - k

    def kernel_mass(self, state, t: float, xs) -> float:
        row, _ = self.kernel(state, t)
        return float(row[list(xs)].sum())


def embed_lmp(l: FiniteLMP) -> EmbeddedProcess:
    return EmbeddedProcess(l)


@dataclass(frozen=True, eq=False)
class SlicedRelation:
    """``(x, s) ~ (y, s')`` iff ``s == s'`` and ``x, y`` share a block of the
    partition attached to ``s`` (``default`` unless listed in ``slices``).

    Clock values are compared exactly.
    """

    n: int
    default: FinitePartition
    slices: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in [self.default, *self.slices.values()]:
            if p.n != self.n:
                raise DomainError("slice partitions must cover the base states")
        for s in self.slices:
            if not 0.0 <= s < 1.0:
                raise DomainError(f"clock value {s} outside [0, 1)")

    def partition_at(self, s: float) -> FinitePartition:
        return self.slices.get(float(s), self.default)

    def related(self, a, b) -> bool:
        space = Product(self.n)
        for st in (a, b):
            if not space.contains(tuple(st)):
                raise DomainError(f"state {st!r} outside {space}")
        (x, s), (y, t) = a, b
        if s != t:
            return False
        blk = self.partition_at(s).block_of
        return bool(blk[x] == blk[y])

    def is_time_coherent(self) -> bool:
        return all(p == self.default for p in self.slices.values())

    def partitions(self) -> list[FinitePartition]:
        return [self.default, *self.slices.values()]

    def __eq__(self, other):
        if not isinstance(other, SlicedRelation) or other.n != self.n:
            return False
        keys = set(self.slices) | set(other.slices)
        return self.default == other.default and all(self.partition_at(s) == other.partition_at(s) for s in keys)

    def __hash__(self):
        return hash((self.n, self.default))


def join_partitions(n: int, parts: Sequence[FinitePartition]) -> FinitePartition:
    """Finest partition coarser than every input (union-find)."""
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for p in parts:
        for blk in p.blocks:
            first, *rest = sorted(blk)
            for j in rest:
                ri, rj = find(first), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    return FinitePartition.from_labels([find(i) for i in range(n)])


def lift_dt_to_ct(l: FiniteLMP, r: FinitePartition) -> SlicedRelation:
    """The clock-synchronized lift of a DT-bisimulation."""
    if not verify_dt_bisim(l, r):
        raise PreconditionError("partition is not a DT-bisimulation")
    return SlicedRelation(l.n, r)


def time_coherent_closure(r: SlicedRelation) -> SlicedRelation:
    """Smallest time-coherent equivalence containing ``r``: relate ``x, y`` at
    every clock value as soon as they are related at one, then close
    transitively."""
    return SlicedRelation(r.n, join_partitions(r.n, r.partitions()))


def project_ct_to_dt(r: SlicedRelation) -> FinitePartition:
    if not r.is_time_coherent():
        raise PreconditionError("relation is not time-coherent")
    return r.default


# ---------------------------------------------------------------------------
# Exact bisimulation check on cylinder events


def _augmented(l: FiniteLMP) -> np.ndarray:
    """Kernel on ``X + {cemetery}``; the cemetery is the last index."""
    n = l.n
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = l.tau
    out[:n, n] = 1.0 - l.row_mass()
    out[n, n] = 1.0
    return out


def cylinder_probabilities(l: FiniteLMP, p: FinitePartition, max_len: int = 4) -> dict[tuple[int, ...], np.ndarray]:
    """For every sequence of atoms (blocks of ``p`` plus the cemetery, coded
    ``len(p.blocks)``) of length ``1..max_len``, the vector over start states
    of the probability that the first jumps land in those atoms."""
    aug = _augmented(l)
    n = l.n
    atom_of = np.concatenate([p.block_of, [len(p.blocks)]])
    n_atoms = len(p.blocks) + 1
    masks = [(atom_of == a).astype(float) for a in range(n_atoms)]
    out: dict[tuple[int, ...], np.ndarray] = {}
    # Backward recursion: v_word(z) = sum_u aug[z, u] 1_{a1}(u) v_rest(u).
    frontier: dict[tuple[int, ...], np.ndarray] = {(): np.ones(n + 1)}
    for _ in range(max_len):
        nxt = {}
        for word, v in frontier.items():
            for a in range(n_atoms):
                w = (a,) + word
                nxt[w] = aug @ (masks[a] * v)
        out.update({w: v[:n] for w, v in nxt.items()})
        frontier = nxt
    return out


def verify_embedded_bisim(e: EmbeddedProcess, r: SlicedRelation, max_len: int = 4, tol: float = 1e-9) -> bool:
    """Exact check of the bisimulation conditions on the embedded process.

    Related states must carry equal labels and give equal probability to
    every cylinder event fixing the atoms (blocks plus the cemetery) visited
    at the next ``max_len`` jump times.  Finite unions of such events
    generate the relation-closed sets.
    """
    l = e.base
    for p in r.partitions():
        for blk in p.blocks:
            keys = {l.label_key(x) for x in blk}
            if len(keys) > 1:
                return False
        probs = cylinder_probabilities(l, p, max_len)
        for v in probs.values():
            for blk in p.blocks:
                vals = v[sorted(blk)]
                if vals.max() - vals.min() > tol:
                    return False
    return True


@dataclass(frozen=True)
class TheoremReport:
    dt_partition: FinitePartition
    lift_verified: bool
    round_trip: bool
    biconditional: bool
    maximal: bool
    t_grid: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.lift_verified and self.round_trip and self.biconditional and self.maximal


def embedding_theorem_check(l: FiniteLMP, t_grid: Sequence[float] = tuple(np.arange(8) / 8), max_len: int = 4) -> TheoremReport:
    """Lift the greatest DT-bisimulation, verify it on the embedding, project
    it back, and check ``x ~ y`` iff ``(x, t) ~ (y, t)`` on ``t_grid``.

    Maximality: merging any two blocks of the lift breaks the embedded check.
    """
    e = embed_lmp(l)
    r = dt_bisim_refine(l)
    lifted = lift_dt_to_ct(l, r)
    ok_lift = verify_embedded_bisim(e, lifted, max_len)
    back = project_ct_to_dt(time_coherent_closure(lifted))
    blk = r.block_of
    bicond = all(
        (blk[x] == blk[y]) == lifted.related((x, float(t)), (y, float(t)))
        for t in t_grid
        for x in range(l.n)
        for y in range(l.n)
    )
    maximal = True
    for i, j in itertools.combinations(range(len(r.blocks)), 2):
        merged = [b for k, b in enumerate(r.blocks) if k not in (i, j)] + [r.blocks[i] | r.blocks[j]]
        coarser = SlicedRelation(l.n, FinitePartition.from_blocks(l.n, merged))
        if verify_embedded_bisim(e, coarser, max_len):
            maximal = False
            break
    return TheoremReport(r, ok_lift, back == r, bicond, maximal, tuple(float(t) for t in t_grid))
