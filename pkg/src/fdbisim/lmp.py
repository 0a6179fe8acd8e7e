"""Finite labelled Markov processes and discrete-time bisimulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import DomainError, FinitePartition, LabelObs

MASS_TOL = 1e-9
ROW_TOL = 1e-12


class LMPValidationError(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteLMP:
    """States ``0..n-1``, a sub-stochastic matrix ``tau`` and boolean labels
    ``labels[i, k]`` for each atomic proposition ``ap_names[k]``."""

    tau: np.ndarray
    labels: np.ndarray
    ap_names: tuple[str, ...] = ()

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float)
        if tau.ndim != 2 or tau.shape[0] != tau.shape[1] or tau.shape[0] < 1:
            raise LMPValidationError(f"transition matrix must be square and nonempty, got shape {tau.shape}")
        if not np.all(np.isfinite(tau)):
            raise LMPValidationError("transition entries must be finite")
        if np.any(tau < 0):
            i, j = np.argwhere(tau < 0)[0]
            raise LMPValidationError(f"negative transition mass {tau[i, j]} at ({i}, {j})")
        sums = tau.sum(axis=1)
        if np.any(sums > 1 + ROW_TOL):
            i = int(np.argmax(sums))
            raise LMPValidationError(f"row {i} has mass {sums[i]:g} > 1")
        labels = np.array(self.labels, dtype=bool).reshape(tau.shape[0], -1)
        if labels.shape[1] != len(self.ap_names):
            raise LMPValidationError("label columns must match the atomic propositions")
        tau.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ap_names", tuple(self.ap_names))

    @property
    def n(self) -> int:
        return self.tau.shape[0]

    def row_mass(self) -> np.ndarray:
        return self.tau.sum(axis=1)

    def label_key(self, i: int) -> tuple[bool, ...]:
        return tuple(bool(b) for b in self.labels[i])

    def obs(self, paired: bool = False) -> LabelObs:
        return LabelObs(self.labels, self.ap_names, paired)

    def block_masses(self, p: FinitePartition) -> np.ndarray:
        """``out[x, k] = tau(x, block_k)``."""
        ind = np.zeros((self.n, len(p.blocks)))
        ind[np.arange(self.n), p.block_of] = 1.0
        return self.tau @ ind

    def __eq__(self, other):
        return (
            isinstance(other, FiniteLMP)
            and self.ap_names == other.ap_names
            and np.array_equal(self.tau, other.tau)
            and np.array_equal(self.labels, other.labels)
        )

    def __hash__(self):
        return hash((self.tau.tobytes(), self.labels.tobytes(), self.ap_names))


def lmp_from_rows(rows: Sequence[Sequence[float]], labelled: dict[int, Iterable[str]] | None = None, ap_names=()) -> FiniteLMP:
    ap_names = tuple(ap_names)
    labels = np.zeros((len(rows), len(ap_names)), dtype=bool)
    for i, names in (labelled or {}).items():
        for a in names:
            labels[i, ap_names.index(a)] = True
    return FiniteLMP(np.asarray(rows, dtype=float), labels, ap_names)


def _quantize(v: np.ndarray) -> tuple[int, ...]:
    return tuple(np.rint(np.asarray(v) / MASS_TOL).astype(np.int64).tolist())


def dt_bisim_refine(l: FiniteLMP) -> FinitePartition:
    """Coarsest partition respecting labels with equal block masses inside
    each block, by iterated signature splitting."""
    keys = [l.label_key(i) for i in range(l.n)]
    p = FinitePartition.from_labels(_relabel(keys))
    while True:
        masses = l.block_masses(p)
        b = p.block_of
        sigs = [(int(b[i]), _quantize(masses[i])) for i in range(l.n)]
        q = FinitePartition.from_labels(_relabel(sigs))
        if len(q.blocks) == len(p.blocks):
            return q
        p = q


def _relabel(keys) -> list[int]:
    seen: dict = {}
    return [seen.setdefault(k, len(seen)) for k in keys]


def verify_dt_bisim(l: FiniteLMP, p: FinitePartition, tol: float = MASS_TOL) -> bool:
    if p.n != l.n:
        raise DomainError("partition size does not match the LMP")
    masses = l.block_masses(p)
    for blk in p.blocks:
        members = sorted(blk)
        first = members[0]
        for x in members[1:]:
            if l.label_key(x) != l.label_key(first):
                return False
            if np.max(np.abs(masses[x] - masses[first])) > tol:
                return False
    return True


def set_partitions(n: int) -> Iterator[list[int]]:
    """All set partitions of ``range(n)`` as restricted growth strings."""
    if n == 0:
        yield []
        return
    labels = [0] * n

    def rec(i: int, top: int):
        if i == n:
            yield list(labels)
            return
        for v in range(top + 2):
            labels[i] = v
            yield from rec(i + 1, max(top, v))

    labels[0] = 0
    yield from rec(1, 0)


def all_partitions(n: int) -> Iterator[FinitePartition]:
    for labels in set_partitions(n):
        yield FinitePartition.from_labels(labels)


def brute_force_greatest_bisim(l: FiniteLMP) -> FinitePartition:
    """Exhaustive oracle: the coarsest of all partitions passing
    :func:`verify_dt_bisim`."""
    valid = [p for p in all_partitions(l.n) if verify_dt_bisim(l, p)]
    fewest = min(len(p.blocks) for p in valid)
    best = [p for p in valid if len(p.blocks) == fewest]
    if len(best) != 1 or not all(q.refines(best[0]) for q in valid):
        raise AssertionError("bisimulations have no greatest element")
    return best[0]


def n_step_product(l: FiniteLMP, x: int, sets: Sequence[Iterable[int]]) -> float:
    """``P(X_1 in A_1, ..., X_n in A_n | X_0 = x)`` for the chain ``tau``."""
    if not sets:
        raise DomainError("need at least one set")
    v = np.zeros(l.n)
    v[x] = 1.0
    for a in sets:
        ind = np.zeros(l.n)
        ind[list(a)] = 1.0
        v = (v @ l.tau) * ind
    return float(v.sum())


def closed_sets(p: FinitePartition) -> list[frozenset[int]]:
    """All unions of blocks (the ``p``-closed subsets), including the empty set."""
    blocks = p.blocks
    out = []
    for mask in range(1 << len(blocks)):
        s = frozenset().union(*(blocks[i] for i in range(len(blocks)) if mask >> i & 1))
        out.append(s)
    return out


def union_lmp(a: FiniteLMP, b: FiniteLMP) -> FiniteLMP:
    """Disjoint union: states of ``a`` first, then those of ``b``."""
    if a.ap_names != b.ap_names:
        raise DomainError("disjoint union needs matching atomic propositions")
    tau = np.zeros((a.n + b.n, a.n + b.n))
    tau[: a.n, : a.n] = a.tau
    tau[a.n :, a.n :] = b.tau
    return FiniteLMP(tau, np.vstack([a.labels, b.labels]), a.ap_names)


def quotient_lmp(l: FiniteLMP, p: FinitePartition, tol: float = MASS_TOL) -> FiniteLMP:
    """Lumped chain on the blocks of ``p``; requires a label-respecting
    partition with equal block masses inside blocks."""
    if not verify_dt_bisim(l, p, tol):
        raise DomainError("partition is not lumpable for this LMP")
    masses = l.block_masses(p)
    reps = [min(b) for b in p.blocks]
    return FiniteLMP(masses[reps], l.labels[reps], l.ap_names)


def random_lmp(rng: np.random.Generator, n: int, n_aps: int = 1, unit: int = 16) -> FiniteLMP:
    """Random LMP with entries in multiples of ``1/unit`` built on a planted
    lumpable structure, occasionally perturbed so that refinement has work
    to do."""
    if n < 1:
        raise DomainError("n must be positive")
    n_classes = int(rng.integers(1, n + 1))
    cls = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, n - n_classes)])
    rng.shuffle(cls)
    class_labels = rng.random((n_classes, n_aps)) < 0.3
    tau = np.zeros((n, n))
    class_units = np.zeros((n_classes, n_classes), dtype=np.int64)
    for c in range(n_classes):
        budget = unit - int(rng.integers(0, 3) * (unit // 8))
        class_units[c] = rng.multinomial(budget, np.full(n_classes, 1.0 / n_classes))
    for x in range(n):
        for d in range(n_classes):
            members = np.flatnonzero(cls == d)
            split = rng.multinomial(class_units[cls[x], d], np.full(members.size, 1.0 / members.size))
            tau[x, members] = split / unit
    if n > 1 and rng.random() < 0.4:
        x = int(rng.integers(n))
        src = np.flatnonzero(tau[x] > 0)
        if src.size:
            i = int(rng.choice(src))
            j = int(rng.integers(n))
            tau[x, i] -= 1.0 / unit
            tau[x, j] += 1.0 / unit
    return FiniteLMP(tau, class_labels[cls], tuple(f"P{k}" for k in range(n_aps)))
