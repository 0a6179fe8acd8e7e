"""Shared domain types: state spaces, observations, state sets, trajectories,
relation witnesses and Monte Carlo estimates.

States are plain Python/numpy values:

* real-line, interval and circle processes use floats (circle states are
  angles in ``(-pi, pi]``);
* the fork process uses ``(position, branch)`` pairs;
* embedded labelled Markov processes use ``(x, s)`` pairs with ``x`` an
  integer state index and ``s`` in ``[0, 1)``;
* finite processes use integer indices.

Inside arrays the cemetery state is encoded as NaN.  Outside arrays it is the
:data:`CEMETERY` singleton.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

REL_TOL = 1e-12


class DomainError(ValueError):
    """A state, time or parameter lies outside the domain of an operation."""


class HorizonTruncationWarning(UserWarning):
    pass


class _Cemetery:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "∂"

    def __reduce__(self):
        return (_Cemetery, ())


CEMETERY = _Cemetery()


def is_cemetery(state: Any) -> bool:
    if state is CEMETERY:
        return True
    if isinstance(state, float) and math.isnan(state):
        return True
    if isinstance(state, tuple) and state and isinstance(state[0], float) and math.isnan(state[0]):
        return True
    return False


# ---------------------------------------------------------------------------
# State spaces


@dataclass(frozen=True)
class RealLine:
    def contains(self, x) -> bool:
        return isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    boundary: str = "open"  # absorbing | reflecting | open

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"interval needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.boundary not in ("absorbing", "reflecting", "open"):
            raise DomainError(f"unknown boundary kind {self.boundary!r}")

    def contains(self, x) -> bool:
        if not isinstance(x, (int, float, np.floating, np.integer)) or math.isnan(x):
            return False
        if self.boundary == "reflecting":
            return self.lo <= x <= self.hi
        return self.lo < x < self.hi


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("circle radius must be positive")

    def contains(self, x) -> bool:
        return isinstance(x, (int, float, np.floating, np.integer)) and -math.pi < x <= math.pi


@dataclass(frozen=True)
class FiniteSet:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("finite state space needs at least one state")

    def contains(self, x) -> bool:
        return isinstance(x, (int, np.integer)) and 0 <= x < self.n


@dataclass(frozen=True)
class Product:
    """``FiniteSet(n) x [0, 1)``: the state space of an embedded LMP."""

    n: int

    def contains(self, x) -> bool:
        if not (isinstance(x, tuple) and len(x) == 2):
            return False
        i, s = x
        return isinstance(i, (int, np.integer)) and 0 <= i < self.n and 0.0 <= s < 1.0


@dataclass(frozen=True)
class ForkSpace:
    """Branch segments of the fork process, parameterized by fork positions."""

    fork_at: float = 95.0
    end: float = 100.0

    def contains(self, x) -> bool:
        if not (isinstance(x, tuple) and len(x) == 2):
            return False
        p, j = x
        if j == 1:
            return p == 0.0
        if j in (2, 3):
            return 0.0 < p <= self.end
        if j == 4:
            return 0.0 <= p <= self.fork_at
        if j in (5, 6):
            return self.fork_at < p <= self.end
        return False


StateSpace = RealLine | Interval | Circle | FiniteSet | Product | ForkSpace


def wrap_angle(theta):
    """Map angles into ``(-pi, pi]``."""
    w = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


# ---------------------------------------------------------------------------
# Observation maps


class ObservationMap:
    """Base class: ``vector`` evaluates the atomic propositions on an array of
    states and returns booleans with a trailing axis of length ``len(ap_names)``.
    """

    ap_names: tuple[str, ...] = ()

    def vector(self, states: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def _dead(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return np.isnan(states)

    def codes(self, states) -> np.ndarray:
        """Integer code of each observation; ``-1`` encodes the cemetery."""
        states = np.asarray(states, dtype=float)
        bits = self.vector(states)
        weights = 1 << np.arange(len(self.ap_names))
        out = (bits.astype(np.int64) * weights).sum(axis=-1) if self.ap_names else np.zeros(bits.shape[:-1], np.int64)
        return np.where(self._dead(states), -1, out)

    def __call__(self, state):
        if is_cemetery(state):
            return CEMETERY
        arr = np.asarray(state, dtype=float)
        return tuple(bool(b) for b in self.vector(arr))

    def encode(self, value) -> int:
        """Code of an observation value as returned by ``__call__``."""
        if value is CEMETERY:
            return -1
        return sum(1 << i for i, b in enumerate(value) if b)


@dataclass(frozen=True)
class NoObs(ObservationMap):
    ap_names: tuple[str, ...] = ()

    def vector(self, states):
        states = np.asarray(states, dtype=float)
        return np.zeros(states.shape + (0,), dtype=bool)


@dataclass(frozen=True)
class PointObs(ObservationMap):
    points: tuple[float, ...] = (0.0,)
    ap_names: tuple[str, ...] = ("p",)
    atol: float = 1e-12

    def vector(self, states):
        states = np.asarray(states, dtype=float)
        hit = np.zeros(states.shape, dtype=bool)
        for p in self.points:
            hit |= np.abs(states - p) <= self.atol * max(1.0, abs(p))
        return hit[..., None]


@dataclass(frozen=True)
class IntegerObs(ObservationMap):
    ap_names: tuple[str, ...] = ("p",)
    atol: float = 1e-12

    def vector(self, states):
        states = np.asarray(states, dtype=float)
        return (np.abs(states - np.round(states)) <= self.atol * np.maximum(1.0, np.abs(states)))[..., None]


@dataclass(frozen=True)
class IntervalObs(ObservationMap):
    lo: float = -1.0
    hi: float = 1.0
    ap_names: tuple[str, ...] = ("p",)

    def vector(self, states):
        states = np.asarray(states, dtype=float)
        return ((states >= self.lo) & (states <= self.hi))[..., None]


@dataclass(frozen=True)
class ForkObs(ObservationMap):
    """``P`` at the end of branches 2 and 5, ``Q`` at the end of 3 and 6."""

    end: float = 100.0
    ap_names: tuple[str, ...] = ("P", "Q")

    def vector(self, states):
        states = np.asarray(states, dtype=float)
        pos, branch = states[..., 0], states[..., 1]
        at_end = pos == self.end
        p = at_end & ((branch == 2) | (branch == 5))
        q = at_end & ((branch == 3) | (branch == 6))
        return np.stack([p, q], axis=-1)

    def _dead(self, states):
        return np.isnan(np.asarray(states, dtype=float)[..., 0])


@dataclass(frozen=True, eq=False)
class LabelObs(ObservationMap):
    """Labels of a finite state space; accepts integer states or ``(x, s)`` pairs."""

    labels: np.ndarray = field(default_factory=lambda: np.zeros((1, 0), dtype=bool))
    ap_names: tuple[str, ...] = ()
    paired: bool = False

    def vector(self, states):
        states = np.asarray(states, dtype=float)
        idx = states[..., 0] if self.paired else states
        dead = np.isnan(idx)
        safe = np.where(dead, 0, idx).astype(np.int64)
        out = self.labels[safe]
        return np.where(dead[..., None], False, out)

    def _dead(self, states):
        states = np.asarray(states, dtype=float)
        return np.isnan(states[..., 0] if self.paired else states)

    def __eq__(self, other):
        return (
            isinstance(other, LabelObs)
            and self.ap_names == other.ap_names
            and self.paired == other.paired
            and np.array_equal(self.labels, other.labels)
        )

    def __hash__(self):
        return hash((self.ap_names, self.paired, self.labels.tobytes()))


# ---------------------------------------------------------------------------
# State sets (targets of events and of the one-step kernel condition)


class StateSet:
    def contains(self, states) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def gap_bounds(self, states) -> tuple[np.ndarray, np.ndarray]:
        """For real states outside the set, the complement component ``(lo, hi)``
        containing each state."""
        raise NotImplementedError


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True


@dataclass(frozen=True)
class RealSet(StateSet):
    """Finite union of disjoint intervals (points are degenerate closed pieces)."""

    pieces: tuple[Piece, ...] = ()

    @classmethod
    def points(cls, *pts: float) -> "RealSet":
        return cls(tuple(Piece(p, p) for p in sorted(pts)))

    @classmethod
    def interval(cls, lo, hi, lo_closed=True, hi_closed=True) -> "RealSet":
        return cls((Piece(lo, hi, lo_closed, hi_closed),))

    @classmethod
    def everything(cls) -> "RealSet":
        return cls((Piece(-math.inf, math.inf, False, False),))

    def complement(self) -> "RealSet":
        out = []
        prev_hi, prev_closed = -math.inf, True
        for p in sorted(self.pieces, key=lambda q: q.lo):
            if p.lo > prev_hi or (p.lo == prev_hi and not prev_closed and not p.lo_closed):
                out.append(Piece(prev_hi, p.lo, not prev_closed if prev_hi > -math.inf else False, not p.lo_closed))
            prev_hi, prev_closed = p.hi, p.hi_closed
        if prev_hi < math.inf:
            out.append(Piece(prev_hi, math.inf, not prev_closed, False))
        return RealSet(tuple(q for q in out if q.lo < q.hi or (q.lo_closed and q.hi_closed)))

    def contains(self, states):
        x = np.asarray(states, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for p in self.pieces:
            lo_ok = (x >= p.lo) if p.lo_closed else (x > p.lo)
            hi_ok = (x <= p.hi) if p.hi_closed else (x < p.hi)
            out |= lo_ok & hi_ok
        return out

    def gap_bounds(self, states):
        x = np.asarray(states, dtype=float)
        edges = np.unique([e for p in self.pieces for e in (p.lo, p.hi) if math.isfinite(e)])
        if edges.size == 0:
            return np.full(x.shape, -np.inf), np.full(x.shape, np.inf)
        i = np.searchsorted(edges, x, side="right")
        padded = np.concatenate([[-np.inf], edges, [np.inf]])
        return padded[i], padded[i + 1]


@dataclass(frozen=True)
class IntegerSet(StateSet):
    atol: float = 1e-12

    def contains(self, states):
        x = np.asarray(states, dtype=float)
        return np.abs(x - np.round(x)) <= self.atol * np.maximum(1.0, np.abs(x))

    def gap_bounds(self, states):
        x = np.asarray(states, dtype=float)
        return np.floor(x), np.ceil(x)


@dataclass(frozen=True)
class FiniteStateSet(StateSet):
    """A finite set of hashable states (fork pairs, LMP indices)."""

    states: frozenset = frozenset()

    def contains(self, states):
        arr = np.asarray(states, dtype=float)
        if arr.ndim >= 1 and arr.shape[-1] == 2 and any(isinstance(s, tuple) for s in self.states):
            keys = [tuple(map(float, s)) for s in self.states]
            out = np.zeros(arr.shape[:-1], dtype=bool)
            for k in keys:
                out |= (arr[..., 0] == k[0]) & (arr[..., 1] == k[1])
            return out
        return np.isin(arr, [float(s) for s in self.states])


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    sample_times: np.ndarray
    values: np.ndarray
    grid_step: float
    horizon: float = math.inf

    def __post_init__(self):
        if self.sample_times[0] != 0.0:
            raise DomainError("trajectories start at time 0")
        if np.any(np.diff(self.sample_times) <= 0):
            raise DomainError("sample times must be strictly increasing")
        if not self.grid_step > 0:
            raise DomainError("grid_step must be positive")
        dead = self._dead_mask()
        if dead.any() and not dead[int(np.argmax(dead)):].all():
            raise DomainError("a trajectory cannot leave the cemetery")

    def _dead_mask(self) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        return np.isnan(v if v.ndim == 1 else v[:, 0])

    @property
    def absorbed(self) -> bool:
        return bool(self._dead_mask()[-1])

    def state_at_index(self, i: int):
        v = self.values[i]
        if np.ndim(v) == 0:
            return CEMETERY if math.isnan(v) else float(v)
        if math.isnan(v[0]):
            return CEMETERY
        return (float(v[0]), float(v[1]))


def trajectory_value(tr: Trajectory, t: float):
    """Value of the cadlag path at time ``t`` (left-closed step interpolation).

    Past the last sample an absorbed path stays at the cemetery; a live path
    keeps its last value and a :class:`HorizonTruncationWarning` is emitted.
    """
    if t < 0:
        raise DomainError("time must be non-negative")
    i = int(np.searchsorted(tr.sample_times, t, side="right")) - 1
    if t > tr.sample_times[-1] and not tr.absorbed and t > tr.horizon:
        warnings.warn(f"t={t} beyond horizon {tr.horizon}; returning last value", HorizonTruncationWarning)
    return tr.state_at_index(i)


# ---------------------------------------------------------------------------
# Relations


@dataclass(frozen=True, eq=False)
class FinitePartition:
    n: int
    blocks: tuple[frozenset[int], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for b in self.blocks:
            if not b:
                raise DomainError("partition blocks must be nonempty")
            if seen & b:
                raise DomainError("partition blocks overlap")
            seen |= b
        if seen != set(range(self.n)):
            raise DomainError("partition blocks do not cover the state space")

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "FinitePartition":
        groups: dict[int, set[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, set()).add(i)
        return cls.from_blocks(len(labels), groups.values())

    @classmethod
    def from_blocks(cls, n: int, blocks) -> "FinitePartition":
        canon = sorted((frozenset(b) for b in blocks), key=min)
        return cls(n, tuple(canon))

    @classmethod
    def identity(cls, n: int) -> "FinitePartition":
        return cls.from_blocks(n, [{i} for i in range(n)])

    @classmethod
    def total(cls, n: int) -> "FinitePartition":
        return cls.from_blocks(n, [set(range(n))])

    @property
    def block_of(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            for i in b:
                out[i] = k
        return out

    def as_lists(self) -> list[list[int]]:
        return [sorted(b) for b in self.blocks]

    def refines(self, other: "FinitePartition") -> bool:
        """True when every block of ``self`` sits inside a block of ``other``."""
        ob = other.block_of
        return all(len({ob[i] for i in b}) == 1 for b in self.blocks)

    def __eq__(self, other):
        return isinstance(other, FinitePartition) and self.n == other.n and set(self.blocks) == set(other.blocks)

    def __hash__(self):
        return hash((self.n, frozenset(self.blocks)))

    def __repr__(self):
        return "FinitePartition(" + "".join("{" + ",".join(map(str, b)) + "}" for b in self.as_lists()) + ")"


@dataclass(frozen=True)
class Generator:
    """A vectorized state map; ``inverse`` names its inverse generator, or is
    ``None`` for an involution."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    inverse: str | None = None

    def __call__(self, x):
        return self.fn(x)


@dataclass(frozen=True)
class SymmetryGroup:
    """An equivalence generated by measure-preserving state maps, decided by a
    canonical invariant feature."""

    space: Any
    generators: tuple[Generator, ...]
    invariant: Callable[[np.ndarray], np.ndarray]
    name: str = "symmetry"

    def __post_init__(self):
        names = {g.name for g in self.generators}
        for g in self.generators:
            if g.inverse is not None and g.inverse not in names:
                raise DomainError(f"generator {g.name} names missing inverse {g.inverse}")

    def generator(self, name: str) -> Generator:
        for g in self.generators:
            if g.name == name:
                return g
        raise KeyError(name)

    def features(self, states) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.invariant(np.asarray(states, dtype=float)), dtype=float))


RelationWitness = FinitePartition | SymmetryGroup


def _state_in_space(space, x) -> bool:
    if isinstance(space, (Interval, RealLine, Circle)) and isinstance(x, (int, np.integer)):
        x = float(x)
    return space.contains(x)


def relation_related(w: RelationWitness, x, y) -> bool:
    if hasattr(w, "related"):
        return w.related(x, y)
    if isinstance(w, FinitePartition):
        for s in (x, y):
            if not (isinstance(s, (int, np.integer)) and 0 <= s < w.n):
                raise DomainError(f"state {s!r} outside finite space of size {w.n}")
        b = w.block_of
        return bool(b[x] == b[y])
    for s in (x, y):
        if not _state_in_space(w.space, s):
            raise DomainError(f"state {s!r} outside {w.space}")
    fx = w.features(x)
    fy = w.features(y)
    return bool(fx.shape == fy.shape and np.all(np.abs(fx - fy) <= REL_TOL))


# ---------------------------------------------------------------------------
# Statistical evidence


@dataclass(frozen=True)
class EstimateWithCI:
    mean: float
    std_err: float
    n_samples: int
    seed: int

    @classmethod
    def from_moments(cls, total: float, total_sq: float, n: int, seed: int) -> "EstimateWithCI":
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
        return cls(mean, math.sqrt(var / n), n, seed)

    @classmethod
    def exact(cls, value: float, seed: int = 0) -> "EstimateWithCI":
        return cls(float(value), 0.0, 0, seed)

    def z_against(self, other: "EstimateWithCI | float") -> float:
        if isinstance(other, EstimateWithCI):
            gap = self.mean - other.mean
            se = math.hypot(self.std_err, other.std_err)
        else:
            gap = self.mean - float(other)
            se = self.std_err
        if se == 0.0:
            return 0.0 if abs(gap) <= 1e-12 else math.inf
        return gap / se
