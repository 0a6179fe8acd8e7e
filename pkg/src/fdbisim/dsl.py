"""Line-oriented model files.

A file declares either a continuous process::

    process absorbed_bm lo=0 hi=2 mark=1
    horizon 10
    grid_step 0.01
    relation reflect 1

or a finite LMP::

    lmp 3
    aps P
    label 2 P
    row 0: 0.5 0.5 0
    row 1: 0 0 1
    partition {0,1}{2}

``#`` starts a comment.  The grammar is documented in docs/model_grammar.md.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    DomainError,
    FinitePartition,
    ForkObs,
    Generator,
    IntegerObs,
    IntegerSet,
    IntervalObs,
    NoObs,
    PointObs,
    RealSet,
    StateSet,
    SymmetryGroup,
)
from .lmp import FiniteLMP, LMPValidationError
from .mc import (
    AbsorbedBM,
    BrownianMotion,
    CircleBM,
    DeterministicDrift,
    DriftedBM,
    ForkProcess,
    ProcessModel,
    ReflectedBM,
)


class ModelError(DomainError):
    exit_class = "model"

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class ModelSyntaxError(ModelError):
    exit_class = "syntax"


class ModelSemanticError(ModelError):
    exit_class = "semantic"


# name -> (kind factory, allowed parameters with defaults)
PROCESS_KINDS: dict[str, tuple[Any, dict[str, float]]] = {
    "bm": (lambda p: BrownianMotion(), {}),
    "drift": (lambda p: DeterministicDrift(p["a"]), {"a": 1.0}),
    "drifted_bm": (lambda p: DriftedBM(p["a"]), {"a": 1.0}),
    "absorbed_bm": (lambda p: AbsorbedBM(p["lo"], p["hi"]), {"lo": 0.0, "hi": math.inf, "mark": math.nan}),
    "reflected_bm": (lambda p: ReflectedBM(p["lo"], p["hi"]), {"lo": 0.0, "hi": 1.0}),
    "circle_bm": (lambda p: CircleBM(p["radius"]), {"radius": 1.0 / (2 * math.pi)}),
    "fork": (lambda p: ForkProcess(p["fork_at"], p["end"]), {"fork_at": 95.0, "end": 100.0}),
}


@dataclass(frozen=True)
class RelationClause:
    name: str
    args: tuple[float, ...] = ()


@dataclass(frozen=True)
class ModelFile:
    """A parsed document: the model plus the source-level clauses needed to
    serialize it again."""

    model: Any
    process: str | None = None
    params: tuple[tuple[str, float], ...] = ()
    obs: tuple = ()
    relations: tuple[RelationClause, ...] = ()
    partition: FinitePartition | None = None

    @property
    def is_lmp(self) -> bool:
        return isinstance(self.model, FiniteLMP)

    def witness(self):
        """The declared relation as a witness (a partition for LMPs)."""
        if self.is_lmp:
            return self.partition
        return build_relation(self.model, self.relations)


_TOKEN = re.compile(r"\S+")


def _tokens(line: str) -> list[tuple[str, int]]:
    return [(m.group(0), m.start() + 1) for m in _TOKEN.finditer(line)]


def _number(tok: str, line: int, col: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ModelSyntaxError(f"expected a number, got {tok!r}", line, col) from None
    if not math.isfinite(v):
        raise ModelSemanticError(f"number {tok!r} is not finite", line, col)
    return v


def _index(tok: str, line: int, col: int, n: int | None) -> int:
    if not re.fullmatch(r"\d+", tok):
        raise ModelSyntaxError(f"expected a state index, got {tok!r}", line, col)
    i = int(tok)
    if n is not None and i >= n:
        raise ModelSemanticError(f"state {i} does not exist (the LMP has {n} states)", line, col)
    return i


def _parse_obs(toks: list[tuple[str, int]], ln: int) -> tuple:
    """``obs`` arguments as a clause tuple ``(kind, *numbers)``."""
    if not toks:
        raise ModelSyntaxError("obs needs a kind: none, point, integers or interval", ln, 1)
    kind, col = toks[0]
    rest = toks[1:]
    if kind == "none" or kind == "integers":
        if rest:
            raise ModelSyntaxError(f"obs {kind} takes no arguments", ln, rest[0][1])
        return (kind,)
    if kind == "point":
        if not rest:
            raise ModelSyntaxError("obs point needs at least one point", ln, col)
        return ("point", *(_number(t, ln, c) for t, c in rest))
    if kind == "interval":
        if len(rest) != 2:
            raise ModelSyntaxError("obs interval needs exactly two bounds", ln, col)
        lo, hi = (_number(t, ln, c) for t, c in rest)
        if lo > hi:
            raise ModelSemanticError(f"interval bounds out of order: {lo:g} > {hi:g}", ln, rest[0][1])
        return ("interval", lo, hi)
    raise ModelSyntaxError(f"unknown obs kind {kind!r}", ln, col)


def obs_from_clause(clause: tuple):
    kind = clause[0]
    if kind == "none":
        return NoObs()
    if kind == "integers":
        return IntegerObs()
    if kind == "point":
        return PointObs(tuple(sorted(clause[1:])))
    return IntervalObs(clause[1], clause[2])


def target_from_clause(clause: tuple) -> StateSet:
    """The distinguished set of an obs clause, used as a hitting target."""
    kind = clause[0]
    if kind == "integers":
        return IntegerSet()
    if kind == "point":
        return RealSet.points(*clause[1:])
    if kind == "interval":
        return RealSet.interval(clause[1], clause[2])
    raise DomainError("obs none has no distinguished set")


def parse_target(text: str) -> StateSet:
    return target_from_clause(_parse_obs(_tokens(text), 1))


_RELATIONS = {"identity": 0, "reflect": (0, 1), "translate": 1, "positive": 0}


def _parse_relation(toks, ln) -> RelationClause:
    if not toks:
        raise ModelSyntaxError("relation needs a name", ln, 1)
    name, col = toks[0]
    if name not in _RELATIONS:
        raise ModelSyntaxError(f"unknown relation {name!r}", ln, col)
    args = tuple(_number(t, ln, c) for t, c in toks[1:])
    allowed = _RELATIONS[name]
    counts = allowed if isinstance(allowed, tuple) else (allowed,)
    if len(args) not in counts:
        raise ModelSyntaxError(f"relation {name} takes {' or '.join(map(str, counts))} argument(s)", ln, col)
    if name == "translate" and args[0] <= 0:
        raise ModelSemanticError("translation period must be positive", ln, toks[1][1])
    return RelationClause(name, args)


def _parse_partition(rest: str, ln: int, offset: int, n: int) -> FinitePartition:
    pos = 0
    blocks = []
    text = rest.rstrip()
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = re.match(r"\{([^{}]*)\}", text[pos:])
        if not m:
            raise ModelSyntaxError("expected a block like {0,1}", ln, offset + pos)
        items = [s.strip() for s in m.group(1).split(",") if s.strip()]
        if not items:
            raise ModelSyntaxError("empty block", ln, offset + pos)
        blocks.append([_index(s, ln, offset + pos, n) for s in items])
        pos += m.end()
    seen = [i for b in blocks for i in b]
    if sorted(seen) != list(range(n)):
        raise ModelSemanticError("partition blocks must cover every state exactly once", ln, offset)
    return FinitePartition.from_blocks(n, blocks)


def parse_model_file(text: str) -> ModelFile:
    lines = text.splitlines()
    header = None
    header_ln = 1
    process = None
    params: dict[str, float] = {}
    obs: tuple | None = None
    obs_line = 0
    relations: list[RelationClause] = []
    settings: dict[str, float] = {}
    n = None
    rows: dict[int, tuple[list[float], int]] = {}
    labels: dict[int, list[str]] = {}
    aps: list[str] | None = None
    partition_src = None
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens(line)
        if not toks:
            continue
        word, col = toks[0]
        if header is None:
            if word == "process":
                header = "process"
                header_ln = ln
                if len(toks) < 2:
                    raise ModelSyntaxError("process needs a kind", ln, col)
                process, pcol = toks[1]
                if process not in PROCESS_KINDS:
                    raise ModelSyntaxError(f"unknown process kind {process!r}", ln, pcol)
                allowed = PROCESS_KINDS[process][1]
                for tok, c in toks[2:]:
                    if "=" not in tok:
                        raise ModelSyntaxError(f"expected key=value, got {tok!r}", ln, c)
                    key, val = tok.split("=", 1)
                    if key not in allowed:
                        raise ModelSyntaxError(f"unknown parameter {key!r} for {process}", ln, c)
                    if key in params:
                        raise ModelSyntaxError(f"parameter {key!r} given twice", ln, c)
                    params[key] = _number(val, ln, c + len(key) + 1)
                continue
            if word == "lmp":
                header = "lmp"
                header_ln = ln
                if len(toks) != 2:
                    raise ModelSyntaxError("lmp takes the number of states", ln, col)
                n = _index(toks[1][0], ln, toks[1][1], None)
                if n < 1:
                    raise ModelSemanticError("an LMP needs at least one state", ln, toks[1][1])
                continue
            raise ModelSyntaxError(f"expected 'process' or 'lmp', got {word!r}", ln, col)
        if word in ("process", "lmp"):
            raise ModelSyntaxError("a file declares exactly one model", ln, col)
        if header == "process":
            if word == "obs":
                if obs is not None:
                    raise ModelSyntaxError("obs given twice", ln, col)
                obs = _parse_obs(toks[1:], ln)
                obs_line = ln
            elif word in ("horizon", "grid_step"):
                if len(toks) != 2:
                    raise ModelSyntaxError(f"{word} takes one number", ln, col)
                if word in settings:
                    raise ModelSyntaxError(f"{word} given twice", ln, col)
                settings[word] = _number(toks[1][0], ln, toks[1][1])
            elif word == "relation":
                relations.append(_parse_relation(toks[1:], ln))
            else:
                raise ModelSyntaxError(f"unknown keyword {word!r} in a process file", ln, col)
            continue
        # LMP body
        if word == "row":
            m = re.match(r"\s*row\s+(\d+)\s*:(.*)$", line)
            if not m:
                raise ModelSyntaxError("expected 'row <i>: <masses>'", ln, col)
            i = _index(m.group(1), ln, line.index(m.group(1)) + 1, n)
            if i in rows:
                raise ModelSyntaxError(f"row {i} given twice", ln, col)
            start = m.start(2)
            vals = [_number(t, ln, start + c) for t, c in _tokens(m.group(2))]
            if len(vals) != n:
                raise ModelSemanticError(f"row {i} has {len(vals)} entries, expected {n}", ln, col)
            if any(v < 0 for v in vals):
                raise ModelSemanticError(f"row {i} has a negative mass", ln, col)
            total = math.fsum(vals)
            if total > 1 + 1e-12:
                raise ModelSemanticError(f"row mass {total:g} > 1", ln, col)
            rows[i] = (vals, ln)
        elif word == "label":
            if len(toks) < 3:
                raise ModelSyntaxError("expected 'label <state> <prop>...'", ln, col)
            i = _index(toks[1][0], ln, toks[1][1], n)
            for tok, c in toks[2:]:
                if not re.fullmatch(r"[A-Za-z_]\w*", tok):
                    raise ModelSyntaxError(f"bad proposition name {tok!r}", ln, c)
                if aps is not None and tok not in aps:
                    raise ModelSemanticError(f"proposition {tok!r} is not declared in aps", ln, c)
                labels.setdefault(i, []).append(tok)
        elif word == "aps":
            if aps is not None or labels:
                raise ModelSyntaxError("aps must come once, before any label", ln, col)
            aps = []
            for tok, c in toks[1:]:
                if not re.fullmatch(r"[A-Za-z_]\w*", tok):
                    raise ModelSyntaxError(f"bad proposition name {tok!r}", ln, c)
                aps.append(tok)
        elif word == "partition":
            if partition_src is not None:
                raise ModelSyntaxError("partition given twice", ln, col)
            partition_src = (line[col - 1 + len("partition"):], ln, col + len("partition"))
        else:
            raise ModelSyntaxError(f"unknown keyword {word!r} in an LMP file", ln, col)

    if header is None:
        raise ModelSyntaxError("empty model file", max(len(lines), 1), 1)
    if header == "process":
        defaults = dict(PROCESS_KINDS[process][1])
        defaults.update(params)
        mark = defaults.pop("mark", math.nan) if process == "absorbed_bm" else math.nan
        try:
            kind = PROCESS_KINDS[process][0](defaults)
        except DomainError as e:
            raise ModelSemanticError(str(e), header_ln, 1) from None
        if process == "fork":
            if obs is not None:
                raise ModelSemanticError("the fork process has fixed observations", obs_line, 1)
            obs_map = ForkObs(kind.end)
        else:
            if not math.isnan(mark):
                if obs is not None and obs != ("point", mark):
                    raise ModelSemanticError("obs conflicts with the mark parameter", obs_line, 1)
                obs = ("point", mark)
            obs_map = obs_from_clause(obs or ("none",))
        if isinstance(kind, AbsorbedBM) and not kind.lo < kind.hi:
            raise ModelSemanticError("absorbed_bm needs lo < hi", header_ln, 1)
        if isinstance(kind, ReflectedBM) and not kind.lo < kind.hi:
            raise ModelSemanticError("reflected_bm needs lo < hi", header_ln, 1)
        if isinstance(kind, CircleBM) and not kind.radius > 0:
            raise ModelSemanticError("circle_bm needs a positive radius", header_ln, 1)
        try:
            model = ProcessModel(kind, obs_map, settings.get("horizon", 10.0), settings.get("grid_step", 1e-3))
        except DomainError as e:
            raise ModelSemanticError(str(e), header_ln, 1) from None
        mf = ModelFile(model, process, tuple(sorted(params.items())), obs or (), tuple(relations))
        try:
            mf.witness()
        except DomainError as e:
            raise ModelSemanticError(str(e), header_ln, 1) from None
        return mf
    missing = [i for i in range(n) if i not in rows]
    if missing:
        raise ModelSemanticError(f"missing row {missing[0]}", max(len(lines), 1), 1)
    if aps is None:
        aps = []
        for i in sorted(labels):
            for a in labels[i]:
                if a not in aps:
                    aps.append(a)
    lab = np.zeros((n, len(aps)), dtype=bool)
    for i, names in labels.items():
        for a in names:
            lab[i, aps.index(a)] = True
    tau = np.array([rows[i][0] for i in range(n)], dtype=float)
    try:
        lmp = FiniteLMP(tau, lab, tuple(aps))
    except LMPValidationError as e:
        raise ModelSemanticError(str(e), header_ln, 1) from None
    part = None
    if partition_src is not None:
        src, ln, c = partition_src
        part = _parse_partition(src, ln, c, n)
    return ModelFile(lmp, partition=part)


def parse_model(text: str):
    """The model (a ProcessModel or FiniteLMP) declared by ``text``."""
    return parse_model_file(text).model


def _num(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v)) if abs(v) < 1e15 else repr(float(v))


def dump_model(mf: ModelFile) -> str:
    out = []
    if mf.is_lmp:
        l = mf.model
        out.append(f"lmp {l.n}")
        if l.ap_names:
            out.append("aps " + " ".join(l.ap_names))
        for i in range(l.n):
            names = [a for a, b in zip(l.ap_names, l.labels[i]) if b]
            if names:
                out.append(f"label {i} " + " ".join(names))
        for i in range(l.n):
            out.append(f"row {i}: " + " ".join(_num(v) for v in l.tau[i]))
        if mf.partition is not None:
            out.append("partition " + "".join("{" + ",".join(map(str, b)) + "}" for b in mf.partition.as_lists()))
        return "\n".join(out) + "\n"
    head = f"process {mf.process}"
    if mf.params:
        head += " " + " ".join(f"{k}={_num(v)}" for k, v in mf.params)
    out.append(head)
    mark_given = any(k == "mark" for k, _ in mf.params)
    if mf.obs and not mark_given:
        out.append("obs " + " ".join([mf.obs[0], *(_num(v) for v in mf.obs[1:])]))
    out.append(f"horizon {_num(mf.model.horizon)}")
    out.append(f"grid_step {_num(mf.model.grid_step)}")
    for r in mf.relations:
        out.append(" ".join(["relation", r.name, *(_num(v) for v in r.args)]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Relations declared in process files


def build_relation(model: ProcessModel, clauses) -> SymmetryGroup:
    """Symmetry group of the declared clauses.

    ``reflect c`` maps ``x`` to ``2c - x``; ``translate p`` shifts by ``p``;
    ``positive`` merges all positive states (for deterministic drift);
    ``identity`` adds nothing.  Reflection and translation may be combined.
    """
    names = [c.name for c in clauses if c.name != "identity"]
    for nm in set(names):
        if names.count(nm) > 1:
            raise DomainError(f"relation {nm} declared twice")
    by = {c.name: c for c in clauses}
    gens: list[Generator] = []
    space = model.space
    if "positive" in by:
        if len(names) > 1:
            raise DomainError("relation positive cannot be combined")
        gens = [
            Generator("double>0", lambda x: np.where(np.asarray(x) > 0, 2.0 * np.asarray(x, dtype=float), x), "halve>0"),
            Generator("halve>0", lambda x: np.where(np.asarray(x) > 0, 0.5 * np.asarray(x, dtype=float), x), "double>0"),
        ]
        return SymmetryGroup(space, tuple(gens), lambda x: np.where(np.asarray(x) > 0, 1.0, np.asarray(x, dtype=float)),
                             "positive states merged")
    centre = by["reflect"].args[0] if "reflect" in by and by["reflect"].args else 0.0
    period = by["translate"].args[0] if "translate" in by else None
    if "reflect" in by:
        gens.append(Generator(f"mirror@{centre:g}", lambda x: 2.0 * centre - np.asarray(x, dtype=float)))
    if period is not None:
        gens.append(Generator(f"shift+{period:g}", lambda x: np.asarray(x, dtype=float) + period, f"shift-{period:g}"))
        gens.append(Generator(f"shift-{period:g}", lambda x: np.asarray(x, dtype=float) - period, f"shift+{period:g}"))

    def residue(x):
        return np.mod(np.asarray(x, dtype=float) - centre, period)

    if "reflect" in by and period is not None:
        inv = lambda x: np.minimum(residue(x), period - residue(x))  # noqa: E731
        name = f"reflect {centre:g} and translate {period:g}"
    elif "reflect" in by:
        inv = lambda x: np.abs(np.asarray(x, dtype=float) - centre)  # noqa: E731
        name = f"reflect {centre:g}"
    elif period is not None:
        inv = residue
        name = f"translate {period:g}"
    else:
        inv = lambda x: np.asarray(x, dtype=float)  # noqa: E731
        name = "identity"
    return SymmetryGroup(space, tuple(gens), inv, name)


def parse_relation(text: str) -> list[RelationClause]:
    """Relation clauses separated by ``;``, e.g. ``"reflect; translate 1"``."""
    out = []
    for part in text.split(";"):
        toks = _tokens(part)
        if toks:
            out.append(_parse_relation(toks, 1))
    return out
