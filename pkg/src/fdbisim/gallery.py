"""Worked examples with their greatest bisimulations, run end to end.

Every continuous example is checked three ways: observations agree on
related states, the generating symmetries pass their certificate, and a
20 x 20 grid of unrelated pairs is separated.  The fork, the naive
one-time definition, the finite LMP constructions and the homomorphism
square each get their own section.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bisim import (
    PairRelation,
    _json_float,
    check_induction1,
    check_induction2_symmetry,
    check_initiation1,
    refute_maximality,
    refute_relation,
)
from .core import (
    ForkObs,
    ForkSpace,
    FiniteStateSet,
    Generator,
    IntegerObs,
    IntervalObs,
    NoObs,
    PointObs,
    RealSet,
    SymmetryGroup,
)
from .mc import (
    AbsorbedBM,
    BrownianMotion,
    DeterministicDrift,
    DriftedBM,
    ForkProcess,
    Indistinguishable,
    ObsWordEquals,
    ProcessModel,
    distinguish,
    estimate_event,
)

SCHEMA_VERSION = 1
DRIFT = 1.0
B = 1.0

_negate = Generator("negate", lambda x: -np.asarray(x, dtype=float))
_shift_up = Generator("shift+1", lambda x: np.asarray(x, dtype=float) + 1.0, "shift-1")
_shift_down = Generator("shift-1", lambda x: np.asarray(x, dtype=float) - 1.0, "shift+1")


def _mirror(c: float) -> Generator:
    return Generator(f"mirror@{c:g}", lambda x: 2.0 * c - np.asarray(x, dtype=float))


def _frac(x):
    x = np.asarray(x, dtype=float)
    return x - np.floor(x)


def _dist_to_integer(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


def _positive_collapse(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, x)


_double_pos = Generator("double>0", lambda x: np.where(np.asarray(x) > 0, 2.0 * np.asarray(x, dtype=float), x), "halve>0")
_halve_pos = Generator("halve>0", lambda x: np.where(np.asarray(x) > 0, 0.5 * np.asarray(x, dtype=float), x), "double>0")


@dataclass(frozen=True)
class Example:
    key: str
    claim: str
    model: ProcessModel
    witness: SymmetryGroup
    # Map producing the closest unrelated partner of a state (mirror images
    # that a broken symmetry would relate), tested on top of the grid.
    near_miss: Callable | None = None


def _sym(model: ProcessModel, gens, invariant: Callable, name: str) -> SymmetryGroup:
    return SymmetryGroup(model.space, tuple(gens), invariant, name)


def continuous_examples() -> list[Example]:
    out = []

    def add(key, claim, kind, obs, gens, inv, rel, grid_step=1e-3, near_miss=None):
        m = ProcessModel(kind, obs, grid_step=grid_step)
        out.append(Example(key, claim, m, _sym(m, gens, inv, rel), near_miss))

    ident = lambda x: np.asarray(x, dtype=float)  # noqa: E731
    add("drift/zero", "x~y iff x=y or both positive", DeterministicDrift(DRIFT), PointObs((0.0,)),
        (_double_pos, _halve_pos), _positive_collapse, "positive states merged")
    add("drift/integers", "x~y iff x-y is an integer", DeterministicDrift(DRIFT), IntegerObs(),
        (_shift_up, _shift_down), _frac, "equal fractional part")
    add("bm/zero", "x~y iff |x|=|y|", BrownianMotion(), PointObs((0.0,)), (_negate,), np.abs, "|x|=|y|")
    add("bm/integers", "x~y iff equal distance to the nearest integer", BrownianMotion(), IntegerObs(),
        (_negate, _shift_up, _shift_down), _dist_to_integer, "equal distance to Z")
    add("bm/interval", "x~y iff |x|=|y|", BrownianMotion(), IntervalObs(-1.0, 1.0), (_negate,), np.abs, "|x|=|y|")
    add("drifted/zero", "x~y iff x=y", DriftedBM(DRIFT), PointObs((0.0,)), (), ident, "equality",
        near_miss=lambda x: -x)
    add("drifted/integers", "x~y iff x-y is an integer", DriftedBM(DRIFT), IntegerObs(),
        (_shift_up, _shift_down), _frac, "equal fractional part",
        near_miss=lambda x: np.ceil(x) - (x - np.floor(x)))
    add("drifted/interval", "x~y iff x=y", DriftedBM(DRIFT), IntervalObs(-1.0, 1.0), (), ident, "equality",
        near_miss=lambda x: -x)
    add("absorbed/0", "x~y iff x=y", AbsorbedBM(0.0), NoObs(), (), ident, "equality", grid_step=1e-2)
    add("absorbed/0-b", "x~y iff x=y or x=b-y", AbsorbedBM(0.0, B), NoObs(), (_mirror(B / 2),),
        lambda x: np.minimum(x, B - np.asarray(x)), "x=y or x=b-y", grid_step=1e-2)
    add("absorbed/0-2b-mark-b", "x~y iff x=y or x=2b-y", AbsorbedBM(0.0, 2 * B), PointObs((B,)), (_mirror(B),),
        lambda x: np.minimum(x, 2 * B - np.asarray(x)), "x=y or x=2b-y", grid_step=1e-2)
    add("absorbed/0-4b-mark-b", "x~y iff x=y", AbsorbedBM(0.0, 4 * B), PointObs((B,)), (), ident, "equality",
        grid_step=1e-2, near_miss=lambda x: 4 * B - x)
    return out


def naive_witness(space) -> SymmetryGroup:
    """Nonzero states merged, zero alone: the relation that only compares
    one-time kernels."""
    return SymmetryGroup(space, (_negate, Generator("double", lambda x: 2.0 * np.asarray(x, dtype=float), "halve"),
                                 Generator("halve", lambda x: 0.5 * np.asarray(x, dtype=float), "double")),
                         lambda x: (np.asarray(x, dtype=float) != 0).astype(float), "nonzero states merged")


def naive_sets() -> list[RealSet]:
    zero = RealSet.points(0.0)
    return [RealSet(()), zero, zero.complement(), RealSet.everything()]


FORK_STATES = {"x0": (0.0, 1), "y0": (0.0, 4), "x1": (95.0, 2), "x2": (95.0, 3), "y1": (95.0, 4)}


# ---------------------------------------------------------------------------


def run_continuous(ex: Example, *, n: int, seed: int, grid_size: int = 20) -> dict:
    init = check_initiation1(ex.model, ex.witness, samples=100, seed=seed)
    ind = check_induction2_symmetry(ex.model, ex.witness, n=n, seed=seed)
    maxi = refute_maximality(ex.model, ex.witness, grid_size=grid_size, seed=seed)
    cov = maxi.summary["coverage"]
    near = None
    if ex.near_miss is not None:
        xs = [float(x) for x in np.linspace(*ex.model.window(), grid_size + 2)[1:-1]]
        pairs = [(x, float(ex.near_miss(x))) for x in xs]
        pairs = [(x, y) for x, y in pairs if x != y and ex.model.space.contains(y)]
        near = refute_maximality(ex.model, ex.witness, pairs=pairs, seed=seed)
    return {
        "key": ex.key,
        "claim": ex.claim,
        "relation": ex.witness.name,
        "initiation1": init.passed,
        "induction2": ind.passed,
        "certificate": ind.summary.get("certificate"),
        "max_z": ind.summary.get("max_z"),
        "pairs": maxi.summary["pairs"],
        "separated": maxi.summary["separated"],
        "coverage": cov,
        "methods": maxi.summary["methods"],
        "near_miss_separated": None if near is None else f"{near.summary['separated']}/{near.summary['pairs']}",
        "passed": bool(init.passed and ind.passed and cov >= 0.99 and (near is None or near.passed)),
    }


def run_drift_without_symmetry(*, n: int, seed: int) -> dict:
    """Reflection is not a symmetry once drift is added."""
    m = ProcessModel(DriftedBM(DRIFT), PointObs((0.0,)))
    w = SymmetryGroup(m.space, (_negate,), np.abs, "|x|=|y|")
    rep = check_induction2_symmetry(m, w, n=n, seed=seed)
    return {"key": "drifted/reflection-broken", "claim": "reflection fails the symmetry certificate under drift",
            "max_z": rep.summary["max_z"], "passed": not rep.passed}


def run_fork(*, seed: int) -> dict:
    m = ProcessModel(ForkProcess(), ForkObs(), horizon=200.0, grid_step=1.0)
    s = FORK_STATES
    end_p = ObsWordEquals((5.0,), ((True, False),))
    probs = {k: estimate_event(m, s[k], end_p, 100, seed).mean for k in ("x1", "x2", "y1")}
    exact_ok = probs == {"x1": 1.0, "x2": 0.0, "y1": 0.5}
    words = []
    times = (0.0, 50.0, 95.0, 99.0, 100.0, 150.0)
    values = [(False, False), (True, False), (False, True)]
    for t in times:
        for v in values:
            words.append(ObsWordEquals((t,), (v,)))
    for t1, t2 in ((50.0, 100.0), (99.0, 100.0), (100.0, 150.0)):
        for v in values:
            words.append(ObsWordEquals((t1, t2), ((False, False), v)))
    verdict = distinguish(m, s["x0"], s["y0"], words, 100, seed)
    same_traces = isinstance(verdict, Indistinguishable)
    w = PairRelation(ForkSpace(), ((s["x0"], s["y0"]),))
    kern = check_induction1(m, w, (95.0,), [FiniteStateSet(frozenset({s["x1"]}))], pairs=[(s["x0"], s["y0"])], seed=seed)
    rec = kern.records[0]
    return {
        "key": "fork",
        "claim": "x0 and y0 share all observation words yet are not bisimilar",
        "end_P_probabilities": probs,
        "exact_separations": exact_ok,
        "word_events": len(words),
        "words_indistinguishable": same_traces,
        "kernel_check": rec.detail,
        "kernel_separates": not kern.passed,
        "passed": bool(exact_ok and same_traces and not kern.passed),
    }


def run_naive(*, seed: int, t_grid=(0.25, 0.5, 1.0, 2.0)) -> dict:
    m = ProcessModel(BrownianMotion(), PointObs((0.0,)))
    w = naive_witness(m.space)
    init = check_initiation1(m, w, samples=100, seed=seed)
    ind1 = check_induction1(m, w, t_grid, naive_sets(), seed=seed)
    xs = np.linspace(-2.9, 2.9, 20)
    pairs = [(float(x), float(y)) for x in xs for y in xs + 0.05 if x != 0 and y != 0 and abs(abs(x) - abs(y)) > 1e-9]
    rel = refute_relation(m, w, "auto", pairs=pairs, seed=seed)
    return {
        "key": "naive",
        "claim": "one-time kernel conditions hold for a relation that trajectories refute",
        "initiation1": init.passed,
        "induction1": ind1.passed,
        "related_pairs_tested": rel.summary["pairs"],
        "related_pairs_separated": rel.summary["separated"],
        "refuted": not rel.passed,
        "passed": bool(init.passed and ind1.passed and not rel.passed),
    }


def run_finite(*, seed: int) -> list[dict]:
    from .cospan import bisimilar_across, check_universal_property, curated_pushout_example, curated_targets, pushout_finite
    from .embed import embedding_theorem_check
    from .lmp import brute_force_greatest_bisim, dt_bisim_refine, lmp_from_rows

    chain = lmp_from_rows([[0, 0.5, 0.5, 0], [0, 0, 0, 1], [0, 0, 0, 1], [0, 0, 0, 1]], {3: ["P"]}, ("P",))
    part = dt_bisim_refine(chain)
    out = [{"key": "lmp/refine", "claim": "refinement equals the exhaustive oracle",
            "partition": part.as_lists(), "passed": part == brute_force_greatest_bisim(chain)}]
    rep = embedding_theorem_check(chain)
    out.append({"key": "embed/round-trip", "claim": "lift, verify, project and biconditional on the embedding",
                "lift_verified": rep.lift_verified, "round_trip": rep.round_trip, "biconditional": rep.biconditional,
                "maximal": rep.maximal, "passed": rep.passed})
    f, g = curated_pushout_example()
    po = pushout_finite(f, g)
    commutes = all(po.phi1.mapping[f.mapping[i]] == po.phi3.mapping[g.mapping[i]] for i in range(f.source.n))
    uni = check_universal_property(f, g, po, curated_targets(po))
    out.append({"key": "pushout/curated", "claim": "square commutes and the universal property holds",
                "classes": [sorted(c) for c in po.classes], "commutes": commutes, "targets": uni.targets,
                "cocones": uni.cocones, "failures": list(uni.failures), "passed": commutes and not uni.failures})
    rel, cs = bisimilar_across(chain, chain)
    out.append({"key": "cospan/self", "claim": "bisimulation as a cospan of homomorphisms",
                "apex_states": cs.apex.n, "passed": cs.iff_cross and cs.iff_left and cs.iff_right})
    return out


def run_homs(*, n: int, seed: int) -> list[dict]:
    from .cospan import broken_halving_hom, builtin_homs, verify_hom

    out = []
    homs = list(builtin_homs().values()) + [broken_halving_hom()]
    for h in homs:
        lo, hi = h.source.window()
        lo, hi = (max(lo, -3.0), min(hi, 3.0))
        grid = np.linspace(lo, hi, 61)
        grid = grid[[h.source.space.contains(float(x)) for x in grid]]
        states = [float(x) for x in lo + (hi - lo) * np.array([0.2, 0.55, 0.9])]
        rep = verify_hom(h, grid, (0.25, 0.5, 1.0), n, seed, marginal_states=states)
        expect = h.name != "halving"
        out.append({"key": f"hom/{h.name}", "claim": "homomorphism" if expect else "not a homomorphism",
                    "obs_commutes": rep.obs_commutes, "max_z": _json_float(rep.max_z),
                    "passed": rep.passed == expect})
    return out


def run_gallery(*, seed: int = 0, n: int = 100_000, grid_size: int = 20, include_homs: bool = True) -> dict:
    entries = [run_continuous(ex, n=n, seed=seed, grid_size=grid_size) for ex in continuous_examples()]
    entries.append(run_drift_without_symmetry(n=n, seed=seed))
    entries.append(run_fork(seed=seed))
    entries.append(run_naive(seed=seed))
    entries += run_finite(seed=seed)
    if include_homs:
        entries += run_homs(n=n, seed=seed)
    entries.sort(key=lambda e: e["key"])
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "n": n,
        "entries": entries,
        "passed": all(e["passed"] for e in entries),
    }


def format_table(report: dict) -> str:
    rows = [("example", "result", "detail")]
    for e in report["entries"]:
        if "coverage" in e:
            detail = f"cert={e['certificate']} separated {e['separated']}/{e['pairs']}"
        elif "max_z" in e:
            detail = f"max z={e['max_z']}"
        else:
            detail = e["claim"]
        rows.append((e["key"], "PASS" if e["passed"] else "FAIL", detail))
    width = [max(len(r[i]) for r in rows) for i in range(2)]
    return "\n".join(f"{r[0]:<{width[0]}}  {r[1]:<{width[1]}}  {r[2]}" for r in rows)
