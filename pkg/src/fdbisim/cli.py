"""Command-line interface.

Exit codes: 0 pass, 1 refuted or failed check, 2 runtime error,
64 usage error, 65 model file error, 70 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analytic
from .core import CEMETERY, DomainError, FinitePartition, IntegerSet, RealSet
from .dsl import ModelError, ModelFile, build_relation, parse_model_file, parse_relation, parse_target
from .mc import (
    AbsorbedBM,
    BrownianMotion,
    DriftedBM,
    ForkProcess,
    HitSetBefore,
    ProcessModel,
    estimate_event,
    estimate_hitting_laplace,
    sample_paths,
)

EXIT_PASS = 0
EXIT_REFUTED = 1
EXIT_ERROR = 2
EXIT_USAGE = 64
EXIT_MODEL = 65
EXIT_INTERNAL = 70

SEED_ENV = "FDBISIM_SEED"
SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(obj: dict, out=None) -> None:
    out = out or sys.stdout
    obj = {"schema_version": SCHEMA_VERSION, **obj}
    out.write(json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (set, frozenset)):
        return sorted(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _clean(v):
    """Replace non-finite floats for strict JSON."""
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _load(path: str) -> ModelFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read model file {path!r}: {e.strerror}") from None
    return parse_model_file(text)


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _state(mf: ModelFile, text: str):
    """Parse a state: a number, or ``p,j`` for the fork process."""
    model = mf.model
    try:
        if isinstance(model, ProcessModel) and isinstance(model.kind, ForkProcess):
            p, j = text.split(",")
            st = (float(p), int(j))
        else:
            st = float(text)
    except ValueError:
        raise UsageError(f"cannot parse state {text!r}") from None
    if isinstance(model, ProcessModel) and not model.space.contains(st):
        raise DomainError(f"state {text} lies outside {model.space}")
    return st


def _process(mf: ModelFile) -> ProcessModel:
    if mf.is_lmp:
        raise UsageError("this command needs a process model, not an LMP")
    return mf.model


def _lmp(mf: ModelFile):
    if not mf.is_lmp:
        raise UsageError("this command needs an LMP model")
    return mf.model


def _grid_step(m: ProcessModel, args) -> ProcessModel:
    if getattr(args, "grid_step", None) is not None:
        m = m.with_(grid_step=args.grid_step)
    if getattr(args, "horizon", None) is not None:
        m = m.with_(horizon=args.horizon)
    return m


# ---------------------------------------------------------------------------
# Subcommands


def cmd_check(args) -> int:
    from .bisim import check_induction2_symmetry, check_initiation1, refute_maximality
    from .lmp import dt_bisim_refine, verify_dt_bisim

    mf = _load(args.model)
    if mf.is_lmp:
        part = mf.partition
        if args.relation not in (None, "model"):
            from .dsl import _parse_partition

            part = _parse_partition(args.relation, 1, 1, mf.model.n)
        if part is None:
            raise UsageError("no partition declared or given")
        init = check_initiation1(mf.model, part)
        ok = verify_dt_bisim(mf.model, part)
        greatest = dt_bisim_refine(mf.model)
        _emit({"command": "check", "model": args.model, "relation": part.as_lists(),
               "initiation1": init.passed, "dt_bisimulation": ok, "greatest": greatest.as_lists(),
               "is_greatest": ok and part == greatest, "passed": init.passed and ok})
        return EXIT_PASS if init.passed and ok else EXIT_REFUTED
    m = _grid_step(mf.model, args)
    clauses = mf.relations if args.relation in (None, "model") else tuple(parse_relation(args.relation))
    w = build_relation(m, clauses)
    seed = _seed(args)
    reports = [check_initiation1(m, w, seed=seed),
               check_induction2_symmetry(m, w, n=args.n, seed=seed, z_crit=args.zcrit),
               refute_maximality(m, w, grid_size=args.grid_size, seed=seed, z_crit=args.zcrit)]
    passed = all(r.passed for r in reports)
    _emit(_clean({"command": "check", "model": args.model, "relation": w.name, "seed": seed,
                  "reports": [r.to_dict() for r in reports], "passed": passed}))
    return EXIT_PASS if passed else EXIT_REFUTED


def cmd_distinguish(args) -> int:
    from .bisim import separate

    mf = _load(args.model)
    m = _grid_step(_process(mf), args)
    x, y = _state(mf, args.x), _state(mf, args.y)
    seed = _seed(args)
    family = {"bt": "bt", "laplace": "laplace", "word": "word", "auto": "auto"}[args.family]
    sep = separate(m, x, y, family, n=args.n, seed=seed, z_crit=args.zcrit)
    _emit(_clean({"command": "distinguish", "x": args.x, "y": args.y, "family": args.family, "seed": seed,
                  "verdict": "distinguished" if sep.separated else "indistinguishable",
                  "method": sep.method, "event": sep.detail, "gap": sep.gap}))
    return EXIT_PASS


def _fmt_value(v) -> str:
    if isinstance(v, np.ndarray):
        if np.isnan(v).any():
            return str(CEMETERY)
        return ":".join(f"{float(c):.10g}" for c in v)
    if math.isnan(v):
        return str(CEMETERY)
    return f"{float(v):.10g}"


def cmd_simulate(args) -> int:
    mf = _load(args.model)
    m = _grid_step(_process(mf), args)
    x0 = _state(mf, args.x0)
    times = np.round(np.arange(0.0, m.horizon + m.grid_step / 2, m.grid_step), 12)
    vals = sample_paths(m, x0, times, args.paths, _seed(args))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["path_id", "t", "value"])
    for i in range(args.paths):
        for t, v in zip(times, vals[i]):
            w.writerow([i, f"{t:.10g}", _fmt_value(v)])
    return EXIT_PASS


def closed_form_hit_cdf(m: ProcessModel, x0: float, target, t: float) -> float | None:
    """``P^x0(T < t)`` in closed form when one is available."""
    kind = m.kind
    if bool(target.contains(np.asarray([x0]))[0]):
        return 1.0
    if isinstance(target, RealSet) and len(target.pieces) == 1 and target.pieces[0].lo == target.pieces[0].hi:
        p = target.pieces[0].lo
        if isinstance(kind, BrownianMotion):
            return analytic.bm_hit_zero_cdf(abs(x0 - p), t)
        if isinstance(kind, DriftedBM):
            return analytic.drifted_bm_hit_zero_cdf(x0 - p, kind.a, t)
    return None


def closed_form_hit_laplace(m: ProcessModel, x0: float, target, lam: float) -> float | None:
    kind = m.kind
    if bool(target.contains(np.asarray([x0]))[0]):
        return 1.0
    if isinstance(kind, BrownianMotion) and isinstance(target, IntegerSet):
        return analytic.bm_two_barrier_laplace(x0 - math.floor(x0), lam)
    if isinstance(kind, DriftedBM) and isinstance(target, IntegerSet):
        return analytic.drifted_two_barrier_laplace(x0 - math.floor(x0), kind.a, lam)
    points = _point_target(target)
    if points is None:
        return None
    below = max((p for p in points if p < x0), default=None)
    above = min((p for p in points if p > x0), default=None)
    if isinstance(kind, AbsorbedBM):
        if len(points) == 1 and math.isfinite(kind.hi) and kind.lo < points[0] < kind.hi:
            return analytic.absorbed_bm_reach_b_laplace(x0 - kind.lo, points[0] - kind.lo, kind.hi - kind.lo, lam)
        return None
    drift = kind.a if isinstance(kind, DriftedBM) else 0.0 if isinstance(kind, BrownianMotion) else None
    if drift is None:
        return None
    if below is not None and above is not None:
        # first exit from (below, above), rescaled to the unit interval
        width = above - below
        if drift == 0.0:
            return analytic.absorbed_two_wall_laplace(x0 - below, width, lam)
        z, a = (x0 - below) / width, drift * width
        if a < 0:
            z, a = 1.0 - z, -a
        return analytic.drifted_two_barrier_laplace(z, a, lam * width * width)
    p = below if below is not None else above
    if drift == 0.0:
        return math.exp(-abs(x0 - p) * math.sqrt(2 * lam))
    return analytic.drifted_bm_one_sided_laplace(x0, p, drift, lam)


def _point_target(target) -> list[float] | None:
    if isinstance(target, RealSet) and target.pieces and all(q.lo == q.hi for q in target.pieces):
        return sorted(q.lo for q in target.pieces)
    return None


def cmd_hittime(args) -> int:
    mf = _load(args.model)
    m = _grid_step(_process(mf), args)
    x0 = _state(mf, args.x0)
    try:
        target = parse_target(args.target)
    except ModelError as e:
        raise UsageError(f"bad target: {e.message}") from None
    seed = _seed(args)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["quantity", "parameter", "closed_form", "mc_estimate", "mc_std_err", "z"])
    rows = []
    if args.lam is not None:
        for lam in args.lam:
            exact = closed_form_hit_laplace(m, x0, target, lam)
            est = estimate_hitting_laplace(m, x0, target, lam, args.n, seed)
            rows.append(("laplace", lam, exact, est))
    else:
        for t in args.t or [1.0]:
            exact = closed_form_hit_cdf(m, x0, target, t)
            est = estimate_event(m, x0, HitSetBefore(target, t), args.n, seed)
            rows.append(("cdf", t, exact, est))
    for q, par, exact, est in rows:
        z = "" if exact is None or est.std_err == 0 else f"{(est.mean - exact) / est.std_err:.4f}"
        w.writerow([q, f"{par:g}", "" if exact is None else f"{exact:.10g}", f"{est.mean:.10g}",
                    f"{est.std_err:.4g}", z])
    return EXIT_PASS


def cmd_refine(args) -> int:
    from .lmp import dt_bisim_refine

    mf = _load(args.model)
    p = dt_bisim_refine(_lmp(mf))
    _emit({"command": "refine", "model": args.model, "partition": p.as_lists(), "blocks": len(p.blocks)})
    return EXIT_PASS


def cmd_embed(args) -> int:
    from .embed import embedding_theorem_check, lift_dt_to_ct

    mf = _load(args.model)
    l = _lmp(mf)
    grid = tuple(np.arange(args.t_points) / args.t_points)
    rep = embedding_theorem_check(l, grid, max_len=args.max_len)
    lifted = lift_dt_to_ct(l, rep.dt_partition)
    _emit({"command": "embed", "model": args.model, "states": l.n,
           "space": f"{{0..{l.n - 1}}} x [0, 1)", "dt_partition": rep.dt_partition.as_lists(),
           "lifted_relation": {"time_coherent": lifted.is_time_coherent(), "partition": lifted.default.as_lists()},
           "lift_verified": rep.lift_verified, "round_trip": rep.round_trip,
           "biconditional": rep.biconditional, "maximal": rep.maximal, "t_grid": list(rep.t_grid),
           "passed": rep.passed})
    return EXIT_PASS if rep.passed else EXIT_REFUTED


def _mapping(text: str, n_source: int, n_target: int) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"cannot parse map {text!r}; expected e.g. 0,1,1") from None
    if len(vals) != n_source or any(not 0 <= v < n_target for v in vals):
        raise UsageError(f"map {text!r} must list {n_source} states below {n_target}")
    return vals


def cmd_pushout(args) -> int:
    from .cospan import FiniteHom, pushout_finite, verify_finite_hom

    e1, e2, e3 = (_lmp(_load(p)) for p in (args.m1, args.m2, args.m3))
    f = FiniteHom(e2, e1, _mapping(args.f, e2.n, e1.n), "f")
    g = FiniteHom(e2, e3, _mapping(args.g, e2.n, e3.n), "g")
    for h in (f, g):
        if not verify_finite_hom(h):
            raise DomainError(f"{h.name} is not a homomorphism")
    po = pushout_finite(f, g)
    _emit({"command": "pushout", "apex": {"states": po.apex.n, "tau": po.apex.tau.tolist(),
                                          "labels": po.apex.labels.tolist(), "aps": list(po.apex.ap_names)},
           "phi1": list(po.phi1.mapping), "phi3": list(po.phi3.mapping),
           "classes": [sorted(c) for c in po.classes]})
    return EXIT_PASS


def cmd_gallery(args) -> int:
    from .gallery import format_table, run_gallery

    seed = _seed(args)
    rep = run_gallery(seed=seed, n=args.n, include_homs=not args.no_homs)
    _emit({"command": "gallery", **{k: v for k, v in rep.items() if k != "schema_version"}})
    print(format_table(rep), file=sys.stderr)
    return EXIT_PASS if rep["passed"] else EXIT_REFUTED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdbisim", description="Bisimulation checks for Feller-Dynkin processes and finite LMPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, n=100_000):
        sp.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
        sp.add_argument("--n", type=int, default=n, help="Monte Carlo sample size")

    sp = sub.add_parser("check", help="check a declared relation")
    sp.add_argument("model")
    sp.add_argument("relation", nargs="?", default=None,
                    help="relation clauses such as 'reflect; translate 1' or a partition '{0,1}{2}'")
    common(sp)
    sp.add_argument("--zcrit", type=float, default=4.0)
    sp.add_argument("--grid-step", type=float, default=None)
    sp.add_argument("--grid-size", type=int, default=20)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("distinguish", help="look for an event separating two states")
    sp.add_argument("model")
    sp.add_argument("x")
    sp.add_argument("y")
    sp.add_argument("--family", choices=("bt", "laplace", "word", "auto"), default="auto")
    common(sp, 20_000)
    sp.add_argument("--zcrit", type=float, default=4.0)
    sp.add_argument("--grid-step", type=float, default=None)
    sp.set_defaults(func=cmd_distinguish)

    sp = sub.add_parser("simulate", help="sample trajectories as CSV")
    sp.add_argument("model")
    sp.add_argument("x0")
    sp.add_argument("--paths", type=int, default=1)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--grid-step", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("hittime", help="hitting-time law: closed form next to Monte Carlo")
    sp.add_argument("model")
    sp.add_argument("x0")
    sp.add_argument("target", help="'point 0', 'integers' or 'interval -1 1'")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--t", type=float, action="append", help="time for P(T < t); repeatable")
    grp.add_argument("--lambda", dest="lam", type=float, action="append", help="Laplace rate; repeatable")
    common(sp)
    sp.add_argument("--grid-step", type=float, default=None)
    sp.add_argument("--horizon", type=float, default=None, help="Laplace estimates ignore hits after this time")
    sp.set_defaults(func=cmd_hittime)

    sp = sub.add_parser("refine", help="greatest DT-bisimulation of an LMP")
    sp.add_argument("model")
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("embed", help="embed an LMP and check the round trip")
    sp.add_argument("model")
    sp.add_argument("--t-points", type=int, default=8)
    sp.add_argument("--max-len", type=int, default=4)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("pushout", help="pushout of E1 <-f- E2 -g-> E3")
    sp.add_argument("m1")
    sp.add_argument("m2")
    sp.add_argument("m3")
    sp.add_argument("f", help="image in E1 of each E2 state, e.g. 0,0")
    sp.add_argument("g", help="image in E3 of each E2 state")
    sp.set_defaults(func=cmd_pushout)

    sp = sub.add_parser("gallery", help="run every worked example")
    common(sp)
    sp.add_argument("--no-homs", action="store_true", help="skip the homomorphism section")
    sp.set_defaults(func=cmd_gallery)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("n", "paths", "grid_size", "t_points", "max_len"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            parser.error(f"--{name.replace('_', '-')} must be positive")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"fdbisim: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as e:
        print(f"fdbisim: {e.exit_class} error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except DomainError as e:
        print(f"fdbisim: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:  # invariant violation or bug
        print(f"fdbisim: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
