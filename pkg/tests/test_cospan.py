from __future__ import annotations

import math

import numpy as np
import pytest

from fdbisim.bisim import check_initiation1
from fdbisim.core import FinitePartition, relation_related
from fdbisim.cospan import (
    ConstructionError,
    FiniteHom,
    angle_to_half_interval,
    bisimilar_across,
    broken_halving_hom,
    builtin_homs,
    check_universal_property,
    cospan_from_bisim,
    curated_pushout_example,
    curated_targets,
    fold_half,
    hom_kernel_bisim,
    homs_between,
    is_finite_hom,
    pushout_finite,
    signed_angle_to_nearest_integer,
    small_lmps,
    triangle_wave,
    verify_hom,
)
from fdbisim.lmp import dt_bisim_refine, lmp_from_rows, random_lmp, union_lmp

HOMS = builtin_homs()
GRID = np.linspace(-3.0, 3.0, 10_001)


# -- the maps -------------------------------------------------------------


def test_map_spot_values():
    assert fold_half(0.75) == 0.25
    assert fold_half(0.5) == 0.5
    assert abs(signed_angle_to_nearest_integer(0.5)) == pytest.approx(math.pi)
    assert signed_angle_to_nearest_integer(0.25) == pytest.approx(math.pi / 2)
    assert triangle_wave(1.25) == pytest.approx(0.75)
    assert angle_to_half_interval(math.pi / 2) == pytest.approx(0.25)


def test_half_integer_tie_goes_to_lower_integer():
    # 0.5 is equidistant from 0 and 1; the lower integer gives +pi rather than -pi
    assert signed_angle_to_nearest_integer(0.5) == pytest.approx(math.pi)
    assert signed_angle_to_nearest_integer(2.5) == pytest.approx(math.pi)


def test_both_composites_agree_on_a_fine_grid():
    a = HOMS["phi2∘phi4"].map(GRID)
    b = HOMS["phi1∘phi3"].map(GRID)
    assert np.max(np.abs(a - b)) <= 1e-12
    assert np.max(np.abs(a - np.abs(GRID - np.round(GRID)))) <= 1e-12


@pytest.mark.parametrize("name", ["phi1", "phi2", "phi3", "phi4"])
def test_observations_commute_exactly(name):
    h = HOMS[name]
    lo, hi = h.source.window()
    grid = np.linspace(lo, hi, 2001)
    grid = grid[[h.source.space.contains(float(x)) for x in grid]]
    grid = np.concatenate([grid, [x for x in (0.0, 1.0, 0.5, -1.0, 2.0) if h.source.space.contains(x)]])
    rep = verify_hom(h, grid, (0.5,), 1000, seed=0, marginal_states=[])
    assert rep.obs_commutes, rep.obs_failures


def test_phi2_pushes_reflected_law_forward():
    rep = verify_hom(HOMS["phi2"], [0.2, 0.75], (0.25, 0.5, 1.0), 20_000, seed=1)
    assert rep.passed


def test_identity_hom_passes():
    from fdbisim.cospan import FDHom

    h = HOMS["phi4"]
    ident = FDHom(h.source, h.source, lambda x: np.asarray(x, dtype=float), "id")
    assert verify_hom(ident, [0.3, 1.7], (0.5, 1.0), 10_000, seed=2).passed


def test_halving_fails():
    rep = verify_hom(broken_halving_hom(), [0.0, 1.0], (0.25, 0.5, 1.0), 20_000, seed=3)
    assert rep.obs_commutes and not rep.passed


# -- kernels --------------------------------------------------------------


def test_kernel_of_phi4_is_distance_to_integers():
    w = hom_kernel_bisim(HOMS["phi4"])
    assert relation_related(w, 0.25, 1.75)
    assert relation_related(w, 0.25, -0.25)
    assert not relation_related(w, 0.25, 0.5)


def test_kernels_of_phi3_and_phi4_induce_the_same_partition():
    # phi3 and phi4 land in different spaces, so their level sets are matched
    # up on the grid instead of their values
    k3 = np.round(np.abs(HOMS["phi3"].map(GRID)), 9)
    k4 = np.round(np.minimum(HOMS["phi4"].map(GRID), 1 - HOMS["phi4"].map(GRID)), 9)
    _, inv3 = np.unique(k3, return_inverse=True)
    _, inv4 = np.unique(k4, return_inverse=True)
    pairs3 = {(a, b) for a, b in zip(inv3, inv4)}
    assert len({a for a, _ in pairs3}) == len(pairs3) == len({b for _, b in pairs3})


def test_kernel_witness_passes_initiation():
    h = HOMS["phi4"]
    assert check_initiation1(h.source, hom_kernel_bisim(h), samples=100).passed


# -- finite homomorphisms and pushouts ------------------------------------


def test_finite_hom_check():
    two = lmp_from_rows([[0.5, 0.5], [0.5, 0.5]])
    one = lmp_from_rows([[1.0]])
    assert is_finite_hom(two, one, (0, 0))
    assert not is_finite_hom(one, two, (0,))
    assert homs_between(two, one) == [(0, 0)]


def test_curated_pushout():
    f, g = curated_pushout_example()
    po = pushout_finite(f, g)
    assert po.apex.n == 3
    for z in range(f.source.n):
        assert po.phi1(f(z)) == po.phi3(g(z))
    rep = check_universal_property(f, g, po, curated_targets(po))
    assert rep.passed and rep.cocones > 0


def test_pushout_of_identity_legs_is_the_source():
    l = lmp_from_rows([[0.25, 0.75], [0.5, 0.0]], {0: ["P"]}, ("P",))
    ident = FiniteHom(l, l, (0, 1), "id")
    po = pushout_finite(ident, ident)
    assert po.apex == l


def test_pushout_rejects_non_homomorphic_legs():
    l = lmp_from_rows([[1.0, 0.0], [0.0, 0.5]])
    src = lmp_from_rows([[1.0]])
    with pytest.raises(ConstructionError):
        pushout_finite(FiniteHom(src, l, (1,), "f"), FiniteHom(src, l, (0,), "g"))


def test_universal_property_over_small_lmps():
    f, g = curated_pushout_example()
    po = pushout_finite(f, g)
    labels = [(True, False), (False, False), (False, True)]
    targets = small_lmps(labels, po.apex.ap_names, max_states=3)
    rep = check_universal_property(f, g, po, targets)
    assert rep.passed and rep.cocones > 0


# -- cospans --------------------------------------------------------------


def test_cospan_for_copies_of_one_lmp():
    l = lmp_from_rows([[0.25, 0.75], [0.5, 0.0]], {0: ["P"]}, ("P",))
    w = FinitePartition.from_blocks(4, [[0, 2], [1, 3]])
    res = cospan_from_bisim(l, l, w)
    assert res.passed and res.f.mapping == res.g.mapping


def test_cospan_for_swap_symmetry():
    l = lmp_from_rows([[0.0, 1.0], [1.0, 0.0]])
    w, res = bisimilar_across(l, l)
    assert res.apex.n == 1 and res.passed


def test_cospan_rejects_non_bisimulation():
    l = lmp_from_rows([[1.0, 0.0], [0.0, 0.5]])
    with pytest.raises(ConstructionError):
        cospan_from_bisim(l, l, FinitePartition.total(4))


@pytest.mark.parametrize("seed", range(10))
def test_bisimilar_iff_cospan_identifies(seed):
    rng = np.random.default_rng(seed)
    l1, l2 = random_lmp(rng, 3), random_lmp(rng, 3)
    w, res = bisimilar_across(l1, l2)
    assert res.passed
    greatest = dt_bisim_refine(union_lmp(l1, l2)).block_of
    for x in range(l1.n):
        for y in range(l2.n):
            assert (greatest[x] == greatest[l1.n + y]) == (res.f(x) == res.g(y))
