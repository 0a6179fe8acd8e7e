from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdbisim.core import DomainError, FinitePartition
from fdbisim.lmp import (
    FiniteLMP,
    LMPValidationError,
    all_partitions,
    brute_force_greatest_bisim,
    closed_sets,
    dt_bisim_refine,
    lmp_from_rows,
    n_step_product,
    quotient_lmp,
    random_lmp,
    set_partitions,
    union_lmp,
    verify_dt_bisim,
)

# Bell numbers: the partition enumerator is the brute-force oracle's backbone
BELL = [1, 1, 2, 5, 15, 52, 203]

seeds = st.integers(0, 2**32 - 1)


def chain_abc():
    return lmp_from_rows([[0, 1, 0], [0, 0, 1], [0, 0, 0]], {0: ["a"], 1: ["b"], 2: ["c"]}, ("a", "b", "c"))


def test_validation():
    with pytest.raises(LMPValidationError):
        lmp_from_rows([[0.7, 0.7], [0, 0]])
    with pytest.raises(LMPValidationError):
        lmp_from_rows([[-0.1, 0.5], [0, 0]])
    with pytest.raises(LMPValidationError):
        lmp_from_rows([[np.nan, 0.5], [0, 0]])
    with pytest.raises(LMPValidationError):
        FiniteLMP(np.zeros((2, 3)), np.zeros((2, 0)))
    # rounding slack on the row sum is tolerated
    lmp_from_rows([[0.1] * 10] * 10)


def test_lmp_is_immutable():
    l = lmp_from_rows([[0.5, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        l.tau[0, 0] = 0.0


def test_set_partition_counts():
    for n, b in enumerate(BELL):
        assert sum(1 for _ in set_partitions(n)) == b


def test_refine_identical_rows_gives_one_block():
    l = lmp_from_rows([[0.5, 0.5], [0.5, 0.5]])
    assert len(dt_bisim_refine(l).blocks) == 1


def test_refine_labelled_chain_gives_singletons():
    assert len(dt_bisim_refine(chain_abc()).blocks) == 3


def test_refine_separates_by_mass_into_labelled_state():
    # 0 and 1 look alike but reach the P-state with different mass
    l = lmp_from_rows([[0, 0, 0.5], [0, 0, 0.25], [0, 0, 1]], {2: ["P"]}, ("P",))
    p = dt_bisim_refine(l)
    assert p.block_of[0] != p.block_of[1]


def test_death_mass_matters():
    l = lmp_from_rows([[1.0, 0], [0.5, 0]])
    assert len(dt_bisim_refine(l).blocks) == 2


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6))
def test_refine_matches_brute_force(seed, n):
    l = random_lmp(np.random.default_rng(seed), n)
    assert dt_bisim_refine(l) == brute_force_greatest_bisim(l)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6))
def test_refine_is_coarsest_and_idempotent(seed, n):
    l = random_lmp(np.random.default_rng(seed), n)
    r = dt_bisim_refine(l)
    assert verify_dt_bisim(l, r)
    assert verify_dt_bisim(l, FinitePartition.identity(n))
    for p in all_partitions(n):
        if verify_dt_bisim(l, p):
            assert p.refines(r)
    q = quotient_lmp(l, r)
    assert len(dt_bisim_refine(q).blocks) == q.n


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 6))
def test_merging_blocks_breaks_bisimulation(seed, n):
    l = random_lmp(np.random.default_rng(seed), n)
    r = dt_bisim_refine(l)
    for i, j in itertools.combinations(range(len(r.blocks)), 2):
        merged = [b for k, b in enumerate(r.blocks) if k not in (i, j)] + [r.blocks[i] | r.blocks[j]]
        assert not verify_dt_bisim(l, FinitePartition.from_blocks(n, merged))


def test_n_step_product_examples():
    l = lmp_from_rows([[0.25, 0.5], [0.0, 1.0]])
    assert n_step_product(l, 0, [{0, 1}]) == 0.75
    ident = lmp_from_rows([[1.0]])
    assert n_step_product(ident, 0, [{0}, {0}]) == 1.0
    assert n_step_product(l, 0, [{0}, {1}]) == 0.125
    with pytest.raises(DomainError):
        n_step_product(l, 0, [])


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 4))
def test_bisimilar_states_agree_on_closed_products(seed, n):
    # sequences up to length 3 here; the acceptance suite covers length 4 on five states
    l = random_lmp(np.random.default_rng(seed), n)
    r = dt_bisim_refine(l)
    sets = closed_sets(r)
    for length in range(1, 4):
        for seq in itertools.product(sets, repeat=length):
            for blk in r.blocks:
                vals = [n_step_product(l, x, seq) for x in blk]
                assert max(vals) - min(vals) <= 1e-9


def test_closed_sets_are_unions_of_blocks():
    p = FinitePartition.from_blocks(3, [[0, 2], [1]])
    assert sorted(map(sorted, closed_sets(p))) == [[], [0, 1, 2], [0, 2], [1]]


def test_union_and_quotient():
    a = lmp_from_rows([[1.0]], {0: ["P"]}, ("P",))
    b = lmp_from_rows([[0.5, 0.5], [0.5, 0.5]], {0: ["P"], 1: ["P"]}, ("P",))
    u = union_lmp(a, b)
    assert u.n == 3 and u.tau[1, 1] == 0.5 and u.tau[0, 1] == 0.0
    r = dt_bisim_refine(u)
    assert len(r.blocks) == 1
    q = quotient_lmp(u, r)
    assert q.n == 1 and q.tau[0, 0] == 1.0
    with pytest.raises(DomainError):
        quotient_lmp(chain_abc(), FinitePartition.total(3))
