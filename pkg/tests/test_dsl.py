from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdbisim.core import IntervalObs, PointObs, relation_related
from fdbisim.dsl import (
    ModelSemanticError,
    ModelSyntaxError,
    dump_model,
    parse_model,
    parse_model_file,
    parse_relation,
    parse_target,
)
from fdbisim.lmp import FiniteLMP, random_lmp
from fdbisim.mc import AbsorbedBM, DriftedBM, ForkProcess, ProcessModel

MODELS = sorted((Path(__file__).parent.parent / "models").glob("*.model"))


def test_models_directory_is_populated():
    assert len(MODELS) >= 15


@pytest.mark.parametrize("path", MODELS, ids=[p.stem for p in MODELS])
def test_bundled_models_round_trip(path):
    mf = parse_model_file(path.read_text())
    again = parse_model_file(dump_model(mf))
    assert dump_model(again) == dump_model(mf)
    if mf.is_lmp:
        assert again.model == mf.model
        assert again.partition == mf.partition
    else:
        assert again.model == mf.model
        assert again.relations == mf.relations


def test_process_file():
    mf = parse_model_file("# comment\nprocess drifted_bm a=2  # trailing\nobs interval -1 1\nhorizon 5\n")
    m = mf.model
    assert isinstance(m, ProcessModel) and m.kind == DriftedBM(2.0)
    assert m.obs == IntervalObs(-1.0, 1.0) and m.horizon == 5.0 and m.grid_step == 1e-3


def test_mark_parameter_sets_point_observation():
    m = parse_model("process absorbed_bm lo=0 hi=4 mark=1\ngrid_step 0.01\n")
    assert m.kind == AbsorbedBM(0.0, 4.0) and m.obs == PointObs((1.0,))


def test_fork_has_fixed_observations():
    m = parse_model("process fork\nhorizon 200\ngrid_step 1\n")
    assert isinstance(m.kind, ForkProcess)


def test_lmp_file():
    mf = parse_model_file("lmp 3\naps P Q\nlabel 2 P Q\nrow 0: 0.5 0.5 0\nrow 1: 0 0 1\nrow 2: 0 0 0\npartition {0,1} {2}\n")
    assert isinstance(mf.model, FiniteLMP)
    assert mf.model.label_key(2) == (True, True)
    assert mf.partition.as_lists() == [[0, 1], [2]]


def test_relations():
    mf = parse_model_file("process bm\nobs integers\nrelation reflect\nrelation translate 1\n")
    w = mf.witness()
    assert relation_related(w, 0.25, 1.75) and relation_related(w, 0.25, -2.25)
    assert not relation_related(w, 0.25, 0.5)
    clauses = parse_relation("reflect 0.5; translate 2")
    assert [c.name for c in clauses] == ["reflect", "translate"] and clauses[0].args == (0.5,)


def test_targets():
    t = parse_target("point 0 1")
    assert list(t.contains(np.array([0.0, 0.5, 1.0]))) == [True, False, True]


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_random_lmps_round_trip(seed, n):
    l = random_lmp(np.random.default_rng(seed), n, n_aps=2)
    from fdbisim.dsl import ModelFile

    text = dump_model(ModelFile(l))
    assert parse_model(text) == l


@given(st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v != 0), st.floats(1e-3, 1.0))
def test_numbers_round_trip(a, step):
    from fdbisim.dsl import ModelFile

    mf = parse_model_file(f"process drifted_bm a={a!r}\nhorizon 100\ngrid_step {step!r}\n")
    again = parse_model_file(dump_model(mf))
    assert again.model.kind.a == a and again.model.grid_step == step


# Each entry: source text, error class, line, column.
ERRORS = [
    ("", ModelSyntaxError, 1, 1),
    ("procss bm\n", ModelSyntaxError, 1, 1),
    ("process levy\n", ModelSyntaxError, 1, 9),
    ("process bm\nobs point\n", ModelSyntaxError, 2, 5),
    ("process bm\nobs wiggle\n", ModelSyntaxError, 2, 5),
    ("process drift b=2\n", ModelSyntaxError, 1, 15),
    ("process drift a=x\n", ModelSyntaxError, 1, 17),
    ("process drift a=inf\n", ModelSemanticError, 1, 17),
    ("process bm\nhorizon nan\n", ModelSemanticError, 2, 9),
    ("process bm\nobs interval 1 -1\n", ModelSemanticError, 2, 14),
    ("# header\nprocess absorbed_bm lo=2 hi=1\n", ModelSemanticError, 2, 1),
    ("process bm\ngrid_step 0.5\n", ModelSemanticError, 1, 1),
    ("process bm\nflavour 3\n", ModelSyntaxError, 2, 1),
    ("process bm\nrelation spin\n", ModelSyntaxError, 2, 10),
    ("process bm\nrelation translate -1\n", ModelSemanticError, 2, 20),
    ("process bm\nprocess bm\n", ModelSyntaxError, 2, 1),
    ("lmp 2\nrow 0: 0.7 0.7\nrow 1: 0 0\n", ModelSemanticError, 2, 1),
    ("lmp 2\nrow 0: 0.5\nrow 1: 0 0\n", ModelSemanticError, 2, 1),
    ("lmp 2\nrow 0: 0.5 0.5\n", ModelSemanticError, 2, 1),
    ("lmp 2\nrow 5: 0.5 0.5\n", ModelSemanticError, 2, 5),
    ("lmp 2\nrow 0: 0.5 abc\nrow 1: 0 0\n", ModelSyntaxError, 2, 12),
    ("lmp 2\nlabel 0 9P\nrow 0: 0 0\nrow 1: 0 0\n", ModelSyntaxError, 2, 9),
    ("lmp 2\naps P\nlabel 0 Q\nrow 0: 0 0\nrow 1: 0 0\n", ModelSemanticError, 3, 9),
    ("lmp 2\nrow 0: 0 0\nrow 1: 0 0\npartition {0}\n", ModelSemanticError, 4, 10),
    ("lmp 2\nrow 0: 0 0\nrow 1: 0 0\npartition {0,1\n", ModelSyntaxError, 4, 11),
]


@pytest.mark.parametrize("text,cls,line,col", ERRORS)
def test_error_corpus(text, cls, line, col):
    with pytest.raises(cls) as info:
        parse_model_file(text)
    err = info.value
    assert (err.line, err.col) == (line, col), str(err)
    assert str(err).startswith(f"line {line}, column {col}: ")


def test_error_classes():
    with pytest.raises(ModelSyntaxError) as a:
        parse_model_file("nonsense\n")
    with pytest.raises(ModelSemanticError) as b:
        parse_model_file("lmp 1\nrow 0: 1.4\n")
    assert a.value.exit_class == "syntax" and b.value.exit_class == "semantic"
    assert "row mass 1.4 > 1" in str(b.value)


def test_row_mass_rounding_is_tolerated():
    l = parse_model("lmp 3\nrow 0: 0.1 0.2 0.7\nrow 1: 0 0 0\nrow 2: 0 0 0\n")
    assert math.isclose(l.row_mass()[0], 1.0)
