import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dltest import combinatorial as ct
from dltest import tensornet as tn


def domains(*sizes):
    return [ct.ParameterDomain(f"p{i}", tuple(range(s))) for i, s in enumerate(sizes)]


def brute_missing(doms, t, rows):
    missing = []
    for cols in itertools.combinations(range(len(doms)), t):
        for lv in itertools.product(*(range(len(doms[c].levels)) for c in cols)):
            if not any(all(r[c] == v for c, v in zip(cols, lv)) for r in rows):
                missing.append((cols, lv))
    return missing


@pytest.mark.parametrize("sizes,t", [((2, 2, 2), 2), ((3, 3, 3, 3), 2), ((2, 2, 2, 2), 3),
                                     ((2, 3, 4), 2), ((2, 2, 2, 2, 2, 2), 2), ((3, 2, 2), 3)])
def test_generated_arrays_are_complete(sizes, t):
    ca = ct.generate_covering_array(domains(*sizes), t, seed=1)
    assert ct.verify_covering_array(ca) == []
    assert brute_missing(ca.domains, t, ca.rows) == []
    assert len(ca.rows) <= int(np.prod(sizes))


def test_three_binary_pairwise_size():
    doms = domains(2, 2, 2)
    ca = ct.generate_covering_array(doms, 2)
    assert ct.minimum_rows_brute_force(doms, 2) == 4
    assert 4 <= len(ca.rows) <= 6
    assert len(ct.all_tuples(doms, 2)) == 12


@pytest.mark.parametrize("k", [2, 3, 4])
def test_binary_pairwise_within_twice_minimum(k):
    doms = domains(*([2] * k))
    ca = ct.generate_covering_array(doms, 2, seed=3)
    assert len(ca.rows) <= 2 * ct.minimum_rows_brute_force(doms, 2)


def test_full_strength_is_cartesian_product():
    doms = domains(2, 3, 2)
    ca = ct.generate_covering_array(doms, 3)
    assert set(ca.rows) == set(itertools.product(range(2), range(3), range(2)))


def test_two_domains_pairwise_is_product():
    doms = domains(3, 4)
    ca = ct.generate_covering_array(doms, 2)
    assert sorted(ca.rows) == sorted(itertools.product(range(3), range(4)))


def test_deleted_row_reports_its_unique_tuples():
    doms = domains(3, 3, 3, 3)
    ca = ct.generate_covering_array(doms, 2, seed=0)
    for drop in range(len(ca.rows)):
        rest = ca.rows[:drop] + ca.rows[drop + 1:]
        others = set().union(*(ct.row_tuples(r, 2) for r in rest)) if rest else set()
        only = ct.row_tuples(ca.rows[drop], 2) - others
        assert ct.verify_covering_array(ct.CoveringArray(ca.domains, 2, rest)) == sorted(only)


def test_empty_rows_miss_everything():
    doms = domains(2, 3)
    assert len(ct.verify_covering_array(ct.CoveringArray(tuple(doms), 2, []))) == 6


def test_deterministic_and_csv():
    doms = [ct.ParameterDomain("rotation", (0, 30, 60)), ct.ParameterDomain("shift", (0.0, 0.1)),
            ct.ParameterDomain("zoom", ("none", "[0.5,1.5]"))]
    a, b = ct.generate_covering_array(doms, 2, seed=5), ct.generate_covering_array(doms, 2, seed=5)
    assert a.rows == b.rows
    lines = a.to_csv().splitlines()
    assert lines[0] == "rotation,shift,zoom"
    assert len(lines) == len(a.rows) + 1


@pytest.mark.parametrize("bad", [1, 4])
def test_strength_out_of_range(bad):
    with pytest.raises(ct.CombinatorialError):
        ct.generate_covering_array(domains(2, 2, 2), bad)


def test_domain_validation():
    with pytest.raises(ct.CombinatorialError):
        ct.ParameterDomain("x", (1,))
    with pytest.raises(ct.CombinatorialError):
        ct.ParameterDomain("x", (1, 1))


@settings(max_examples=15, deadline=None)
@given(sizes=st.lists(st.integers(2, 3), min_size=2, max_size=5), seed=st.integers(0, 1000), data=st.data())
def test_generator_contract_property(sizes, seed, data):
    t = data.draw(st.integers(2, min(3, len(sizes))))
    ca = ct.generate_covering_array(domains(*sizes), t, seed=seed, candidates=10)
    assert ct.verify_covering_array(ca) == []


# --- neuron-interaction coverage


def layer_traces(states):
    """Trace set whose single hidden layer has exactly the given 0/1 states."""
    states = np.asarray(states, float)
    return [states, np.zeros((len(states), 2))]


def test_single_trace_gives_two_to_minus_t():
    tr = layer_traces([[1, 0, 1, 0, 0]])
    for t in (1, 2, 3):
        assert ct.neuron_tuple_coverage(tr, 0, t, threshold=0.5) == pytest.approx(2.0 ** -t)


def test_all_patterns_on_three_neurons():
    tr = layer_traces([[1, 1, 0], [0, 1, 1], [1, 0, 1], [0, 0, 1], [0, 1, 0], [1, 0, 0]])
    brute = set()
    for row in np.asarray(tr[0]) > 0.5:
        for cols in itertools.combinations(range(3), 2):
            brute.add((cols, tuple(row[list(cols)])))
    assert len(brute) == 12
    assert ct.neuron_tuple_coverage(tr, 0, 2, threshold=0.5) == 1.0


def test_zero_traces_and_bad_t():
    assert ct.neuron_tuple_coverage([np.zeros((0, 3)), np.zeros((0, 2))], 0, 2) == 0.0
    with pytest.raises(ct.CombinatorialError):
        ct.neuron_tuple_coverage(layer_traces([[1, 0]]), 0, 3)
    with pytest.raises(ct.CombinatorialError):
        ct.neuron_tuple_coverage(layer_traces([[1, 0] * 5]), 0, 5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 10), t=st.integers(1, 3))
def test_tuple_coverage_monotone_under_union(seed, n, t):
    rng = np.random.default_rng(seed)
    a = rng.random((n, 30))
    b = rng.random((3, 30))
    ca = ct.neuron_tuple_coverage(layer_traces(a), 0, t, seed=1)
    cab = ct.neuron_tuple_coverage(layer_traces(np.concatenate([a, b])), 0, t, seed=1)
    assert 0 < ca <= cab <= 1


def test_variable_strength_map():
    rng = np.random.default_rng(0)
    tr = [rng.random((20, 6)), rng.random((20, 5)), rng.random((20, 2))]
    cov = ct.variable_strength_coverage(tr, {0: 2, 1: 3})
    assert set(cov) == {0, 1}
    assert cov[0] == ct.neuron_tuple_coverage(tr, 0, 2)


# --- smoke tests


def tiny_model(seed=0):
    return tn.build_model([("conv2d", 2, 3), ("relu",), ("flatten",), ("dense", 4), ("softmax",)],
                          (1, 6, 6), seed=seed)


def test_smoke_passes_on_untrained_model():
    report = ct.smoke_test(tiny_model())
    assert report.passed, report.failed()
    assert len(report.checks) == 5


def test_smoke_fails_on_nan_weight():
    model = tiny_model()
    model.layers[0].weights[0, 0, 0, 0] = np.nan
    report = ct.smoke_test(model)
    assert not report.passed
    assert "zeros_input_softmax" in report.failed() or "ones_input_softmax" in report.failed()
    assert "ones_input_softmax" in report.failed()


def test_smoke_records_crash_as_failure():
    model = tiny_model()
    model.layers[3].weights = model.layers[3].weights[:, :5]
    report = ct.smoke_test(model)
    assert not report.passed
    assert all(c.detail for c in report.checks if not c.passed)
