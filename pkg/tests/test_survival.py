import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmstat.errors import CsvFormatError, EmptySample, NonPositiveTime
from kmstat.survival import (CensoredSample, at_risk, diagonal_term, km_eval, km_fit,
                             read_csv, sort_censored, write_csv)

from oracles import product_limit_jumps

observations = st.lists(
    st.tuples(st.integers(1, 12).map(lambda k: k / 4.0), st.booleans()),
    min_size=1, max_size=40)


def test_worked_three_point_weights():
    fit = km_fit(sort_censored([(1, 1), (2, 0), (3, 1)]))
    np.testing.assert_allclose(fit.weights, [1 / 3, 0.0, 2 / 3], rtol=0, atol=1e-15)


def test_uncensored_weights_are_uniform():
    fit = km_fit(sort_censored([(t, 1) for t in (4.0, 1.0, 3.0, 2.0)]))
    np.testing.assert_array_equal(fit.weights, np.full(4, 0.25))
    assert fit.total_mass == 1.0


def test_last_censored_leaves_mass_missing():
    fit = km_fit(sort_censored([(1, 1), (2, 1), (3, 0)]))
    assert fit.total_mass == pytest.approx(2 / 3)


def test_tie_rule_events_first_and_stable():
    s = sort_censored([(2, 0), (1, 0), (1, 1), (2, 1), (1, 1)])
    assert [(o.time, o.event) for o in s.observations] == [
        (1.0, True), (1.0, True), (1.0, False), (2.0, True), (2.0, False)]


def test_validation_errors():
    with pytest.raises(EmptySample):
        sort_censored([])
    with pytest.raises(NonPositiveTime):
        sort_censored([(0.0, 1)])
    with pytest.raises(NonPositiveTime):
        CensoredSample.from_arrays([1.0, -2.0], [1, 1])
    with pytest.raises(NonPositiveTime):
        CensoredSample.from_arrays([np.inf], [1])


def test_samples_are_immutable():
    s = sort_censored([(1, 1), (2, 0)])
    with pytest.raises(ValueError):
        s.times[0] = 5.0


def test_step_function_and_at_risk():
    fit = km_fit(sort_censored([(1, 1), (2, 0), (3, 1)]))
    assert km_eval(fit, 0.5) == 0.0
    assert km_eval(fit, 1.0) == pytest.approx(1 / 3)
    assert km_eval(fit, 2.5) == pytest.approx(1 / 3)
    assert fit.survival(3.0) == pytest.approx(0.0, abs=1e-15)
    assert at_risk(fit.sample, 2.0) == 2
    np.testing.assert_array_equal(at_risk(fit.sample, [0.5, 3.5]), [3, 0])


@settings(max_examples=200, deadline=None)
@given(observations)
def test_weights_match_product_limit_curve(obs):
    s = sort_censored(obs)
    fit = km_fit(s)
    jumps = product_limit_jumps(s.times, s.events)
    assert np.all(fit.weights >= 0)
    assert fit.total_mass <= 1.0 + 1e-12
    assert np.all(fit.weights[~s.events] == 0)
    for t, jump in jumps.items():
        assert fit.weights[s.times == t].sum() == pytest.approx(jump, abs=1e-12)
    if s.events[-1]:
        assert fit.total_mass == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(observations)
def test_sorting_is_a_stable_permutation(obs):
    s = sort_censored(obs)
    assert sorted((t, not e) for t, e in obs) == [(o.time, not o.event) for o in s.observations]


def test_diagonal_term():
    fit = km_fit(sort_censored([(1, 1), (3, 1)]))
    assert diagonal_term(fit, lambda x, y: x * y) == pytest.approx(0.25 * 1 + 0.25 * 9)


def test_csv_roundtrip(tmp_path):
    s = sort_censored([(1.5, 1), (0.25, 0), (3.0, 1)])
    path = tmp_path / "d.csv"
    write_csv(s, path)
    assert path.read_bytes().startswith(b"time,event\n")
    assert read_csv(path) == s


@pytest.mark.parametrize("body, line", [
    ("time,event\n1,1\nx,1\n", 3),
    ("time,event\n1,2\n", 2),
    ("time,event\n1,1,0\n", 2),
    ("time,event\n-1,1\n", 2),
])
def test_csv_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(CsvFormatError, match=f":{line}:"):
        read_csv(path)


def test_csv_header_required(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,d\n1,1\n")
    with pytest.raises(CsvFormatError):
        read_csv(path)
