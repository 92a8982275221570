import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udid import PanelDataset, ParameterStack, ValidationError, validate
from udid.data_model import ADDITIVE, MULTIPLICATIVE, contrast_eval


def test_valid_panel_passes():
    d = PanelDataset([1, 2, 3, 4], [2, 3, 4, 5], [1, 1, 0, 0])
    assert validate(d) is d
    assert d.n == 4 and d.p == 0 and d.n_treated == 2


def test_all_treated_rejected():
    with pytest.raises(ValidationError, match="no control units"):
        validate(PanelDataset([1, 2, 3, 4], [1, 2, 3, 4], [1, 1, 1, 1]))


def test_nonfinite_row_is_named():
    with pytest.raises(ValidationError) as info:
        validate(PanelDataset([1, 2, 3, 4], [1, 2, np.nan, 4], [1, 1, 0, 0]))
    assert info.value.issues[0][1] == [2]
    assert "rows 2" in str(info.value)


def test_every_violation_is_reported():
    with pytest.raises(ValidationError) as info:
        validate(PanelDataset([1, np.inf, 3], [1, 2, 3], [2, 1, 1]))
    messages = " ".join(m for m, _ in info.value.issues)
    assert "non-finite y0" in messages and "not 0/1" in messages and "no control" in messages


def test_length_mismatch():
    with pytest.raises(ValidationError, match="length mismatch"):
        validate(PanelDataset([1, 2, 3], [1, 2], [0, 1, 0]))


def test_arrays_are_read_only():
    d = PanelDataset([1.0, 2.0], [1.0, 2.0], [0, 1])
    with pytest.raises(ValueError):
        d.y0[0] = 5.0


def test_contrasts():
    assert contrast_eval(ADDITIVE, 2.0, 2.0) == (0.0, (-1.0, 1.0))
    value, grad = contrast_eval(MULTIPLICATIVE, 2.0, 4.0)
    assert value == 2.0 and grad == (-1.0, 0.5)
    with pytest.raises(ZeroDivisionError):
        contrast_eval(MULTIPLICATIVE, 0.0, 1.0)


def test_additive_contrast_is_crude_difference(rng):
    y1 = rng.normal(size=50)
    a = np.repeat([0, 1], 25)
    value, _ = contrast_eval(ADDITIVE, y1[a == 0].mean(), y1[a == 1].mean())
    assert value == pytest.approx(y1[a == 1].mean() - y1[a == 0].mean(), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=6))
def test_stack_name_index_round_trip(sizes):
    stack = ParameterStack([(f"b{i}", np.arange(s, dtype=float)) for i, s in enumerate(sizes)])
    for pos in range(stack.size):
        name = stack.name_at(pos)
        assert pos in range(stack.size)[stack.index(name)]
    assert stack.size == sum(sizes)
    again = ParameterStack.from_vector(stack, stack.values)
    assert again.names == stack.names
    np.testing.assert_array_equal(again.values, stack.values)


def test_stack_replace_and_immutability():
    stack = ParameterStack({"psi0": [1.0], "alpha0": [2.0, 3.0]})
    new = stack.replace(alpha0=[5.0, 6.0])
    np.testing.assert_array_equal(stack["alpha0"], [2.0, 3.0])
    np.testing.assert_array_equal(new["alpha0"], [5.0, 6.0])
    with pytest.raises(ValueError):
        stack.replace(alpha0=[1.0])
