import math
import pickle

import numpy as np
import pytest

from ksblowup.errors import ValidationError
from ksblowup.expr import parse_expression, tokenize

PTS = np.array([[0.0, 0.0], [0.5, -1.0], [2.0, 3.0]])


def test_constant_broadcasts_to_points():
    assert np.array_equal(parse_expression("1")(PTS), np.ones(3))


@pytest.mark.parametrize("text, fn", [
    ("1 + 2 * 3", lambda x, y: 7.0 + 0 * x),
    ("-2^2", lambda x, y: -4.0 + 0 * x),
    ("2^3^2", lambda x, y: 512.0 + 0 * x),
    ("(1 + x1) * x2", lambda x, y: (1 + x) * y),
    ("exp(x1) - log(1 + x2^2)", lambda x, y: np.exp(x) - np.log(1 + y * y)),
    ("sin(x1) / (2 + cos(x2))", lambda x, y: np.sin(x) / (2 + np.cos(y))),
    ("1.5e-1 * x1", lambda x, y: 0.15 * x),
    ("8 - 4 - 2", lambda x, y: 2.0 + 0 * x),
])
def test_evaluation_and_precedence(text, fn):
    got = parse_expression(text)(PTS)
    assert np.allclose(got, fn(PTS[:, 0], PTS[:, 1]))


@pytest.mark.parametrize("text", ["", "   ", "1 +", "foo(x1)", "x3", "2 $ 3", "(1 + 2", "1 2", "exp 1"])
def test_malformed_input_is_rejected(text):
    with pytest.raises(ValidationError):
        parse_expression(text)


def test_tokens_cover_the_input():
    kinds = [k for k, _ in tokenize("exp(x1)+2.5")]
    assert kinds[0] == "name"
    assert len(kinds) >= 6


def test_expression_pickles():
    e = parse_expression("1 + x1^2")
    e2 = pickle.loads(pickle.dumps(e))
    assert np.allclose(e2(PTS), 1 + PTS[:, 0] ** 2)
    assert e2.source == "1 + x1^2"


def test_single_point_input():
    assert math.isclose(float(parse_expression("x1 + x2")(np.array([[1.0, 2.0]]))[0]), 3.0)
