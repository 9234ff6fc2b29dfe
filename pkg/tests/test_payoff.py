import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uncvol.payoff import ConvexityClass, Payoff, PiecewiseLinear, classify_convexity, evaluate

strikes = st.floats(1.0, 500.0)
prices = st.floats(0.0, 2000.0)


@st.composite
def builtins(draw):
    kind = draw(st.sampled_from(["call", "put", "forward", "bull_spread"]))
    if kind == "bull_spread":
        lo = draw(st.floats(1.0, 300.0))
        return Payoff.bull_spread(lo, lo + draw(st.floats(0.5, 300.0)))
    return getattr(Payoff, kind)(draw(strikes))


@st.composite
def piecewise(draw):
    n = draw(st.integers(1, 6))
    xs = sorted(set(draw(st.lists(st.floats(0.0, 500.0), min_size=n, max_size=n))))
    vs = draw(st.lists(st.floats(-50.0, 50.0), min_size=len(xs), max_size=len(xs)))
    left = draw(st.floats(-3.0, 3.0))
    right = draw(st.floats(-3.0, 3.0))
    if any(b - a < 1e-3 for a, b in zip(xs, xs[1:])):
        xs = [10.0 * i for i in range(len(xs))]
    return Payoff("piecewise_linear", {"knots": tuple(zip(xs, vs)), "left_slope": left, "right_slope": right},
                  allow_negative=True)


def test_evaluate_examples():
    assert evaluate(Payoff.call(100), 110.0) == 10.0
    assert evaluate(Payoff.call(100), 90.0) == 0.0
    assert evaluate(Payoff.bull_spread(90, 110), 120.0) == 20.0
    assert evaluate(Payoff.put(100), 90.0) == 10.0
    assert evaluate(Payoff.forward(100), 90.0) == -10.0


def test_evaluate_vectorized_and_rejects_negative():
    x = np.array([0.0, 50.0, 100.0, 150.0])
    np.testing.assert_array_equal(evaluate(Payoff.call(100), x), [0, 0, 0, 50])
    with pytest.raises(ValueError):
        evaluate(Payoff.call(100), -1.0)
    with pytest.raises(ValueError):
        evaluate(Payoff.call(100), np.array([1.0, np.nan]))


def test_classify_examples():
    assert classify_convexity(Payoff.call(100)) is ConvexityClass.CONVEX
    assert classify_convexity(Payoff.put(100)) is ConvexityClass.CONVEX
    assert classify_convexity(Payoff.forward(100)) is ConvexityClass.LINEAR
    assert classify_convexity(Payoff.bull_spread(90, 110)) is ConvexityClass.MIXED
    assert classify_convexity(Payoff.call(100).negated()) is ConvexityClass.CONCAVE
    assert classify_convexity(Payoff.put(100).negated()) is ConvexityClass.CONCAVE
    assert classify_convexity(Payoff.forward(100).negated()) is ConvexityClass.LINEAR


def test_piecewise_linear_interpolates_and_extrapolates():
    p = Payoff.piecewise_linear([(50, 10), (100, 0), (150, 30)], left_slope=-1, right_slope=2)
    assert p(75.0) == pytest.approx(5.0)
    assert p(125.0) == pytest.approx(15.0)
    assert p(200.0) == pytest.approx(130.0)
    assert p(40.0) == pytest.approx(20.0)
    assert classify_convexity(p) is ConvexityClass.CONVEX


@pytest.mark.parametrize("knots", [[(100, 1), (100, 2)], [(100, 1), (50, 2)], [(-1, 0)], []])
def test_bad_knots_rejected(knots):
    with pytest.raises(ValueError):
        PiecewiseLinear(tuple(knots), 0.0, 1.0)


@pytest.mark.parametrize("bad", [
    lambda: Payoff.call(0.0), lambda: Payoff.call(-5.0), lambda: Payoff.bull_spread(110, 90),
    lambda: Payoff.piecewise_linear([(100, 0)], 0.0, -1.0),  # negative for large x
    lambda: Payoff.piecewise_linear([(100, -1)], 0.0, 1.0),
    lambda: Payoff("digital", {"strike": 1.0}),
])
def test_invalid_claims_rejected(bad):
    with pytest.raises(ValueError):
        bad()


def test_negated_allowed_only_internally():
    neg = Payoff.call(100).negated()
    assert neg.allow_negative
    assert neg(150.0) == -50.0


def test_spec_round_trip():
    for p in [Payoff.call(100), Payoff.bull_spread(90, 110),
              Payoff.piecewise_linear([(50, 10), (100, 0)], -1.0, 1.0)]:
        q = Payoff.from_spec(p.to_spec())
        assert q == p
    with pytest.raises(ValueError):
        Payoff.from_spec({"kind": "call", "strike": 100, "extra": 1})
    with pytest.raises(ValueError):
        Payoff.from_spec({"kind": "call"})


def test_lipschitz_bound_values():
    assert Payoff.call(100).lipschitz_bound == 1.0
    assert Payoff.bull_spread(90, 110).lipschitz_bound == 1.0
    assert Payoff.piecewise_linear([(50, 10), (100, 0)], -3.0, 0.5).lipschitz_bound == 3.0


@settings(max_examples=50)
@given(builtins(), st.integers(0, 2**32 - 1))
def test_builtin_matches_canonical_form_exactly(p, seed):
    x = np.random.default_rng(seed).uniform(0.0, 1000.0, 1000)
    np.testing.assert_array_equal(evaluate(p, x), p.canonical(x))


@given(st.one_of(builtins(), piecewise()), prices, prices)
def test_lipschitz(p, x, y):
    assert abs(evaluate(p, x) - evaluate(p, y)) <= p.lipschitz_bound * abs(x - y) * (1 + 1e-12) + 1e-9


@given(piecewise())
def test_convexity_flips_under_negation(p):
    flip = {ConvexityClass.CONVEX: ConvexityClass.CONCAVE, ConvexityClass.CONCAVE: ConvexityClass.CONVEX,
            ConvexityClass.LINEAR: ConvexityClass.LINEAR, ConvexityClass.MIXED: ConvexityClass.MIXED}
    assert classify_convexity(p.negated()) is flip[classify_convexity(p)]


@given(builtins(), prices)
def test_claims_nonnegative(p, x):
    if p.kind != "forward":
        assert evaluate(p, x) >= 0.0
