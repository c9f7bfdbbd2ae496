import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from mflab.activation import softplus_dot, tanh_dot
from mflab.errors import InputError
from mflab.metrics import (EmpiricalMeasure, TestFunction, audit_lipschitz, delta_testfn, kr_dual_lower_bound,
                           sphere_directions, subsample, sw1_montecarlo, w1, w1_exact, w1_sorted_1d)


def brute_force_w1(a, b):
    n = len(a)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(float(np.linalg.norm(a[i] - b[j])) for i, j in enumerate(perm)) / n)
    return best


def random_lipschitz_pl(rng, n_knots=6, lo=-4, hi=4):
    """Random piecewise-linear function of one variable with slopes in [-1, 1]."""
    knots = np.sort(rng.uniform(lo, hi, n_knots))
    slopes = rng.uniform(-1, 1, n_knots + 1)
    vals = np.concatenate([[0.0], np.cumsum(slopes[1:-1] * np.diff(knots))])

    def f(w):
        u = w[:, 0]
        out = np.interp(u, knots, vals)
        out = np.where(u < knots[0], vals[0] + slopes[0] * (u - knots[0]), out)
        return np.where(u > knots[-1], vals[-1] + slopes[-1] * (u - knots[-1]), out)
    return TestFunction.custom(f, 1.0, "pl")


# -- delta_testfn -----------------------------------------------------------

def test_delta_examples(rng):
    mu = rng.normal(size=(10, 2))
    phi0 = TestFunction.coordinate(0)
    assert delta_testfn(mu, mu, phi0) == 0.0
    assert delta_testfn([[0.0, 0.0]], [[2.5, -1.0]], phi0) == 2.5
    ident = TestFunction.custom(lambda w: w[:, 0], 1.0)
    assert delta_testfn([[0.0], [2.0]], [[1.0]], ident) == 0.0


def test_activation_test_function_is_normalised():
    for m in (tanh_dot(2, 1.5, 2.0), softplus_dot(2, 1.5, 2.0)):
        phi = TestFunction.activation_at(m, [1.0, 0.5])
        assert phi.lipschitz_bound == pytest.approx(1.0)
        assert audit_lipschitz(phi, 2) <= phi.lipschitz_bound + 1e-9
        raw = TestFunction.activation_at(m, [1.0, 0.5], normalize=False)
        assert raw.lipschitz_bound == m.M


def test_coordinate_lipschitz_audit():
    assert audit_lipschitz(TestFunction.coordinate(1), 3) <= 1.0 + 1e-9


# -- W1 -----------------------------------------------------------------------

def test_w1_examples():
    assert w1_exact([[0.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 1.0]]) == pytest.approx(1.0)
    assert w1_exact([[0.0], [2.0]], [[1.0], [3.0]]) == pytest.approx(1.0)
    assert brute_force_w1(np.array([[0.0], [2.0]]), np.array([[1.0], [3.0]])) == 1.0
    x = np.random.default_rng(0).normal(size=(6, 3))
    assert w1_exact(x, x) == 0.0


def test_w1_sorted_examples():
    assert w1_sorted_1d([0.0, 2.0], [1.0, 3.0]) == 1.0
    assert w1_sorted_1d([0.5, -1.0], [0.5, -1.0]) == 0.0
    assert w1_sorted_1d([5.0], [-5.0]) == 10.0


def test_w1_errors():
    with pytest.raises(InputError):
        w1_exact(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(InputError):
        w1_sorted_1d(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(InputError):
        w1_exact(np.zeros((5, 1)), np.zeros((5, 1)), cap=4)
    with pytest.raises(InputError):
        EmpiricalMeasure(np.array([[np.nan]]))
    with pytest.raises(InputError):
        EmpiricalMeasure(np.zeros((0, 2)))


def test_w1_matches_brute_force():
    rng = np.random.default_rng(1)
    for i in range(100):
        n, D = 1 + i % 7, 1 + i % 3
        a, b = rng.normal(size=(n, D)), rng.normal(size=(n, D))
        assert abs(w1_exact(a, b) - brute_force_w1(a, b)) <= 1e-9


def test_sorted_matches_exact():
    rng = np.random.default_rng(2)
    for i in range(500):
        n = 1 + i % 64
        a, b = rng.normal(size=(n, 1)), rng.standard_cauchy(size=(n, 1))
        assert abs(w1_sorted_1d(a, b) - w1_exact(a, b)) <= 1e-9
        assert w1(a, b) == w1_sorted_1d(a, b)


pts = st.integers(1, 6).flatmap(lambda n: st.tuples(*[arrays(np.float64, (n, 2), elements=st.floats(-10, 10))] * 3))


@settings(max_examples=100, deadline=None)
@given(triple=pts)
def test_w1_metric_axioms(triple):
    a, b, c = triple
    assert w1_exact(a, b) == w1_exact(b, a)
    assert w1_exact(a, c) <= w1_exact(a, b) + w1_exact(b, c) + 1e-9
    assert w1_exact(a, a[::-1]) == 0.0
    if sorted(map(tuple, a)) != sorted(map(tuple, b)):
        assert w1_exact(a, b) > 0


@settings(max_examples=100, deadline=None)
@given(pair=st.integers(1, 8).flatmap(lambda n: st.tuples(*[arrays(np.float64, (n, 1), elements=st.floats(-5, 5))] * 2)),
       seed=st.integers(0, 2**32 - 1))
def test_testfn_gap_bounded_by_w1(pair, seed):
    a, b = pair
    rng = np.random.default_rng(seed)
    for phi in [random_lipschitz_pl(rng), TestFunction.activation_at(tanh_dot(1, 1.0, 5.0), [1.0])]:
        assert delta_testfn(a, b, phi) <= phi.lipschitz_bound * w1_exact(a, b) + 1e-9


# -- sliced W1 ------------------------------------------------------------------

def test_sw1_identical_is_zero(rng):
    x = rng.normal(size=(12, 3))
    assert sw1_montecarlo(x, x, 64, seed=1) == (0.0, 0.0)


def test_sw1_two_diracs_closed_form():
    oracle, _ = quad(lambda u: abs(math.cos(u)) / (2 * math.pi), 0, 2 * math.pi)
    assert oracle == pytest.approx(2 / math.pi, rel=1e-12)
    est, se = sw1_montecarlo([[0.0, 0.0]], [[1.0, 0.0]], 100_000, seed=3)
    assert abs(est - oracle) <= 3 * se
    assert se < 0.002


def test_sw1_below_w1():
    rng = np.random.default_rng(4)
    for i in range(100):
        n, D = 2 + i % 20, 2 + i % 4
        a, b = rng.normal(size=(n, D)), rng.normal(loc=0.3, size=(n, D))
        est, se = sw1_montecarlo(a, b, 256, seed=i)
        assert est <= w1_exact(a, b) + 3 * se


def test_sw1_deterministic_and_chunk_independent(rng):
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
    assert sw1_montecarlo(a, b, 1000, seed=5) == sw1_montecarlo(a, b, 1000, seed=5)
    assert sw1_montecarlo(a, b, 1000, seed=5) != sw1_montecarlo(a, b, 1000, seed=6)


def test_sw1_one_dimension_is_exact(rng):
    a, b = rng.normal(size=(30, 1)), rng.normal(size=(30, 1))
    assert sw1_montecarlo(a, b, 10, seed=0) == (w1_sorted_1d(a, b), 0.0)


def test_sw1_errors():
    with pytest.raises(InputError):
        sw1_montecarlo([[0.0, 0.0]], [[1.0, 0.0]], 0)
    with pytest.raises(InputError):
        sw1_montecarlo(np.zeros((2, 2)), np.zeros((3, 2)))


class _ZeroFirst:
    """Generator stand-in whose first Gaussian draw is exactly zero."""

    def __init__(self):
        self.inner = np.random.default_rng(0)
        self.first = True

    def standard_normal(self, shape):
        out = self.inner.standard_normal(shape)
        if self.first:
            out[0] = 0.0
            self.first = False
        return out


def test_sphere_directions_redraws_zero_vectors():
    u = sphere_directions(_ZeroFirst(), 5, 3)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)


# -- Kantorovich-Rubinstein lower bound ------------------------------------------

def test_kr_examples():
    assert kr_dual_lower_bound([[0.0]], [[1.0]], []) == 0.0
    ident = TestFunction.custom(lambda w: w[:, 0], 1.0, "id")
    assert kr_dual_lower_bound([[0.0]], [[3.0]], [ident]) == 3.0 == w1_exact([[0.0]], [[3.0]])
    with pytest.raises(InputError):
        kr_dual_lower_bound([[0.0]], [[3.0]], [TestFunction.custom(lambda w: 2 * w[:, 0], 2.0)])


def test_kr_lower_bound_below_w1():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        a, b = rng.normal(size=(n, 1)), rng.normal(scale=2, size=(n, 1))
        family = [random_lipschitz_pl(rng) for _ in range(50)]
        assert kr_dual_lower_bound(a, b, family) <= w1_exact(a, b) + 1e-12


def test_subsample(rng):
    x = np.arange(10.0)[:, None]
    assert subsample(x, 20, None) is x
    s = subsample(x, 4, np.random.default_rng(0))
    assert len(s) == 4 and len(set(s[:, 0])) == 4 and np.all(np.diff(s[:, 0]) > 0)
