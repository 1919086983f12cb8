import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invscat.specfun import DomainError, bessel_j, bessel_y, hankel2

mp.mp.dps = 40


def test_j_at_zero():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0
    assert bessel_j(7, 0.0) == 0.0


def test_reference_values():
    assert bessel_j(0, 1.0) == pytest.approx(0.7651976866, abs=1e-10)
    assert bessel_y(0, 1.0) == pytest.approx(0.0882569642, abs=1e-10)
    assert bessel_y(1, 1.0) == pytest.approx(-0.7812128213, abs=1e-10)
    h = hankel2(0, 1.0)
    assert h.real == pytest.approx(0.7651976866, abs=1e-10)
    assert h.imag == pytest.approx(-0.0882569642, abs=1e-10)


@pytest.mark.parametrize("n", [0, 1, 2, 5, 10, 30, 60])
@pytest.mark.parametrize("x", [1e-3, 0.37, 1.0, 4.2, 17.5, 63.0, 100.0])
def test_j_against_mpmath(n, x):
    ref = float(mp.besselj(n, x))
    got = bessel_j(n, x)
    if abs(ref) < 1e-280:
        assert abs(got) < 1e-280
    else:
        assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("n", [0, 1, 2, 5, 10, 30])
@pytest.mark.parametrize("x", [1e-6, 1e-3, 0.37, 1.0, 4.2, 17.5, 63.0, 100.0])
def test_y_against_mpmath(n, x):
    ref = float(mp.bessely(n, x))
    if not math.isfinite(ref):
        pytest.skip("reference overflows double precision")
    assert bessel_y(n, x) == pytest.approx(ref, rel=1e-10)


def test_y0_small_argument_log_trend():
    xs = np.logspace(-12, -3, 10)
    dev = bessel_y(0, xs) - (2 / np.pi) * np.log(xs / 2)
    assert np.all(np.abs(dev) < 1.0)
    # the bounded remainder tends to 2*gamma/pi
    assert dev[0] == pytest.approx(2 * np.euler_gamma / np.pi, rel=1e-9)


def test_hankel_small_argument():
    x = 1e-5
    assert hankel2(1, x).imag == pytest.approx(2 / (np.pi * x), rel=1e-6)


@given(n=st.integers(0, 60), x=st.floats(1e-3, 100.0))
def test_hankel_real_part_bit_exact(n, x):
    assert hankel2(n, x).real == bessel_j(n, x)
    assert hankel2(n, x).imag == -bessel_y(n, x)


@settings(max_examples=200)
@given(n=st.sampled_from([0, 1, 2, 5, 10]), x=st.floats(0.1, 50.0))
def test_wronskian(n, x):
    w = bessel_j(n + 1, x) * bessel_y(n, x) - bessel_j(n, x) * bessel_y(n + 1, x)
    assert w == pytest.approx(2 / (np.pi * x), rel=1e-10)


@settings(max_examples=200)
@given(n=st.integers(1, 20), x=st.floats(0.5, 50.0))
def test_recurrence(n, x):
    for f in (bessel_j, bessel_y):
        lhs = f(n - 1, x) + f(n + 1, x)
        rhs = 2 * n / x * f(n, x)
        scale = max(abs(f(n - 1, x)), abs(f(n + 1, x)), abs(rhs))
        assert abs(lhs - rhs) <= 1e-10 * scale


def test_arrays_broadcast():
    out = bessel_j(np.array([0, 1, 2])[:, None], np.linspace(0, 5, 4)[None, :])
    assert out.shape == (3, 4)
    assert hankel2(0, np.array([1.0, 2.0])).dtype == complex


@pytest.mark.parametrize("call", [
    lambda: bessel_j(0, -1.0),
    lambda: bessel_y(0, 0.0),
    lambda: bessel_y(1, -2.0),
    lambda: hankel2(0, 0.0),
    lambda: bessel_j(61, 1.0),
    lambda: bessel_j(-1, 1.0),
    lambda: bessel_j(0.5, 1.0),
    lambda: bessel_j(0, float("nan")),
])
def test_domain_errors(call):
    with pytest.raises(DomainError):
        call()
