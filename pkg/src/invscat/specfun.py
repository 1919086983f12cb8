"""Real-argument Bessel and Hankel functions of integer order.

Thin, validated wrappers around :mod:`scipy.special`.  All functions accept
scalars or arrays and broadcast like numpy ufuncs.  ``hankel2`` is assembled
from ``bessel_j`` and ``bessel_y`` so that ``hankel2(n, x).real`` is
bit-identical to ``bessel_j(n, x)``.
"""
from __future__ import annotations

import numpy as np
from scipy import special

MAX_ORDER = 60


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _check_order(order) -> np.ndarray:
    n = np.asarray(order)
    if not np.issubdtype(n.dtype, np.integer):
        if not np.all(np.equal(np.mod(n, 1), 0)):
            raise DomainError(f"order must be an integer, got {order!r}")
        n = n.astype(int)
    if np.any(n < 0) or np.any(n > MAX_ORDER):
        raise DomainError(f"order must lie in [0, {MAX_ORDER}], got {order!r}")
    return n


def _finite(value, name):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{name} is not finite for the requested arguments")
    return value


def _scalar(v):
    return v.item() if isinstance(v, np.ndarray) and v.ndim == 0 else v


def bessel_j(order, x):
    """Bessel function of the first kind J_n(x) for x >= 0."""
    n = _check_order(order)
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)):
        raise DomainError("x must be finite")
    if np.any(x < 0):
        raise DomainError("bessel_j requires x >= 0")
    return _scalar(_finite(special.jv(n, x), "J"))


def bessel_y(order, x):
    """Bessel function of the second kind Y_n(x) for x > 0."""
    n = _check_order(order)
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)):
        raise DomainError("x must be finite")
    if np.any(x <= 0):
        raise DomainError("bessel_y requires x > 0 (logarithmic singularity at 0)")
    return _scalar(_finite(special.yv(n, x), "Y"))


def hankel2(order, x):
    """Hankel function of the second kind, H_n^(2)(x) = J_n(x) - j Y_n(x)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("hankel2 requires x > 0")
    j = np.asarray(bessel_j(order, x))
    y = np.asarray(bessel_y(order, x))
    out = np.empty(np.broadcast(j, y).shape, dtype=complex)
    out.real = j
    out.imag = -y
    return _scalar(out)
