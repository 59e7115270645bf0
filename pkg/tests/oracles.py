"""Independent reference computations used by several test modules."""

import math

import numpy as np
from scipy import integrate


def circle_coefficient(fn, k, points=4096):
    """(1/2pi) int_0^{2pi} fn(e^{i theta}) e^{-ik theta} d theta by the trapezoid rule.

    Exponentially accurate for entire symbols; independent of any FFT code
    in the package because it sums explicitly.
    """
    theta = 2 * np.pi * np.arange(points) / points
    z = np.exp(1j * theta)
    return complex(np.sum(fn(z) * np.exp(-1j * k * theta)) / points)


def circle_coefficient_quad(fn, k):
    """Same integral by adaptive quadrature of the real and imaginary parts."""
    re = integrate.quad(lambda t: (fn(np.exp(1j * t)) * np.exp(-1j * k * t)).real, 0, 2 * np.pi, epsabs=1e-14, limit=200)[0]
    im = integrate.quad(lambda t: (fn(np.exp(1j * t)) * np.exp(-1j * k * t)).imag, 0, 2 * np.pi, epsabs=1e-13, limit=200)[0]
    return complex(re, im) / (2 * math.pi)


def det_cofactor(m):
    """Determinant by Laplace expansion along the first row (small matrices only)."""
    m = [list(r) for r in m]
    if len(m) == 1:
        return m[0][0]
    total = 0
    for j in range(len(m)):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += (-1) ** j * m[0][j] * det_cofactor(minor)
    return total
