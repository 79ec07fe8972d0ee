"""Scalar reference evaluation of the uniaxial damage model.

Written independently of the Rust implementation; the printed values are
frozen into the material unit tests.
"""
from fractions import Fraction as F

lam, mu, g, K, C0, C1, al, be, n = 12500.0, 18750.0, -10.0, 0.00485, 0.0, 0.0019, 2237.5, -2116.5, 10
fc = 50.0


def D(w):
    return (lam + 2 * mu) * (2 * (lam + mu) + 4 * (al + be) * w) - 2 * (lam + al * w) ** 2


def strains(s, w):
    e2 = ((lam + al * w) * s + abs(g) * w * (lam + 2 * mu)) / D(w)
    e1 = (s + 2 * (lam + al * w) * e2) / (lam + 2 * mu)
    return e1, e2


def kappa(e1, e2, w):
    e1s = -e1  # signed axial strain
    return (lam + 2 * mu) * (2 * (lam + mu) + 4 * (al + be) * w
                             - al * g / (2 * C1) * (2 * e2 + e1s)
                             - g * g / (2 * C1)) - 2 * (lam + al * w) ** 2


def rate(s, w):
    e1, e2 = strains(s, w)
    f = abs(g) * e2 - (C0 - 2 * C1 * w)
    if f <= 0:
        return 0.0
    return abs(g) / (2 * C1) * (f / K) ** n * (lam + al * w) / kappa(e1, e2, w)


def ramp(s0, s1, w, m):
    h = (s1 - s0) / m
    if h <= 0:
        return w
    for i in range(m):
        w += rate(s0 + (i + 0.5) * h, w) * h
    return w


print("kappa pristine", float(F(50000) * F(62500) - 2 * F(12500) ** 2 - F(50000) * F(100) / F("0.0038")))
print("dw top (s=45, w=0, ds=1) %.6g" % rate(45.0, 0.0))
w0 = ramp(0, 0.2 * fc, 0.0, 20)
w1 = ramp(0.2 * fc, 0.9 * fc, w0, 20)
print("cycle dw (20 substeps) %.6g" % (w1 - w0))
