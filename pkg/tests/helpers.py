"""Shared numerical oracles for the test suite."""

import numpy as np


def central_difference(f, theta, rel_step=1e-6):
    theta = np.asarray(theta, float)
    out = np.empty(len(theta))
    for i in range(len(theta)):
        h = rel_step * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (2 * h)
    return out
