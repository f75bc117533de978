"""Closed-form ball solutions used as oracles and as frozen fields."""
from __future__ import annotations

import numpy as np

from ..geometry import Ball


class ZeroField:
    def __init__(self, domain=None):
        self.domain = domain

    def gradient(self, x):
        return np.zeros_like(np.atleast_2d(x), dtype=float)

    def potential(self, x):
        return np.zeros(len(np.atleast_2d(x)))


class BallUniformField:
    """``phi = rho0 (|y|^2 - R^2) / 6`` solving ``lap phi = rho0`` in a ball, zero on the wall."""

    def __init__(self, radius: float = 1.0, rho0: float = 1.0, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.rho0 = float(rho0)
        self.center = np.asarray(center, dtype=float)
        self.domain = Ball(radius, center)

    def potential(self, x):
        y = np.atleast_2d(x) - self.center
        return self.rho0 * (np.sum(y * y, axis=1) - self.radius**2) / 6.0

    def gradient(self, x):
        return self.rho0 * (np.atleast_2d(x) - self.center) / 3.0

    def density(self, x):
        return np.full(len(np.atleast_2d(x)), self.rho0)


class BallLinearField:
    """Unit-ball solution for ``rho = 1 + x_a``: ``(r^2-1)/6 + x_a (r^2-1)/10``."""

    def __init__(self, axis: int = 0):
        self.axis = axis
        self.domain = Ball(1.0)

    def density(self, x):
        return 1.0 + np.atleast_2d(x)[:, self.axis]

    def potential(self, x):
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=1)
        return (r2 - 1.0) / 6.0 + x[:, self.axis] * (r2 - 1.0) / 10.0

    def gradient(self, x):
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=1)
        g = x / 3.0 + x[:, [self.axis]] * x / 5.0
        g[:, self.axis] += (r2 - 1.0) / 10.0
        return g
