"""Shared grid helpers: uniform Dirichlet grids in 1D/2D and kernel convolutions.

Interior-node grids: the wall value is implicitly zero, so plain h-weighted
sums are the trapezoid rule for functions vanishing at the boundary.
"""
import numpy as np
from scipy.signal import convolve as _sig_convolve


class Grid1D:
    def __init__(self, extent, points):
        if extent <= 0:
            raise ValueError("grid extent must be positive")
        if points < 8:
            raise ValueError("need at least 8 grid points")
        self.extent = float(extent)
        self.points = int(points)
        self.h = 2.0 * extent / (points + 1)
        self.x = -extent + self.h * (1.0 + np.arange(points))
        self.ndim = 1

    @property
    def cell_volume(self):
        return self.h

    def inner(self, u, v):
        return np.sum(np.conj(u) * v) * self.h

    def norm(self, u):
        return np.sqrt(np.sum(np.abs(u) ** 2).real * self.h)

    def normalize(self, u):
        return u / self.norm(u)

    def difference_nodes(self):
        n = self.points
        return (np.arange(2 * n - 1) - (n - 1)) * self.h

    def convolve(self, rho, kernel_on_diffs):
        """(kernel * rho)(x_i) = sum_j kernel(x_i - x_j) rho_j h, direct sum."""
        n = self.points
        return np.convolve(rho, kernel_on_diffs)[n - 1:2 * n - 1] * self.h


class Grid2D:
    def __init__(self, extent, points):
        if extent <= 0:
            raise ValueError("grid extent must be positive")
        if points < 8:
            raise ValueError("need at least 8 points per axis")
        self.extent = float(extent)
        self.points = int(points)
        self.h = 2.0 * extent / (points + 1)
        ax = -extent + self.h * (1.0 + np.arange(points))
        self.axis = ax
        self.X, self.Y = np.meshgrid(ax, ax, indexing="ij")
        self.ndim = 2

    @property
    def cell_volume(self):
        return self.h ** 2

    @property
    def size(self):
        return self.points ** 2

    def inner(self, u, v):
        return np.sum(np.conj(u) * v) * self.h ** 2

    def norm(self, u):
        return np.sqrt(np.sum(np.abs(u) ** 2).real * self.h ** 2)

    def normalize(self, u):
        return u / self.norm(u)

    def difference_nodes(self):
        n = self.points
        d = (np.arange(2 * n - 1) - (n - 1)) * self.h
        return np.meshgrid(d, d, indexing="ij")

    def convolve(self, rho, kernel_on_diffs):
        # scipy picks direct vs fft; both realize the same double sum
        rho2 = rho.reshape(self.points, self.points)
        out = _sig_convolve(rho2, kernel_on_diffs, mode="same", method="auto")
        return out.reshape(rho.shape) * self.h ** 2


def trapezoid_radial(f_vals, r, d):
    """integral of f over R^d for radial samples f(r), d in {1,2,3}."""
    surf = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}[d]
    return surf * np.trapezoid(f_vals * r ** (d - 1), r)
