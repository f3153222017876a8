"""Periodic lattice used as a finite stand-in for R^d."""

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np


@dataclass(frozen=True)
class LatticeGrid:
    """Uniform periodic grid with ``n_sites`` points per axis.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 or 2.
    n_sites : int
        Sites per axis, a power of two.
    dx : float
        Lattice spacing.
    dt : float
        Time step used by the solver.
    """

    d: int
    n_sites: int
    dx: float
    dt: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        n = int(self.n_sites)
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_sites must be a power of two >= 2, got {self.n_sites}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def length(self):
        return self.n_sites * self.dx

    @property
    def shape(self):
        return (self.n_sites,) * self.d

    @property
    def axes(self):
        return tuple(range(-self.d, 0))

    @property
    def cell_volume(self):
        return self.dx ** self.d

    def coords(self):
        """Site coordinates along one axis, starting at 0."""
        return np.arange(self.n_sites) * self.dx

    def lags(self):
        """Signed minimal-image lag along one axis, in FFT order."""
        m = np.fft.fftfreq(self.n_sites, d=1.0 / self.n_sites)
        return m * self.dx

    def squared_wavenumbers(self):
        """|z|^2 on the half-spectrum layout used by ``rfftn``."""
        full = 2 * np.pi * np.fft.fftfreq(self.n_sites, d=self.dx)
        half = 2 * np.pi * np.fft.rfftfreq(self.n_sites, d=self.dx)
        if self.d == 1:
            return half ** 2
        return full[:, None] ** 2 + half[None, :] ** 2

    def window_sites(self, n_window):
        """Number of sites per axis covering the window [0, N)."""
        m = n_window / self.dx
        k = int(round(m))
        if abs(m - k) > 1e-9 * max(1.0, m) or k < 1:
            raise ValueError(f"window {n_window} is not a whole number of cells (dx={self.dx})")
        if k > self.n_sites:
            raise ValueError(f"window {n_window} exceeds the domain length {self.length}")
        return k

    def steps(self, t):
        """Number of solver steps to reach ``t``; ``t`` must be a multiple of dt."""
        m = t / self.dt
        k = int(round(m))
        if abs(m - k) > 1e-8 * max(1.0, m):
            raise ValueError(f"time {t} is not a multiple of dt={self.dt}")
        return k

    def margin_ok(self, n_window, t_max):
        return self.length >= n_window + 12.0 * math.sqrt(t_max)

    def with_dt(self, dt):
        return LatticeGrid(self.d, self.n_sites, self.dx, dt)


def fit_time_step(dt_max, times):
    """Largest step <= dt_max that divides every time in ``times`` exactly.

    Times are read as decimals (0.3 -> 3/10), so their common quantum is exact.
    """
    fr = [Fraction(str(float(t))).limit_denominator(10 ** 9) for t in times if t > 0]
    if not fr:
        return float(dt_max)
    q = fr[0]
    for f in fr[1:]:
        # gcd of rationals a/b, c/d = gcd(a*d, c*b) / (b*d)
        num = math.gcd(q.numerator * f.denominator, f.numerator * q.denominator)
        q = Fraction(num, q.denominator * f.denominator)
    k = math.ceil(float(q) / dt_max - 1e-12)
    return float(q) / k


def grid_for(d, dx, min_length, dt=None, min_sites=2):
    """Smallest power-of-two grid with spacing ``dx`` covering ``min_length``."""
    n = max(min_sites, 2)
    while n * dx < min_length - 1e-12:
        n *= 2
    return LatticeGrid(d, n, dx, dt if dt is not None else dx * dx / 2)
