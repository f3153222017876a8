"""Gaussian heat kernel, its product identities, and the periodic heat semigroup.

Points are passed as arrays whose last axis holds the ``d`` coordinates.  In
one dimension a plain array of coordinates is also accepted.
"""

import math

import numpy as np
from scipy import fft as sfft


def _points(x, d):
    x = np.asarray(x, dtype=float)
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"expected points with {d} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return x


def _check_time(t, name="t"):
    if not (np.isfinite(t) and t > 0):
        raise ValueError(f"{name} must be positive and finite, got {t}")


def heat_kernel(t, x, d=1):
    """(2 pi t)^{-d/2} exp(-|x|^2 / 2t), vectorised over leading axes of ``x``."""
    _check_time(t)
    x = _points(x, d)
    r2 = np.sum(x * x, axis=-1)
    out = np.exp(-r2 / (2 * t)) / (2 * math.pi * t) ** (d / 2)
    return out[()] if out.ndim == 0 else out


def kernel_product_split(sigma, x, y, d=1):
    """Factors of p_s(x) p_s(y) = 2^d p_{2s}(x - y) p_{2s}(x + y).

    Returns ``(p_{2s}(x - y), p_{2s}(x + y))``.
    """
    _check_time(sigma, "sigma")
    x, y = _points(x, d), _points(y, d)
    return heat_kernel(2 * sigma, x - y, d), heat_kernel(2 * sigma, x + y, d)


def kernel_time_merge(sigma, tau, x, d=1):
    """p_s(x) p_r(x) = (2 pi)^{-d/2} (s + r)^{-d/2} p_{sr/(s+r)}(x).

    Returns ``(prefactor, p_{sr/(s+r)}(x))``.
    """
    _check_time(sigma, "sigma")
    _check_time(tau, "tau")
    x = _points(x, d)
    pref = (2 * math.pi) ** (-d / 2) * (sigma + tau) ** (-d / 2)
    return pref, heat_kernel(sigma * tau / (sigma + tau), x, d)


def kernel_double_argument(sigma, x, d=1):
    """Both sides of p_s(2x) = 2^{-d} (2 pi s)^{d/2} p_{s/2}(x)^2."""
    _check_time(sigma, "sigma")
    x = _points(x, d)
    lhs = heat_kernel(sigma, 2 * x, d)
    rhs = 2.0 ** (-d) * (2 * math.pi * sigma) ** (d / 2) * heat_kernel(sigma / 2, x, d) ** 2
    return lhs, rhs


def heat_multiplier(grid, t):
    """Fourier multiplier exp(-t |z|^2 / 2) on the ``rfftn`` layout of ``grid``."""
    return np.exp(-0.5 * t * grid.squared_wavenumbers())


def apply_multiplier(values, multiplier, grid):
    """Multiply the spectrum of real grid functions by ``multiplier`` (broadcast over batch axes)."""
    axes = grid.axes
    spec = sfft.rfftn(values, axes=axes)
    spec *= multiplier
    return sfft.irfftn(spec, s=grid.shape, axes=axes)


def semigroup_convolve(field, t, grid):
    """Apply the periodic heat semigroup exp(t Delta / 2) to ``field``.

    Extra leading axes are treated as a batch.  The multiplier is exact on the
    torus, so constants are fixed, mass is conserved and the map commutes with
    lattice shifts.
    """
    field = np.asarray(field, dtype=float)
    if field.shape[field.ndim - grid.d:] != grid.shape:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.shape}")
    _check_time(t)
    return apply_multiplier(field, heat_multiplier(grid, t), grid)


def wrapped_heat_kernel(t, grid, center=None, images=3):
    """Periodised continuum kernel sum_k p_t(x - c + k L) on the lattice sites."""
    _check_time(t)
    c = np.zeros(grid.d) if center is None else np.asarray(center, dtype=float).reshape(grid.d)
    x1 = grid.coords()
    out = np.ones(grid.shape)
    # the kernel factorises over coordinates
    for axis in range(grid.d):
        diff = x1 - c[axis]
        acc = np.zeros_like(x1)
        for k in range(-images, images + 1):
            acc += np.exp(-(diff + k * grid.length) ** 2 / (2 * t))
        acc /= math.sqrt(2 * math.pi * t)
        shape = [1] * grid.d
        shape[axis] = grid.n_sites
        out = out * acc.reshape(shape)
    return out
