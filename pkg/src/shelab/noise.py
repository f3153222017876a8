"""Spatial covariance models for the driving noise and lattice noise increments.

Fourier transforms follow the convention  h^(z) = int exp(i x.z) h(x) dx,
so that f^ of a probability density is its characteristic function and the
(2 pi)^{-d} factors appear explicitly wherever f^ is integrated.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import fft as sfft
from scipy import integrate, optimize, special

from .kernel import heat_kernel
from .grid import LatticeGrid

KINDS = ("dirac", "gaussian", "exponential")


@dataclass(frozen=True)
class NoiseModel:
    """Covariance measure f of the noise.

    ``dirac`` is space-time white noise (d = 1 only), ``gaussian`` has density
    p_b with ``bandwidth`` b, and ``exponential`` has density
    (rate/2)^d exp(-rate |x|_1).  All three have unit total mass.
    """

    kind: str
    d: int = 1
    bandwidth: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.kind == "dirac" and self.d != 1:
            raise ValueError("white noise (dirac) violates Dalang's condition for d >= 2")
        if self.kind == "gaussian" and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.kind == "exponential" and not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    @property
    def total_mass(self):
        return 1.0

    @property
    def has_density(self):
        return self.kind != "dirac"

    def density(self, x):
        """Density of f at points ``x`` (last axis = coordinates)."""
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if self.kind == "gaussian":
            return heat_kernel(self.bandwidth, x, self.d)
        if self.kind == "exponential":
            lam = self.rate
            return (lam / 2) ** self.d * np.exp(-lam * np.sum(np.abs(x), axis=-1))
        raise ValueError("the dirac model has no density")

    def mass_in_box(self, a):
        """f([-a, a]^d)."""
        if a <= 0:
            return 0.0
        if self.kind == "dirac":
            return 1.0
        if self.kind == "gaussian":
            one = math.erf(a / math.sqrt(2 * self.bandwidth))
        else:
            one = -math.expm1(-self.rate * a)
        return one ** self.d

    def mass_outside_box(self, a):
        """f(R^d minus [-a, a]^d)."""
        if a <= 0:
            return self.total_mass
        if self.kind == "dirac":
            return 0.0
        if self.kind == "gaussian":
            inside = math.erf(a / math.sqrt(2 * self.bandwidth))
            return -math.expm1(self.d * math.log(inside)) if inside > 0 else 1.0
        tail = math.exp(-self.rate * a)
        return -math.expm1(self.d * math.log1p(-tail))

    def heat_convolved(self, tau, x):
        """(p_tau * f)(x) in closed form."""
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if self.kind == "dirac":
            return heat_kernel(tau, x, 1)
        if self.kind == "gaussian":
            return heat_kernel(tau + self.bandwidth, x, self.d)
        out = np.ones(x.shape[:-1])
        for j in range(self.d):
            out = out * _laplace_gauss(self.rate, tau, x[..., j])
        return out


def _laplace_gauss(lam, tau, x):
    """1-d convolution of N(0, tau) with the Laplace density (lam/2) exp(-lam|y|)."""
    x = np.abs(np.asarray(x, dtype=float))
    if tau == 0:
        return lam / 2 * np.exp(-lam * x)
    s = math.sqrt(2 * tau)

    def side(sign):
        # exp(lam^2 tau / 2 - sign*lam*x) erfc((lam tau - sign*x) / sqrt(2 tau))
        w = (lam * tau - sign * x) / s
        pos = special.erfcx(np.maximum(w, 0.0)) * np.exp(-x * x / (2 * tau))
        neg = np.exp(lam * lam * tau / 2 - sign * lam * x) * special.erfc(np.minimum(w, 0.0))
        return np.where(w >= 0, pos, neg)

    return lam / 4 * (side(1.0) + side(-1.0))


def spectral_density(model, z):
    """Density of f^ at frequencies ``z`` (last axis = coordinates)."""
    z = np.asarray(z, dtype=float)
    if model.d == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != model.d:
        raise ValueError(f"expected frequencies with {model.d} coordinates, got shape {z.shape}")
    if model.kind == "dirac":
        out = np.ones(z.shape[:-1])
    elif model.kind == "gaussian":
        out = np.exp(-0.5 * model.bandwidth * np.sum(z * z, axis=-1))
    else:
        lam2 = model.rate ** 2
        out = np.prod(lam2 / (lam2 + z * z), axis=-1)
    return out[()] if out.ndim == 0 else out


def has_zero_atom(model):
    """Whether f^ charges the origin.

    Always False for the built-in kinds: their spectral measures have densities,
    so spatial averages of the solution are ergodic.
    """
    return False


# -- spectral integrals ------------------------------------------------------

@dataclass(frozen=True)
class DalangResult:
    """Outcome of a spectral integral: ``status`` is finite, divergent or undetermined."""

    value: float
    status: str
    abserr: float = 0.0

    @property
    def finite(self):
        return self.status == "finite"


def _quad(func, a, b, epsrel, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(func, a, b, epsabs=0.0, epsrel=epsrel, limit=400, full_output=1, **kw)
    value, err = out[0], out[1]
    ok = len(out) == 3  # a fourth element (message) means quad flagged a problem
    return value, err, ok


def _radial_polar_integral(model, radial_weight, epsrel):
    """int_{R^d} f^(z) w(|z|) dz via r = tan(theta) (plus polar angle in d = 2).

    ``radial_weight(theta)`` returns the Jacobian-adjusted factor multiplying
    f^ at radius tan(theta).
    """
    half = math.pi / 2
    if model.d == 1:
        def g(th):
            return 2.0 * spectral_density(model, math.tan(th)) * radial_weight(th)
        return _quad(g, 0.0, half, epsrel)

    ok_all = [True]

    def inner(phi):
        c, s = math.cos(phi), math.sin(phi)

        def g(th):
            r = math.tan(th)
            return spectral_density(model, np.array([r * c, r * s])) * math.tan(th) * radial_weight(th)

        v, _, ok = _quad(g, 0.0, half, epsrel)
        ok_all[0] &= ok
        return v

    # all built-in spectra are symmetric under z_j -> -z_j
    v, err, ok = _quad(inner, 0.0, half, epsrel)
    return 4.0 * v, 4.0 * err, ok and ok_all[0]


def dalang_integral(model, alpha, epsrel=1e-10):
    """int f^(dz) / (1 + |z|^2)^{1 - alpha}.

    Divergence is decided analytically (a flat spectrum in d dimensions
    diverges iff 2 (1 - alpha) <= d; the Gaussian and Laplace-type spectra are
    integrable for every alpha in [0, 1]).  Finite values come from adaptive
    quadrature after the substitution |z| = tan(theta); a quadrature that does
    not certify its accuracy yields status ``undetermined``.
    """
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if model.kind == "dirac" and 2 * (1 - alpha) <= model.d:
        return DalangResult(math.inf, "divergent")

    def w(th):
        # (1 + tan^2)^{alpha - 1} * sec^2 = cos(th)^{-2 alpha}
        return math.cos(th) ** (-2.0 * alpha) if th < math.pi / 2 else 0.0

    value, err, ok = _radial_polar_integral(model, w, epsrel)
    if not ok or not np.isfinite(value) or err > max(1e-6 * abs(value), 1e-12):
        return DalangResult(value, "undetermined", err)
    return DalangResult(value, "finite", err)


def upsilon(model, lam):
    """(2 / (2 pi)^d) int f^(dz) / (2 lam + |z|^2); strictly decreasing in ``lam``."""
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if model.kind == "dirac" and model.d >= 2:
        raise ValueError("Dalang's condition fails for this model")
    if model.kind == "exponential":
        return _upsilon_exponential(model, lam)
    a = math.sqrt(2.0 * lam)
    if model.d == 1:
        # z = a tan(theta): dz / (a^2 + z^2) = dtheta / a
        def g(th):
            return 2.0 * spectral_density(model, a * math.tan(th)) / a
        v, err, ok = _quad(g, 0.0, math.pi / 2, 1e-13)
    else:
        def inner(phi):
            c, s = math.cos(phi), math.sin(phi)

            def g(th):
                r = a * math.tan(th)
                return spectral_density(model, np.array([r * c, r * s])) * math.tan(th)
            return _quad(g, 0.0, math.pi / 2, 1e-12)[0]
        v, err, ok = _quad(inner, 0.0, math.pi / 2, 1e-12)
        v, err = 4.0 * v, 4.0 * err
    return 2.0 / (2 * math.pi) ** model.d * v


def _upsilon_exponential(model, lam):
    # 1 / (2 lam + |z|^2) = int_0^inf exp(-s (2 lam + |z|^2)) ds and the spectrum is a product
    # over coordinates, each integrating to pi r erfcx(r sqrt(s)); integrate over v = log s
    r, d = model.rate, model.d

    def g(v):
        s = math.exp(v)
        return math.exp(v - 2.0 * lam * s) * (math.pi * r * special.erfcx(r * math.sqrt(s))) ** d

    knee = -math.log(2.0 * lam)
    lo, hi = min(-60.0, knee - 60.0), knee + math.log(60.0)
    v = _quad(g, lo, knee, 1e-13)[0] + _quad(g, knee, hi, 1e-13)[0]
    return 2.0 / (2 * math.pi) ** d * v


_LOG_LAM_RANGE = (-40.0, 40.0)


def lambda_inverse(model, y):
    """Inverse of ``upsilon``: the rate at which upsilon equals ``y``."""
    if not y > 0:
        raise ValueError(f"y must be positive, got {y}")
    lo, hi = _LOG_LAM_RANGE
    top, bottom = upsilon(model, math.exp(lo)), upsilon(model, math.exp(hi))
    if not bottom < y < top:
        raise ValueError(f"y={y} outside the attainable range ({bottom:.6g}, {top:.6g}) of upsilon")
    log_y = math.log(y)
    # upsilon underflows to zero at huge rates in d = 2; floor it inside the log
    s = optimize.brentq(lambda s: math.log(max(upsilon(model, math.exp(s)), 1e-300)) - log_y,
                        lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=300)
    return math.exp(s)


# -- lattice noise -----------------------------------------------------------

def lattice_covariance(model, grid):
    """Discretised covariance f_Delta at the lattice lags (FFT order).

    Densities are sampled at periodised lags and rescaled so that
    sum f_Delta * cell volume equals the total mass; white noise puts
    1 / cell volume at lag zero.
    """
    if model.d != grid.d:
        raise ValueError(f"model dimension {model.d} does not match grid dimension {grid.d}")
    if model.kind == "dirac":
        c = np.zeros(grid.shape)
        c[(0,) * grid.d] = 1.0 / grid.cell_volume
        return c
    lag = grid.lags()
    images = range(-2, 3)
    if grid.d == 1:
        c = sum(model.density(lag + k * grid.length) for k in images)
    else:
        c = np.zeros(grid.shape)
        for k1 in images:
            for k2 in images:
                pts = np.stack(np.meshgrid(lag + k1 * grid.length, lag + k2 * grid.length,
                                           indexing="ij"), axis=-1)
                c += model.density(pts)
    c = 0.5 * (c + np.roll(np.flip(c, axis=tuple(range(grid.d))), 1, axis=tuple(range(grid.d))))
    return c * model.total_mass / (c.sum() * grid.cell_volume)


def lattice_spectrum(model, grid):
    """Eigenvalues of the circulant covariance f_Delta, on the ``rfftn`` layout."""
    c = lattice_covariance(model, grid)
    lam = sfft.rfftn(c).real
    tol = 1e-12 * np.max(np.abs(lam))
    bad = lam < -tol
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise RuntimeError(f"negative discrete spectrum {lam[tuple(idx)]:.3e} at frequency index {tuple(idx)}")
    return np.maximum(lam, 0.0)


@dataclass(frozen=True)
class NoiseIncrement:
    """Cell-averaged noise eta([t, t + dt] x cell) / |cell| on every site.

    Cov(values[x], values[y]) = dt * f_Delta(x - y).
    """

    values: np.ndarray
    dt: float
    grid: LatticeGrid


class NoiseSampler:
    """Colours white Gaussian arrays into lattice increments for one (model, grid)."""

    def __init__(self, model, grid):
        if model.d != grid.d:
            raise ValueError(f"model dimension {model.d} does not match grid dimension {grid.d}")
        self.model = model
        self.grid = grid
        self.white = model.kind == "dirac"
        if self.white:
            self._scale = 1.0 / math.sqrt(grid.cell_volume)
        else:
            self._sqrt_spec = np.sqrt(lattice_spectrum(model, grid))

    def color(self, white, dt):
        """Turn i.i.d. N(0, 1) site values into increments over a step ``dt``."""
        if self.white:
            return white * (self._scale * math.sqrt(dt))
        g = self.grid
        spec = sfft.rfftn(white, axes=g.axes)
        spec *= self._sqrt_spec
        out = sfft.irfftn(spec, s=g.shape, axes=g.axes)
        out *= math.sqrt(dt)
        return out


def sample_increment(model, grid, dt, rng):
    """Draw one noise increment over a step of length ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    sampler = NoiseSampler(model, grid)
    return NoiseIncrement(sampler.color(rng.standard_normal(grid.shape), dt), dt, grid)
