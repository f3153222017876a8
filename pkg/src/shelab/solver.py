"""Exponential-Euler time stepping for the stochastic heat equation on the torus.

The scheme is

    u_{k+1} = exp(dt Delta / 2) [u_k + sigma(u_k) dW_k],

with the increment dW_k coloured by the lattice covariance of the noise and
sigma frozen at the left end of the step.  The initial condition is u(0) = 1.

Besides the integrator this module holds the two continuum oracles used to
validate it: the covariance of the Gaussian solution (constant sigma) and the
second moment of the parabolic Anderson model (sigma(u) = u).
"""

import csv
from dataclasses import dataclass, field
import hashlib
import json
import math
from typing import Callable, Optional

import numpy as np
from scipy import fft as sfft
from scipy import integrate, signal, special
from scipy.interpolate import RegularGridInterpolator

from .errors import BlowUpError, ConfigError, Undetermined
from .grid import LatticeGrid
from .kernel import apply_multiplier, heat_multiplier
from .noise import NoiseIncrement, NoiseSampler, lattice_covariance
from .rng import seed_stream

SIGMA_KINDS = ("constant", "linear", "affine", "custom")

# elements per noise block; keeps a block of increments around 32 MB
_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion coefficient sigma(u).

    Use the constructors :meth:`constant`, :meth:`linear` (the parabolic
    Anderson model), :meth:`affine` and :meth:`custom`.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    func: Optional[Callable] = field(default=None, compare=False)
    deriv: Optional[Callable] = field(default=None, compare=False)
    lip_const: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SIGMA_KINDS:
            raise ValueError(f"unknown diffusion kind {self.kind!r}; expected one of {SIGMA_KINDS}")
        if self.kind == "custom":
            if self.func is None or self.lip_const is None:
                raise ValueError("custom diffusion needs an evaluator and a Lipschitz constant")
            if not self.lip_const >= 0:
                raise ValueError(f"Lipschitz constant must be >= 0, got {self.lip_const}")

    @classmethod
    def constant(cls, sigma0=1.0):
        return cls("constant", a=float(sigma0))

    @classmethod
    def linear(cls):
        return cls("linear", b=1.0)

    @classmethod
    def affine(cls, a, b):
        return cls("affine", a=float(a), b=float(b))

    @classmethod
    def custom(cls, func, lip, deriv=None):
        return cls("custom", func=func, deriv=deriv, lip_const=float(lip))

    def __call__(self, u):
        if self.kind == "custom":
            return np.asarray(self.func(u), dtype=float)
        if self.kind == "constant":
            return np.full_like(np.asarray(u, dtype=float), self.a)
        return self.a + self.b * np.asarray(u, dtype=float)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "custom":
            if self.deriv is None:
                raise ValueError("custom diffusion has no derivative evaluator")
            return np.asarray(self.deriv(u), dtype=float)
        return np.full_like(u, 0.0 if self.kind == "constant" else self.b)

    @property
    def lip(self):
        if self.kind == "custom":
            return self.lip_const
        return abs(self.b)

    @property
    def sigma_at_one(self):
        return float(self(1.0))

    @property
    def sigma_at_zero(self):
        return float(self(0.0))

    @property
    def is_zero(self):
        return self.kind != "custom" and self.a == 0 and self.b == 0

    def validate(self, n_check=257, span=10.0):
        """Check sigma(1) != 0 and the Lipschitz bound on sampled points.

        Returns the list of problems (empty when valid).
        """
        problems = []
        if self.sigma_at_one == 0:
            problems.append("sigma(1) must be nonzero (otherwise u stays deterministic)")
        x = np.linspace(-span, span, n_check)
        s = self(x)
        if not np.all(np.isfinite(s)):
            problems.append("sigma is not finite on the check points")
        else:
            slopes = np.abs(np.diff(s)) / np.diff(x)
            if np.max(slopes) > self.lip * (1 + 1e-9) + 1e-12:
                problems.append(f"sampled slope {np.max(slopes):.6g} exceeds Lipschitz constant {self.lip}")
        return problems

    def perturb(self, u, incr):
        """u + sigma(u) * incr, specialised for the built-in kinds."""
        if self.kind == "constant":
            return u + self.a * incr
        if self.kind == "linear" and self.a == 0 and self.b == 1:
            return u * (1.0 + incr)
        return u + self(u) * incr

    def to_dict(self):
        if self.kind == "custom":
            return {"kind": "custom", "lip": self.lip_const}
        if self.kind == "constant":
            return {"kind": "constant", "sigma0": self.a}
        if self.kind == "linear":
            return {"kind": "linear"}
        return {"kind": "affine", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class FieldFrame:
    t: float
    values: np.ndarray
    grid: LatticeGrid

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not fit grid {self.grid.shape}")
        self.values.flags.writeable = False

    @property
    def step_index(self):
        return int(round(self.t / self.grid.dt))


@dataclass
class Trajectory:
    """Frames at the requested output times, first frame at t = 0."""

    frames: list
    seed: tuple
    config_digest: str = ""
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        ts = [f.t for f in self.frames]
        if not ts or ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame times must start at 0 and increase strictly")

    @property
    def times(self):
        return [f.t for f in self.frames]

    def frame_at(self, t):
        for f in self.frames:
            if math.isclose(f.t, t, rel_tol=1e-12, abs_tol=1e-14):
                return f
        raise KeyError(f"no frame at t={t}")

    def digest(self):
        h = hashlib.sha256()
        for f in self.frames:
            h.update(np.float64(f.t).tobytes())
            h.update(np.ascontiguousarray(f.values).tobytes())
        return h.hexdigest()

    def to_csv(self, path):
        """Row-per-site export ``t,x_index,u``; in d = 2 the index is the flat row-major one."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "x_index", "u"))
            for f in self.frames:
                for i, v in enumerate(np.asarray(f.values).ravel()):
                    w.writerow((repr(float(f.t)), i, repr(float(v))))

    def summary(self):
        """Per-frame moments, min and max (JSON-ready)."""
        out = []
        for f in self.frames:
            v = np.asarray(f.values)
            out.append({"t": float(f.t), "mean": float(v.mean()), "second_moment": float(np.mean(v * v)),
                        "variance": float(v.var()), "min": float(v.min()), "max": float(v.max())})
        return {"seed": list(self.seed), "config_digest": self.config_digest, "frames": out}

    def summary_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)


def initial_frame(grid):
    return FieldFrame(0.0, np.ones(grid.shape), grid)


def step(frame, incr, sigma):
    """Advance ``frame`` by one exponential-Euler step driven by ``incr``."""
    g = frame.grid
    if incr.grid != g:
        raise ValueError("noise increment lives on a different grid")
    if not math.isclose(incr.dt, g.dt, rel_tol=1e-12):
        raise ValueError(f"increment dt={incr.dt} differs from grid dt={g.dt}")
    with np.errstate(all="ignore"):
        v = sigma.perturb(frame.values, incr.values)
        out = apply_multiplier(v, heat_multiplier(g, g.dt), g)
    k = frame.step_index + 1
    if not np.all(np.isfinite(out)):
        raise BlowUpError(k, k * g.dt)
    return FieldFrame(k * g.dt, out, g)


class Ensemble:
    """A batch of replicas advanced in lockstep.

    Each replica draws its white noise from its own keyed stream, so a
    replica's path does not depend on which batch it is run in.

    Parameters
    ----------
    grid : LatticeGrid
    model : NoiseModel
    sigma : DiffusionSpec
    base_seed : int
    replicas : sequence of int
        Replica indices; one noise stream each.
    purpose : str
        Stream label, so that e.g. centering runs use fresh noise.
    u0 : ndarray, optional
        Initial field, broadcast to every replica.  Defaults to 1.
    t0 : float
        Time of ``u0``.
    substeps : int
        White draws per step; the step's Brownian increment is their
        normalised sum.  Running with ``dt`` and ``substeps=2`` reproduces
        the noise path of ``dt/2`` with ``substeps=1``.
    """

    def __init__(self, grid, model, sigma, base_seed, replicas, purpose="noise",
                 u0=None, t0=0.0, substeps=1):
        self.grid = grid
        self.sigma = sigma
        self.sampler = NoiseSampler(model, grid)
        self.replicas = np.asarray(list(replicas), dtype=np.int64)
        self.streams = [seed_stream(base_seed, int(r), purpose) for r in self.replicas]
        self.substeps = int(substeps)
        shape = (len(self.replicas),) + grid.shape
        self.u = np.ones(shape) if u0 is None else np.broadcast_to(u0, shape).astype(float)
        self.k = int(round(t0 / grid.dt))
        self.aborted = np.full(len(self.replicas), -1, dtype=np.int64)
        self._mult = heat_multiplier(grid, grid.dt)
        self.tangent = None

    @property
    def t(self):
        return self.k * self.grid.dt

    @property
    def n(self):
        return len(self.replicas)

    def start_tangent(self, site):
        """Start a Malliavin derivative field at ``site`` from the current state.

        The derivative of the next state with respect to the noise at
        (current time, site) is the heat flow of sigma(u) * lattice delta.
        """
        idx = (slice(None),) + tuple(np.atleast_1d(site))
        d0 = np.zeros_like(self.u)
        d0[idx] = self.sigma(self.u[idx]) / self.grid.cell_volume
        self.tangent = d0
        self._tangent_fresh = True

    def draw(self, n_steps):
        """Coloured increments of shape (n_steps, n_replicas, *grid.shape)."""
        g, m = self.grid, self.substeps
        white = np.empty((n_steps, self.n) + g.shape)
        for i, rng in enumerate(self.streams):
            w = rng.standard_normal((n_steps * m,) + g.shape)
            if m > 1:
                w = w.reshape((n_steps, m) + g.shape).sum(axis=1) / math.sqrt(m)
            white[:, i] = w
        return self.sampler.color(white, g.dt)

    def advance(self, n_steps, record=None):
        """Advance all replicas by ``n_steps``; optionally append increments to ``record``."""
        g = self.grid
        per_step = self.n * int(np.prod(g.shape)) * max(self.substeps, 1)
        chunk = max(1, _BLOCK_ELEMS // per_step)
        axes = tuple(range(1, 1 + g.d))
        done = 0
        with np.errstate(all="ignore"):
            while done < n_steps:
                c = min(chunk, n_steps - done)
                incr = self.draw(c)
                if record is not None:
                    record.append(incr.copy())
                for j in range(c):
                    self._one_step(incr[j])
                    self.k += 1
                    bad = ~np.isfinite(self.u.sum(axis=axes))
                    new = bad & (self.aborted < 0)
                    if new.any():
                        self.aborted[new] = self.k
                done += c
        return self.u

    def _one_step(self, incr):
        g = self.grid
        if self.tangent is None:
            self.u = apply_multiplier(self.sigma.perturb(self.u, incr), self._mult, g)
            return
        if self._tangent_fresh:
            # no noise term in the step where the perturbation enters
            dv = self.tangent
            self._tangent_fresh = False
        else:
            dv = self.tangent + self.sigma.derivative(self.u) * self.tangent * incr
        both = np.stack([self.sigma.perturb(self.u, incr), dv])
        both = apply_multiplier(both, self._mult, g)
        self.u, self.tangent = both[0], both[1]

    def advance_to(self, t, record=None):
        target = self.grid.steps(t)
        if target < self.k:
            raise ValueError(f"cannot go back from t={self.t} to t={t}")
        return self.advance(target - self.k, record)


def _check_times(grid, t_end, output_times):
    problems = []
    if not t_end >= 0:
        problems.append(f"t_end must be >= 0, got {t_end}")
    for t in output_times:
        if t < 0 or t > t_end + 1e-12:
            problems.append(f"output time {t} outside [0, {t_end}]")
            continue
        try:
            grid.steps(t)
        except ValueError as exc:
            problems.append(str(exc))
    return problems


def simulate(grid, model, sigma, t_end, output_times, rng=None, store_noise=False,
             seed=(0, 0), config_digest=""):
    """Simulate one replica and return its :class:`Trajectory`.

    Parameters
    ----------
    grid : LatticeGrid
    model : NoiseModel
    sigma : DiffusionSpec
    t_end : float
        Final time, a multiple of ``grid.dt``.
    output_times : sequence of float
        Frame times in [0, t_end]; 0 is always included.
    rng : numpy.random.Generator, optional
        Noise stream.  Defaults to the keyed stream of ``seed``.
    store_noise : bool
        Keep the coloured increments, as needed to replay the path.
    seed : tuple
        ``(base, replica)`` recorded on the trajectory.

    Raises
    ------
    ConfigError
        Listing every invalid input.
    BlowUpError
        If the path stops being finite.
    """
    problems = _check_times(grid, t_end, output_times)
    if model.d != grid.d:
        problems.append(f"noise dimension {model.d} differs from grid dimension {grid.d}")
    problems += _sigma_problems(sigma)
    if problems:
        raise ConfigError(problems)
    if rng is None:
        rng = seed_stream(seed[0], seed[1], "noise")
    sampler = NoiseSampler(model, grid)
    mult = heat_multiplier(grid, grid.dt)
    times = sorted({0.0, *[float(t) for t in output_times]})
    targets = {grid.steps(t): t for t in times}
    n_total = grid.steps(t_end)
    frames = [initial_frame(grid)]
    noise = np.empty((n_total,) + grid.shape) if store_noise else None
    u = np.ones(grid.shape)
    with np.errstate(all="ignore"):
        for k in range(n_total):
            incr = sampler.color(rng.standard_normal(grid.shape), grid.dt)
            if store_noise:
                noise[k] = incr
            u = apply_multiplier(sigma.perturb(u, incr), mult, grid)
            if not np.all(np.isfinite(u)):
                raise BlowUpError(k + 1, (k + 1) * grid.dt)
            if k + 1 in targets:
                frames.append(FieldFrame(targets[k + 1], u.copy(), grid))
    return Trajectory(frames, tuple(seed), config_digest, noise)


def replay(grid, sigma, noise, n_steps=None):
    """Re-run a path from stored increments; yields u after each step."""
    mult = heat_multiplier(grid, grid.dt)
    u = np.ones(grid.shape)
    n = len(noise) if n_steps is None else n_steps
    for k in range(n):
        u = apply_multiplier(sigma.perturb(u, noise[k]), mult, grid)
        yield u


def _sigma_problems(sigma):
    if sigma.is_zero:
        return []
    return sigma.validate()


# ---------------------------------------------------------------------------
# continuum oracles


def _lag_points(lag, d):
    lag = np.asarray(lag, dtype=float).reshape(-1)
    if lag.size == 1 and d > 1:
        lag = np.repeat(lag, d)
    if lag.size != d:
        raise ValueError(f"lag must have {d} components")
    return lag


def gaussian_oracle_covariance(model, sigma0, t, lag, t2=None, epsrel=1e-10):
    """Covariance of the constant-sigma solution.

    Cov[u(t, x + lag), u(t2, x)] = sigma0^2 int_0^{t ^ t2} (p_{t + t2 - 2s} * f)(lag) ds,
    evaluated by quadrature in v with s = (t ^ t2) - v^2, which removes the
    endpoint singularity of white noise at lag 0.

    Raises
    ------
    Undetermined
        If the quadrature does not reach the requested accuracy.
    """
    t2 = t if t2 is None else t2
    if not (t > 0 and t2 > 0):
        raise ValueError("times must be positive")
    x = _lag_points(lag, model.d)
    m, gap = min(t, t2), abs(t - t2)

    def integrand(v):
        tau = gap + 2 * v * v
        if tau == 0:
            # p_tau(x) * 2v -> (2 / sqrt(8 pi)) in d=1 at x = 0, 0 otherwise
            if model.kind == "dirac" and not np.any(x):
                return 2.0 / math.sqrt(8 * math.pi)
            return 0.0
        return 2 * v * float(model.heat_convolved(tau, x))

    val, _, _ = _quad_full(integrand, math.sqrt(m), epsrel)
    return sigma0 ** 2 * val


def _quad_full(func, upper, epsrel):
    out = integrate.quad(func, 0.0, upper, epsabs=1e-300, epsrel=epsrel, limit=400, full_output=True)
    val, err = out[0], out[1]
    if len(out) > 3:
        raise Undetermined(f"quadrature failed: {out[3]}")
    if not np.isfinite(val):
        raise Undetermined("quadrature returned a non-finite value")
    return val, err, out[2]


def _white_weights(n, h):
    """Product-integration weights for int_0^{t_n} (4 pi (t_n - s))^{-1/2} m(s) ds.

    m is piecewise linear on the uniform grid.  Returns (alpha, beta): the
    contribution of m_j is alpha[n-1-j] from the interval to its right and
    beta[n-j] from the interval to its left.
    """
    k = np.arange(n, dtype=float)
    a = 2 * math.sqrt(h) * (np.sqrt(k + 1) - np.sqrt(k))
    b = (2.0 / 3.0) * h ** 1.5 * ((k + 1) ** 1.5 - k ** 1.5)
    c = 1.0 / math.sqrt(4 * math.pi)
    alpha = c * (b - k * h * a) / h
    beta = c * ((k + 1) * h * a - b) / h
    return alpha, beta


def _white_renewal(t, n, tol=1e-14, max_iter=500):
    """Solve m(s) = 1 + int_0^s (4 pi (s - r))^{-1/2} m(r) dr on n uniform steps."""
    h = t / n
    alpha, beta = _white_weights(n, h)
    m = np.ones(n + 1)
    for _ in range(max_iter):
        mz = m.copy()
        mz[0] = 0.0
        conv_a = signal.fftconvolve(alpha, m[:n])[: n]
        conv_b = signal.fftconvolve(beta, mz)[1: n + 1]
        new = np.empty_like(m)
        new[0] = 1.0
        new[1:] = 1.0 + conv_a + conv_b
        delta = np.max(np.abs(new - m))
        m = new
        if delta < tol * np.max(m):
            return m
    raise Undetermined("white-noise renewal iteration did not converge")


def _lag_grid(model, t, z):
    """Periodic lag lattice for the density kinds."""
    scale = math.sqrt(model.bandwidth) if model.kind == "gaussian" else 1.0 / model.rate
    dz = scale / 16
    reach = 12 * math.sqrt(2 * t) + (12 * scale if model.kind == "gaussian" else 40 * scale)
    half = max(reach, float(np.max(np.abs(z))) + reach)
    n = 2 ** math.ceil(math.log2(2 * half / dz))
    if model.d == 2:
        n = min(n, 1024)
        dz = 2 * half / n
    return LatticeGrid(model.d, n, dz, 1.0)


def _density_renewal(model, t, n_steps, lg):
    """M(t, .) on the lag lattice by the implicit trapezoid rule in time.

    M_n = 1 + h [ sum_{j<n} w_j exp((t_n - s_j) Delta)(f M_j) + (1/2) f M_n ],
    where the j = n term is solved exactly for M_n (it is pointwise).
    """
    h = t / n_steps
    lags = lg.lags()
    pts = np.stack(np.meshgrid(*([lags] * lg.d), indexing="ij"), axis=-1)
    f = model.density(pts)
    decay = np.exp(-h * lg.squared_wavenumbers())
    axes = lg.axes
    m = np.ones(lg.shape)
    acc = np.zeros_like(sfft.rfftn(m, axes=axes))
    acc += 0.5 * sfft.rfftn(f * m, axes=axes)
    for n in range(1, n_steps + 1):
        acc *= decay
        rhs = 1.0 + h * sfft.irfftn(acc, s=lg.shape, axes=axes)
        m = rhs / (1.0 - 0.5 * h * f)
        acc += (1.0 if n < n_steps else 0.0) * sfft.rfftn(f * m, axes=axes)
    return m, lags


def _lattice_value(field, lags, z, d):
    """Linear interpolation of a periodic lag-lattice function at z."""
    order = np.argsort(lags)
    ls = lags[order]
    if d == 1:
        return float(np.interp(z[0], ls, field[order]))
    f = field[np.ix_(order, order)]
    return float(RegularGridInterpolator((ls, ls), f)(z[None, :])[0])


def pam_second_moment_oracle(model, t, lag=0.0, rtol=1e-6, max_steps=1 << 16):
    """E[u(t, x) u(t, x + lag)] for the parabolic Anderson model with u(0) = 1.

    Solves the renewal equation

        M(t, z) = 1 + int_0^t int f(dw) p_{2(t-s)}(z - w) M(s, w) ds

    on successively refined time grids until two refinements agree to
    ``rtol``.  For white noise only M(s, 0) enters and the equation is solved
    by fixed-point iteration with product-integration weights for the
    (t - s)^{-1/2} kernel.  Density kinds are marched in time on a periodic
    lag lattice.

    Raises
    ------
    Undetermined
        When the step refinement does not settle.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    z = _lag_points(lag, model.d)
    if model.kind == "dirac":
        prev = None
        n = 256
        while n <= max_steps:
            m = _white_renewal(t, n)
            if prev is not None and abs(m[-1] - prev) <= rtol * m[-1]:
                break
            prev = m[-1]
            n *= 2
        else:
            raise Undetermined("renewal solution did not settle under step refinement")
        if not np.any(z):
            return float(m[-1])
        s_grid = np.linspace(0.0, t, len(m))
        val, _, _ = _quad_full(
            lambda r: float(np.exp(-z[0] ** 2 / (4 * r)) / math.sqrt(4 * math.pi * r))
            * np.interp(t - r, s_grid, m),
            t, 1e-10)
        return 1.0 + val
    lg = _lag_grid(model, t, z)
    prev = None
    n = 32
    while n <= min(max_steps, 4096):
        mfield, lags = _density_renewal(model, t, n, lg)
        cur = _lattice_value(mfield, lags, z, model.d)
        if prev is not None and abs(cur - prev) <= rtol * cur:
            # Richardson step for the O(h^2) time error
            return cur + (cur - prev) / 3.0
        prev = cur
        n *= 2
    raise Undetermined("renewal solution did not settle under step refinement")


def pam_second_moment_picard(model, t, lag=0.0, tol=1e-14, max_terms=400):
    """Truncated chaos (Picard) expansion of the PAM second moment.

    For white noise the n-th term at lag 0 is (t/4)^{n/2} / Gamma(n/2 + 1);
    other lags integrate p_{2r}(lag) against these terms.  For density kinds
    the terms J_{n+1}(t) = int_0^t exp((t-s)Delta)(f J_n(s)) ds are built
    explicitly on a time grid with Simpson weights.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    z = _lag_points(lag, model.d)
    if model.kind == "dirac":
        def term(n, s):
            return (s / 4) ** (n / 2) / special.gamma(n / 2 + 1)
        if not np.any(z):
            total = 0.0
            for n in range(max_terms):
                c = term(n, t)
                total += c
                if n > 2 and c < tol * total:
                    return total
            raise Undetermined("Picard series did not converge")
        total = 1.0
        for n in range(max_terms):
            c, _, _ = _quad_full(
                lambda r: math.exp(-z[0] ** 2 / (4 * r)) / math.sqrt(4 * math.pi * r) * term(n, t - r),
                t, 1e-12)
            total += c
            if n > 2 and c < tol * total:
                return total
        raise Undetermined("Picard series did not converge")
    lg = _lag_grid(model, t, z)
    lags = lg.lags()
    pts = np.stack(np.meshgrid(*([lags] * lg.d), indexing="ij"), axis=-1)
    f = model.density(pts)
    n_steps = 128
    s = np.linspace(0.0, t, n_steps + 1)
    h = t / n_steps
    k2 = lg.squared_wavenumbers()
    axes = lg.axes
    current = np.ones((n_steps + 1,) + lg.shape)
    total = current[-1].copy()
    for _ in range(max_terms):
        src = sfft.rfftn(f * current, axes=axes)
        nxt = np.zeros_like(current)
        for i in range(1, n_steps + 1):
            w = _simpson_like_weights(i) * h
            spec = np.tensordot(w, src[: i + 1] * np.exp(-(s[i] - s[: i + 1]).reshape((-1,) + (1,) * lg.d) * k2), axes=1)
            nxt[i] = sfft.irfftn(spec, s=lg.shape, axes=axes)
        current = nxt
        total += current[-1]
        if np.max(np.abs(current[-1])) < tol * np.max(total):
            return _lattice_value(total, lags, z, model.d)
    raise Undetermined("Picard series did not converge")


def _simpson_like_weights(i):
    """Composite Simpson weights on i intervals (trapezoid fallback on the last odd one)."""
    w = np.zeros(i + 1)
    if i == 1:
        w[:] = 0.5
        return w
    even = i - (i % 2)
    w[0:even + 1:2] = 2.0 / 3.0
    w[1:even:2] = 4.0 / 3.0
    w[0] = w[even] = 1.0 / 3.0
    if i % 2:
        w[even] += 0.5
        w[i] += 0.5
    return w


# ---------------------------------------------------------------------------
# exact lattice moments of the scheme


def scheme_two_point(grid, model, sigma, t):
    """E[u_n(x) u_n(x + lag)] of the discrete scheme, for affine sigma.

    For sigma(u) = a + b u and E[u] = 1 the two-point function obeys the
    closed recursion

        C_{k+1} = K^2 [C_k + dt f_lat (a^2 + 2ab + b^2 C_k)],

    with K the one-step heat multiplier.  Returned on the lattice lags in FFT
    order.  This isolates Monte Carlo error from discretisation error.
    """
    if sigma.kind == "custom":
        raise ValueError("closed moment recursion needs an affine sigma")
    fl = lattice_covariance(model, grid)
    k2 = heat_multiplier(grid, 2 * grid.dt)
    a, b = sigma.a, sigma.b
    c = np.ones(grid.shape)
    for _ in range(grid.steps(t)):
        c = apply_multiplier(c + grid.dt * fl * (a * a + 2 * a * b + b * b * c), k2, grid)
    return c
