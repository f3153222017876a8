"""Observables g(u), rescaled spatial averages and their variance functionals.

For a window [0, N)^d the rescaled average is

    N^{d/2} (N^{-d} sum_{x in window} g(u(t, x)) dx^d - E g(u(t, 0))),

and B_{N, t1, t2}(g) is the covariance of two such averages.  Its large-N
limit is the integrated spatial covariance of g(u), estimated here from lag
covariances pooled over all base points of the torus.
"""

from dataclasses import dataclass, field, asdict
import json
import math
from typing import Callable, Optional

import numpy as np
from scipy import fft as sfft
from scipy import special

from .errors import DomainViolation

OBS_KINDS = ("identity", "log", "power", "custom")


@dataclass(frozen=True)
class ObservableSpec:
    """The function g together with g' and g''.

    ``positive_domain`` observables are only defined for u > 0.
    """

    kind: str
    alpha: Optional[float] = None
    func: Optional[Callable] = field(default=None, compare=False)
    d1: Optional[Callable] = field(default=None, compare=False)
    d2: Optional[Callable] = field(default=None, compare=False)
    positive_domain: bool = False
    lip: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in OBS_KINDS:
            raise ValueError(f"unknown observable {self.kind!r}; expected one of {OBS_KINDS}")
        if self.kind == "power" and (self.alpha is None or self.alpha == 0):
            raise ValueError("power observable needs a nonzero exponent")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom observable needs an evaluator")

    @classmethod
    def identity(cls):
        return cls("identity", lip=1.0)

    @classmethod
    def log(cls):
        return cls("log", positive_domain=True)

    @classmethod
    def power(cls, alpha):
        return cls("power", alpha=float(alpha), positive_domain=True)

    @classmethod
    def custom(cls, func, d1=None, d2=None, positive_domain=False, lip=None, name="custom"):
        return cls("custom", func=func, d1=d1, d2=d2, positive_domain=positive_domain, lip=lip, name=name)

    @property
    def label(self):
        if self.kind == "power":
            return f"power({self.alpha:g})"
        return self.name or self.kind

    @property
    def regularity(self):
        if self.kind == "identity":
            return "lipschitz"
        if self.positive_domain:
            return "c2-positive"
        return "c1-moments"

    @property
    def monotone_derivative_sign(self):
        """+1 or -1 when g' has constant sign on the domain, else 0."""
        if self.kind in ("identity", "log"):
            return 1
        if self.kind == "power":
            return 1 if self.alpha > 0 else -1
        return 0

    def _raw(self, u, order):
        if self.kind == "identity":
            return (u, np.ones_like(u), np.zeros_like(u))[order]
        if self.kind == "log":
            return (np.log(u), 1.0 / u, -1.0 / (u * u))[order]
        if self.kind == "power":
            a = self.alpha
            return (u ** a, a * u ** (a - 1), a * (a - 1) * u ** (a - 2))[order]
        fn = (self.func, self.d1, self.d2)[order]
        if fn is None:
            raise ValueError(f"custom observable has no derivative of order {order}")
        return np.asarray(fn(u), dtype=float)

    def evaluate(self, u, order=0):
        """g^{(order)}(u) and a mask of points outside the domain (set to NaN)."""
        u = np.asarray(u, dtype=float)
        if not self.positive_domain:
            return self._raw(u, order), np.zeros(u.shape, dtype=bool)
        bad = ~(u > 0)
        with np.errstate(all="ignore"):
            out = self._raw(np.where(bad, 1.0, u), order)
        out = np.where(bad, np.nan, out)
        return out, bad


def eval_observable(g, u, order=0):
    """g(u), g'(u) (order=1) or g''(u) (order=2).

    Raises
    ------
    DomainViolation
        If any point of ``u`` lies outside the domain of ``g``.
    """
    out, bad = g.evaluate(u, order)
    if np.any(bad):
        first = np.asarray(u, dtype=float)[bad].flat[0]
        raise DomainViolation(float(first), g.label)
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AverageSample:
    n_window: float
    t: float
    g: str
    value: float
    centering: float
    centering_source: str
    violations: int = 0
    n_sites: int = 0

    @property
    def valid(self):
        return np.isfinite(self.value) and self.violations <= 1e-3 * max(self.n_sites, 1)


def window_slices(grid, n_window, origin=0):
    k = grid.window_sites(n_window)
    o = int(origin)
    return tuple(slice(o, o + k) for _ in range(grid.d))


def window_means(u, grid, g, n_window, origin=0):
    """Mean of g(u) over the window for a batch ``u`` of shape (B, *grid.shape).

    Returns ``(means, violations)``; replicas with violations have the mean
    taken over their valid sites.
    """
    sl = (slice(None),) + window_slices(grid, n_window, origin)
    vals, bad = g.evaluate(u[sl])
    axes = tuple(range(1, 1 + grid.d))
    nbad = bad.sum(axis=axes)
    if nbad.any():
        means = np.nanmean(vals, axis=axes)
    else:
        means = vals.mean(axis=axes)
    return means, nbad


def spatial_average(frame, g, n_window, centering, centering_source="analytic", origin=0):
    """Rescaled window average of g(u) for one frame.

    ``centering`` is the value used for E g(u(t, 0)); ``centering_source``
    records where it came from (``analytic`` or ``monte-carlo``).
    """
    grid = frame.grid
    means, nbad = window_means(frame.values[None], grid, g, n_window, origin)
    n_sites = grid.window_sites(n_window) ** grid.d
    value = n_window ** (grid.d / 2) * (float(means[0]) - centering)
    return AverageSample(n_window, frame.t, g.label, value, float(centering), centering_source,
                         int(nbad[0]), n_sites)


def _loo_cov(x, y):
    """Unbiased covariance and its leave-one-out replicates."""
    n = len(x)
    sx, sy, sxy = x.sum(), y.sum(), (x * y).sum()
    full = (sxy - sx * sy / n) / (n - 1)
    m = n - 1
    lx, ly, lxy = sx - x, sy - y, sxy - x * y
    loo = (lxy - lx * ly / m) / (m - 1)
    return full, loo


def jackknife_se(loo):
    n = len(loo)
    return math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))


def estimate_b(x, y=None, min_pairs=100):
    """Sample covariance of paired rescaled averages with a jackknife SE.

    Returns ``(b_n, se)``.  With ``y`` omitted this is the sample variance.
    """
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("paired samples must have equal length")
    if len(x) < min_pairs:
        raise ValueError(f"need at least {min_pairs} paired replicas, got {len(x)}")
    full, loo = _loo_cov(x, y)
    return float(full), jackknife_se(loo)


def default_max_lag(model, t):
    scale = 0.0
    if model.kind == "gaussian":
        scale = 6 * math.sqrt(model.bandwidth)
    elif model.kind == "exponential":
        scale = 12.0 / model.rate
    return 8 * math.sqrt(t) + scale


def lag_cross_correlation(g1, g2, grid, m):
    """c_r(lag) = mean_x g1(x + lag) g2(x) for |lag_j| <= m cells, per replica.

    Inputs have shape (B, *grid.shape); the output has shape (B, 2m+1[, 2m+1])
    with lags ordered from -m to m.
    """
    axes = grid.axes
    f1 = sfft.rfftn(g1, axes=axes)
    f2 = sfft.rfftn(g2, axes=axes)
    cc = sfft.irfftn(f1 * np.conj(f2), s=grid.shape, axes=axes) / np.prod(grid.shape)
    k = np.arange(-m, m + 1) % grid.n_sites
    if grid.d == 1:
        return cc[:, k]
    return cc[:, k[:, None], k[None, :]]


def _tail_mask(m, d):
    k = np.abs(np.arange(-m, m + 1))
    cut = max(1, int(math.ceil(0.1 * m)))
    if d == 1:
        return k > m - cut
    return (k[:, None] > m - cut) | (k[None, :] > m - cut)


def lag_integral(s, tail, m1, m2, width, tail_width):
    """Lag integral, jackknife SE and tail fraction from per-replica pieces.

    ``s`` and ``tail`` are per-replica Riemann sums of c_r over all lags and
    over the outer tenth of lags; ``width`` and ``tail_width`` the measures of
    those lag sets.  The covariance subtracts the pooled product of means.
    """
    s, tail, m1, m2 = (np.asarray(a, dtype=float) for a in (s, tail, m1, m2))
    n = len(s)
    if n < 3:
        raise ValueError("need at least three replicas")
    mm = m1.mean() * m2.mean()
    value = s.mean() - width * mm
    loo_s = (s.sum() - s) / (n - 1)
    loo_1 = (m1.sum() - m1) / (n - 1)
    loo_2 = (m2.sum() - m2) / (n - 1)
    se = jackknife_se(loo_s - width * loo_1 * loo_2)
    tail_value = tail.mean() - tail_width * mm
    frac = abs(tail_value) / abs(value) if value != 0 else math.inf
    return float(value), float(se), float(frac)


class LagCovariance:
    """Per-replica circular cross-correlations of g(u(t1)) and g(u(t2)).

    Each replica contributes c_r(lag) = mean_x g1(x + lag) g2(x) over the
    whole torus together with its spatial means.  Rows are keyed by replica,
    so the reduction does not depend on how replicas were batched.
    """

    def __init__(self, grid, max_lag):
        self.grid = grid
        m = int(math.floor(max_lag / grid.dx + 1e-9))
        if 2 * m + 1 > grid.n_sites:
            raise ValueError(f"max_lag {max_lag} does not fit in the domain of length {grid.length}")
        self.m = m
        self.max_lag = m * grid.dx
        self._tail = _tail_mask(m, grid.d)
        self.rows = {}

    @property
    def width(self):
        return (2 * self.m + 1) ** self.grid.d * self.grid.cell_volume

    @property
    def tail_width(self):
        return int(self._tail.sum()) * self.grid.cell_volume

    def add(self, replicas, g1, g2):
        """Add a batch of g-evaluated fields of shape (B, *grid.shape)."""
        c = lag_cross_correlation(g1, g2, self.grid, self.m)
        sa = tuple(range(1, 1 + self.grid.d))
        m1, m2 = g1.mean(axis=sa), g2.mean(axis=sa)
        for i, r in enumerate(replicas):
            self.rows[int(r)] = (c[i], m1[i], m2[i])

    def pieces(self, keys=None):
        """Per-replica (sum, tail sum, mean1, mean2) in replica order."""
        keys = sorted(self.rows) if keys is None else keys
        cell = self.grid.cell_volume
        s = np.array([self.rows[k][0].sum() * cell for k in keys])
        tail = np.array([self.rows[k][0][self._tail].sum() * cell for k in keys])
        m1 = np.array([self.rows[k][1] for k in keys])
        m2 = np.array([self.rows[k][2] for k in keys])
        return s, tail, m1, m2

    def curve(self, keys=None):
        """Lags along the first axis, covariance and SE (lag curve for plotting)."""
        keys = sorted(self.rows) if keys is None else keys
        c = np.stack([self.rows[k][0] for k in keys])
        m1 = np.array([self.rows[k][1] for k in keys])
        m2 = np.array([self.rows[k][2] for k in keys])
        contrib = c - m1.mean() * m2.mean()
        cov = contrib.mean(axis=0)
        se = contrib.std(axis=0, ddof=1) / math.sqrt(len(keys))
        if self.grid.d == 2:
            cov, se = cov[:, self.m], se[:, self.m]
        return np.arange(-self.m, self.m + 1) * self.grid.dx, cov, se

    def abs_integral(self, keys=None):
        lags, cov, _ = self.curve(keys)
        if self.grid.d == 2:
            keys = sorted(self.rows) if keys is None else keys
            c = np.stack([self.rows[k][0] for k in keys])
            m1 = np.array([self.rows[k][1] for k in keys])
            m2 = np.array([self.rows[k][2] for k in keys])
            cov = c.mean(axis=0) - m1.mean() * m2.mean()
        return float(np.abs(cov).sum() * self.grid.cell_volume)

    def integral(self, keys=None):
        """``(value, se, abs_integral, tail_fraction)`` of the lag integral."""
        s, tail, m1, m2 = self.pieces(keys)
        value, se, frac = lag_integral(s, tail, m1, m2, self.width, self.tail_width)
        return value, se, self.abs_integral(keys), frac


@dataclass
class CovarianceReport:
    t1: float
    t2: float
    g: str
    N: float
    b_n: float
    b_n_se: float
    b_limit: float
    b_limit_se: float
    tail_fraction: float
    abs_integral: float = float("nan")
    status: str = "ok"

    def to_json(self):
        keys = ("t1", "t2", "g", "N", "b_n", "b_n_se", "b_limit", "b_limit_se", "tail_fraction")
        return json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)

    def to_dict(self):
        return asdict(self)


def estimate_b_limit(acc, min_replicas=500):
    """Integrated lag covariance from a filled :class:`LagCovariance`.

    Returns ``(b_limit, se, abs_integral, tail_fraction, status)`` where status
    is ``"window too small"`` when the outermost lags carry more than 10% of
    the integral.
    """
    n = len(acc.rows)
    if n < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas for the lag integral, got {n}")
    value, se, abs_int, tail = acc.integral()
    status = "ok" if tail <= 0.1 else "window too small"
    return value, se, abs_int, tail, status


def pi_weight(n_window, t, s, y, grid=None, d=1):
    """Window-averaged kernel N^{-d} int_{[0,N]^d} p_{t-s}(x - y) dx.

    With ``grid`` the integral is the lattice Riemann sum over window sites;
    without it, the exact product of normal probabilities in dimension ``d``.
    ``y`` holds one point or an array of points (last axis = coordinates).
    """
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    tau = t - s
    if grid is not None:
        d = grid.d
    y = np.asarray(y, dtype=float)
    yy = y.reshape(-1, d)
    if grid is None:
        root = math.sqrt(tau)
        cdf = special.ndtr((n_window - yy) / root) - special.ndtr(-yy / root)
        out = np.prod(cdf, axis=1)
    else:
        x = np.arange(grid.window_sites(n_window)) * grid.dx
        out = np.ones(len(yy))
        for j in range(d):
            diff = x[None, :] - yy[:, j:j + 1]
            out = out * (np.exp(-diff ** 2 / (2 * tau)).sum(axis=1) * grid.dx / math.sqrt(2 * math.pi * tau))
    out = out / n_window ** d
    return float(out[0]) if out.size == 1 else out


@dataclass(frozen=True)
class LowerBound:
    value: float
    main: float
    correction: float
    condition: int

    @property
    def vacuous(self):
        return not self.value > 0


def _p2_mass_outside(a, d):
    """Mass of N(0, 2 I_d) outside the cube [-a, a]^d."""
    if a <= 0:
        return 1.0
    inside = math.erf(a / 2)
    return -math.expm1(d * math.log(inside)) if inside > 0 else 1.0


def variance_lower_bound(model, sigma, n_window, t, condition, C=None, delta=None, R=None):
    """Explicit lower bound on B_{N,t}(id) from the covariance comparison argument.

    Conditions 1 and 2 need the comparison constant ``C``:

        (C / 2^d) [t f(R^d) - t f(R^d) P(|X| outside [-a, a]^d) - t f(R^d minus [-N/8, N/8]^d)],

    with X ~ N(0, 2 I) and a = N / (8 sqrt t).  Condition 3 needs
    ``(delta, R)``:

        sigma(1)^2 delta / 2^{d+1} [f([-R, R]^d) - f(R^d) P(|X| outside [-b, b]^d)],

    with b = (N/4 - R) / sqrt t.  A nonpositive value is returned as is and
    flagged by :attr:`LowerBound.vacuous`.
    """
    d = model.d
    mass = model.total_mass
    if condition in (1, 2):
        if C is None:
            raise ValueError("conditions 1 and 2 need the comparison constant C")
        if not t > 0:
            raise ValueError("t must be positive")
        pref = C / 2 ** d
        main = pref * t * mass
        a = n_window / (8 * math.sqrt(t))
        corr = pref * (t * mass * _p2_mass_outside(a, d) + t * model.mass_outside_box(n_window / 8))
        return LowerBound(main - corr, main, corr, condition)
    if condition == 3:
        if delta is None or R is None:
            raise ValueError("condition 3 needs delta and R")
        if not (0 < delta <= t):
            raise ValueError(f"need 0 < delta <= t, got delta={delta}, t={t}")
        s1 = sigma.sigma_at_one ** 2
        main = s1 * delta / 2 ** (d + 1) * model.mass_in_box(R)
        b = (n_window / 4 - R) / math.sqrt(t)
        corr = s1 / 2 ** (d + 1) * mass * delta * _p2_mass_outside(b, d)
        return LowerBound(main - corr, main, corr, condition)
    raise ValueError(f"condition must be 1, 2 or 3, got {condition}")
