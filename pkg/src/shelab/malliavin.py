"""First Malliavin derivative of the lattice solution and the explicit moment constants.

The derivative D_{s,z}u(t, .) solves a linear equation driven by the same
noise as u.  On the lattice it is the exact derivative of the scheme with
respect to the noise at (s, z): one heat step from sigma(u(s, z)) times the
lattice delta at z, then

    D_{k+1} = exp(dt Delta / 2) [D_k + sigma'(u_k) D_k dW_k].
"""

from dataclasses import dataclass, asdict
import math

import numpy as np

from .kernel import apply_multiplier, heat_kernel, heat_multiplier
from .noise import lambda_inverse
from .observables import jackknife_se
from .solver import Ensemble


@dataclass(frozen=True)
class MalliavinFrame:
    s: float
    z: tuple
    t: float
    values: np.ndarray
    base_digest: str = ""


def _site_tuple(z, d):
    z = tuple(int(v) for v in np.atleast_1d(z))
    if len(z) != d:
        raise ValueError(f"site must have {d} indices")
    return z


def simulate_derivative(base, s, z, t_end, sigma):
    """Derivative fields D_{s,z}u(t, .) along a stored trajectory.

    Parameters
    ----------
    base : Trajectory
        Must carry its noise increments (``store_noise=True``).
    s : float
        Perturbation time, a multiple of dt.
    z : int or tuple of int
        Perturbation site (lattice indices).
    t_end : float
        Last time considered; frames of ``base`` up to ``t_end`` are returned.
    sigma : DiffusionSpec

    Returns
    -------
    list of MalliavinFrame
        One per frame time of ``base`` up to ``t_end``; zero for t <= s.
    """
    if base.noise is None:
        raise ValueError("base trajectory has no stored noise; rerun with store_noise=True")
    grid = base.frames[0].grid
    m = s / grid.dt
    j = int(round(m))
    if abs(m - j) > 1e-8 * max(1.0, m) or j < 0:
        raise ValueError(f"s={s} is not a step boundary (dt={grid.dt})")
    if not s < t_end:
        raise ValueError("need s < t_end")
    z = _site_tuple(z, grid.d)
    n_end = grid.steps(t_end)
    if n_end > len(base.noise):
        raise ValueError("t_end lies beyond the stored noise")
    digest = base.digest()
    mult = heat_multiplier(grid, grid.dt)
    wanted = {grid.steps(f.t): f.t for f in base.frames if f.t <= t_end + 1e-12}
    out = [MalliavinFrame(s, z, wanted[k], np.zeros(grid.shape), digest) for k in sorted(wanted) if k <= j]
    u = np.ones(grid.shape)
    for k in range(j):
        u = apply_multiplier(sigma.perturb(u, base.noise[k]), mult, grid)
    dfield = np.zeros(grid.shape)
    dfield[z] = float(sigma(u[z])) / grid.cell_volume
    for k in range(j, n_end):
        incr = base.noise[k]
        if k > j:
            dfield = dfield + sigma.derivative(u) * dfield * incr
        both = apply_multiplier(np.stack([sigma.perturb(u, incr), dfield]), mult, grid)
        u, dfield = both[0], both[1]
        if k + 1 in wanted:
            out.append(MalliavinFrame(s, z, wanted[k + 1], dfield.copy(), digest))
    return out


def minimal_image(grid, x, z):
    """Signed torus displacement x - z in physical units, per axis."""
    diff = (np.atleast_1d(x) - np.atleast_1d(z)) % grid.n_sites
    diff = np.where(diff > grid.n_sites // 2, diff - grid.n_sites, diff)
    return diff * grid.dx


@dataclass(frozen=True)
class ClarkOconeResult:
    relative_error: float
    estimate: float
    target: float
    se: float
    n_continuations: int

    def to_dict(self):
        return asdict(self)


def clark_ocone_check(u_s, grid, model, sigma, s, z, t, x, n_continuations, base_seed,
                      tag="0", batch=250, floor=1e-12):
    """Conditional mean of D_{s,z}u(t, x) given the past, against p_{t-s}(x - z) sigma(u(s, z)).

    ``u_s`` is the frozen field at time s.  Fresh futures are simulated from
    it, each carrying its derivative field; their average estimates the
    conditional expectation.

    Returns
    -------
    ClarkOconeResult
        With relative error |estimate - target| / (|target| + floor).
    """
    if n_continuations < 100:
        raise ValueError("at least 100 continuations are needed for a meaningful estimate")
    if not s < t:
        raise ValueError("need s < t")
    z = _site_tuple(z, grid.d)
    x = _site_tuple(x, grid.d)
    vals = []
    for b0 in range(0, n_continuations, batch):
        reps = range(b0, min(b0 + batch, n_continuations))
        ens = Ensemble(grid, model, sigma, base_seed, reps, purpose=f"continuation:{tag}",
                       u0=u_s, t0=s)
        ens.start_tangent(z)
        ens.advance_to(t)
        vals.append(ens.tangent[(slice(None),) + x].copy())
    vals = np.concatenate(vals)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    target = float(heat_kernel(t - s, minimal_image(grid, x, z), grid.d) * float(sigma(u_s[z])))
    rel = abs(est - target) / (abs(target) + floor)
    return ClarkOconeResult(rel, est, target, se, len(vals))


# ---------------------------------------------------------------------------
# explicit constants


def _m_sigma(sigma):
    return max(abs(sigma.sigma_at_zero), sigma.lip)


def a_eps(eps, sigma, d):
    """a(eps) = (1 - eps)^2 / (2^{(d+6)/2} [|sigma(0)| v Lip(sigma)]^2); inf when sigma = 0."""
    _check_eps(eps)
    m = _m_sigma(sigma)
    if m == 0:
        return math.inf
    return (1 - eps) ** 2 / (2 ** ((d + 6) / 2) * m * m)


def _check_eps(eps):
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")


def _check_tk(t, k):
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if not k >= 2:
        raise ValueError(f"k must be at least 2, got {k}")


def log_constant_c_tke(t, k, eps, sigma, model):
    """log C_{t,k,eps,sigma}; +inf when sigma is identically 0."""
    _check_tk(t, k)
    m = _m_sigma(sigma)
    a = a_eps(eps, sigma, model.d)
    if m == 0:
        return math.inf
    lam = lambda_inverse(model, a / k)
    return math.log(8 * m) + 2 * t * lam - 1.5 * math.log(eps)


def constant_c_tke(t, k, eps, sigma, model):
    """C_{t,k,eps,sigma} = 8 m exp(2 t Lambda(a(eps)/k)) / eps^{3/2}, m = |sigma(0)| v Lip(sigma).

    Returns ``math.inf`` when sigma is identically 0 and also when the value
    overflows a double; use :func:`log_constant_c_tke` for the exact size.
    """
    return _exp_or_inf(log_constant_c_tke(t, k, eps, sigma, model))


def log_constant_c_tke_pam(t, k, eps, model):
    """log of 8 eps^{-3/2} exp(2 t Lambda((1 - eps)^2 / (2^{(d+6)/2} k)))."""
    _check_tk(t, k)
    _check_eps(eps)
    y = (1 - eps) ** 2 / (2 ** ((model.d + 6) / 2) * k)
    return math.log(8) - 1.5 * math.log(eps) + 2 * t * lambda_inverse(model, y)


def log_constant_c_star(t, k, eps, model):
    """log of 16 eps^{-2} exp(3 t Lambda((1 - eps)^2 / (2^{(d+6)/2} k)))."""
    _check_tk(t, k)
    _check_eps(eps)
    y = (1 - eps) ** 2 / (2 ** ((model.d + 6) / 2) * k)
    return math.log(16) - 2 * math.log(eps) + 3 * t * lambda_inverse(model, y)


def constant_c_star(t, k, eps, model):
    """Second-derivative moment constant for sigma(u) = u (inf on overflow)."""
    return _exp_or_inf(log_constant_c_star(t, k, eps, model))


def _exp_or_inf(x):
    if x == math.inf or x > 709.78:
        return math.inf
    return math.exp(x)


@dataclass(frozen=True)
class ThetaEstimate:
    value: float
    se: float
    n: int
    rejected: int

    @property
    def valid(self):
        return self.rejected <= 1e-3 * (self.n + self.rejected)


def theta_estimate(samples, g, k):
    """Plug-in estimate of ||g'(u)||_k max(||g'(u)||_k, ||g''(u)||_k) with jackknife SE.

    Samples outside the domain of ``g`` are dropped and counted.
    """
    if not k > 4:
        raise ValueError(f"moment order must exceed 4, got {k}")
    u = np.asarray(samples, dtype=float).ravel()
    d1, bad1 = g.evaluate(u, 1)
    d2, bad2 = g.evaluate(u, 2)
    bad = bad1 | bad2 | ~np.isfinite(d1) | ~np.isfinite(d2)
    a = np.abs(d1[~bad]) ** k
    b = np.abs(d2[~bad]) ** k
    n = len(a)
    if n < 2:
        raise ValueError("too few valid samples")

    def theta(sa, sb, m):
        n1 = (sa / m) ** (1 / k)
        n2 = (sb / m) ** (1 / k)
        return n1 * np.maximum(n1, n2)

    value = float(theta(a.sum(), b.sum(), n))
    loo = theta(a.sum() - a, b.sum() - b, n - 1)
    return ThetaEstimate(value, jackknife_se(loo), n, int(bad.sum()))


def rate_bound_eval(t, n_window, b, L, lam, theta=None, d=1):
    """L [Theta] e^{lam t} / (N^{d/2} B)."""
    if not b > 0:
        raise ValueError("the bound is only informative for B > 0")
    if not n_window > 0:
        raise ValueError("N must be positive")
    val = L * math.exp(lam * t) / (n_window ** (d / 2) * b)
    return val * theta if theta is not None else val


@dataclass
class ConstantsReport:
    t: float
    k: float
    eps: float
    a_eps: float
    lambda_val: float
    c_tke: float
    log_c_tke: float
    c_tke_pam: float
    log_c_tke_pam: float
    c_star: float
    log_c_star: float
    theta_t: float = float("nan")
    rate_bound: float = float("nan")

    def to_dict(self):
        return {k: (v if math.isfinite(v) else repr(v)) for k, v in asdict(self).items()}


def constants_report(t, k, eps, sigma, model, theta=None, n_window=None, b=None, L=1.0, lam=0.0):
    """All explicit constants at (t, k, eps), plus the rate bound when (N, B) are given."""
    a = a_eps(eps, sigma, model.d)
    lam_val = lambda_inverse(model, a / k) if math.isfinite(a) else 0.0
    log_c = log_constant_c_tke(t, k, eps, sigma, model)
    log_pam = log_constant_c_tke_pam(t, k, eps, model)
    log_cs = log_constant_c_star(t, k, eps, model)
    rb = float("nan")
    if n_window is not None and b is not None:
        rb = rate_bound_eval(t, n_window, b, L, lam, theta, model.d)
    return ConstantsReport(t, k, eps, a, lam_val, _exp_or_inf(log_c), log_c, _exp_or_inf(log_pam),
                           log_pam, _exp_or_inf(log_cs), log_cs,
                           float("nan") if theta is None else theta, rb)
