"""One-dimensional model integrals with a near-pole and an oscillating phase,
plus the rate fits used by every epsilon sweep.

The workhorse is the pole subtraction

    int_a^b f(r) / (r - z) dr = int_a^b (f(r) - f(z)) / (r - z) dr + f(z) log((b - z) / (a - z)),

valid for f entire (Gaussian atoms times exponentials) and z off the real axis:
the first integrand is smooth, the second term is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .model import FieldExpr
from .quadrature import gl_panels, graded_edges
from .helmholtz import richardson


# --------------------------------------------------------------------------
# complex evaluation of 1D Gaussian fields


def eval_complex(w, z):
    """w(z) for complex z: the analytic continuation of a 1D FieldExpr (or any
    callable that accepts complex input)."""
    z = np.asarray(z, dtype=complex)
    if not isinstance(w, FieldExpr):
        return np.asarray(w(z), dtype=complex)
    if w.d != 1:
        raise ValueError("expected a one-dimensional field")
    out = np.zeros(z.shape, dtype=complex)
    for a in w.atoms:
        out += a.amplitude * np.exp(-0.5 * a.inv_variance * (z - a.center[0]) ** 2 + 1j * a.modulation[0] * z)
    return out


def _support(w, default=12.0):
    if isinstance(w, FieldExpr):
        return max(abs(a.center[0]) + math.sqrt(2 * 45.0 / a.inv_variance) for a in w.atoms) if w.atoms else 1.0
    return default


def _is_zero(w):
    return isinstance(w, FieldExpr) and w.is_zero


def _subtracted(f, z, a, b, width, n):
    """int_a^b f(r) / (r - z) dr for entire f and Im z != 0."""
    m = max(1, int(math.ceil((b - a) / width)))
    r, wt = gl_panels(np.linspace(a, b, m + 1), n)
    fz = f(np.array([z]))[0]
    q = (f(r) - fz) / (r - z)
    return q @ wt + fz * (np.log(b - z) - np.log(a - z))


# --------------------------------------------------------------------------
# the limiting-absorption model integral


@dataclass(frozen=True)
class OscResult:
    value: complex
    error: float


def lemma_l_integral(w, delta: float, eps: float, gamma: float, q: float, n=24) -> OscResult:
    """int_{|r| <= delta} exp(-i (q/eps) r) w(r) / (-r + i eta) dr,  eta = eps^(1+gamma).

    With 1/(-r + i eta) = -1/(r - i eta) the pole sits at r = i eta and is
    removed by subtraction; panels are sized to the phase rate q/eps.
    """
    if delta <= 0 or eps <= 0:
        raise ValueError("delta and eps must be positive")
    if _is_zero(w):
        return OscResult(0j, 0.0)
    lam = q / eps
    eta = eps ** (1.0 + gamma)
    f = lambda r: np.exp(-1j * lam * r) * eval_complex(w, r)
    width = min(0.5, 4.0 / max(abs(lam), 1e-12))
    v1 = -_subtracted(f, 1j * eta, -delta, delta, width, n)
    v0 = -_subtracted(f, 1j * eta, -delta, delta, width, n - 8)
    return OscResult(complex(v1), float(abs(v1 - v0)))


def lemma_l_bruteforce(w, delta: float, eps: float, gamma: float, q: float, refine=10, n=16) -> complex:
    """The same integral without subtraction: the kernel (-r - i eta) / (r^2 + eta^2)
    on panels graded geometrically towards r = 0 from width eta, and refined
    ``refine`` times over the oscillation scale."""
    lam = q / eps
    eta = eps ** (1.0 + gamma)
    h = min(0.5, 4.0 / max(abs(lam), 1e-12)) / refine
    right = graded_edges(0.0, delta, eta / refine, 2.0, max_width=h)
    r, wt = gl_panels(right, n)
    r = np.concatenate([-r[::-1], r])
    wt = np.concatenate([wt[::-1], wt])
    g = np.exp(-1j * lam * r) * eval_complex(w, r) * (-r - 1j * eta) / (r * r + eta * eta)
    return complex(g @ wt)


def pv_delta_eval(psi, eta: float, L=None, n=24) -> complex:
    """int_R psi(x) / (x + i eta) dx by subtraction at x = -i eta."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    if _is_zero(psi):
        return 0j
    L = _support(psi) if L is None else L
    f = lambda x: eval_complex(psi, x)
    return complex(_subtracted(f, -1j * eta, -L, L, 0.5, n))


def pv_delta_limit(psi, etas=(1e-2, 5e-3, 2.5e-3), L=None) -> complex:
    """eta -> 0 limit of pv_delta_eval by Richardson extrapolation (ratio 2)."""
    vals = [pv_delta_eval(psi, e, L) for e in etas]
    return complex(richardson(vals, 2.0, tuple(range(1, len(etas)))))


def pv_minus_i_pi_delta(psi, L=None, n=24) -> complex:
    """p.v. int psi(x)/x dx - i pi psi(0), the p.v. by symmetric subtraction."""
    L = _support(psi) if L is None else L
    x, wt = gl_panels(np.linspace(0.0, L, int(math.ceil(L / 0.5)) + 1), n)
    f = lambda t: eval_complex(psi, t)
    pv = ((f(x) - f(-x)) / x) @ wt
    return complex(pv - 1j * math.pi * f(np.array([0.0]))[0])


# --------------------------------------------------------------------------
# sweeps and rate fits


@dataclass
class SweepSeries:
    epsilons: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    name: str = ""
    scenario_id: str = ""

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        self.errors = np.asarray(self.errors, dtype=float)
        if np.any(np.diff(self.epsilons) >= 0):
            raise ValueError("epsilons must be strictly decreasing")
        if np.any(self.errors < 0):
            raise ValueError("errors must be nonnegative")
        if not (len(self.epsilons) == len(self.values) == len(self.errors)):
            raise ValueError("length mismatch")

    def __len__(self):
        return len(self.epsilons)

    def gaps(self, target) -> np.ndarray:
        return np.abs(self.values - target)

    def decreasing(self, target=0.0, tolerance=None) -> bool:
        """|value - target| decreasing along the sweep; with ``tolerance`` (an array
        or scalar of allowed slack per step) a step may rise by at most that much."""
        g = self.gaps(target)
        slack = np.zeros(len(g) - 1) if tolerance is None else np.broadcast_to(tolerance, (len(g) - 1,))
        return bool(np.all(np.diff(g) < slack) if tolerance is None else np.all(np.diff(g) <= slack))


@dataclass
class RateFit:
    limit: complex
    rate: float
    constant: float
    residual: float
    monotone: bool
    hypothesis: complex | None = None


def rate_fit(series: SweepSeries, limit_hypothesis=None, last=None) -> RateFit:
    """Fit |value - L| ~ C eps^p.

    With a hypothesis L is fixed and (log C, p) come from a log-log regression;
    otherwise (L, C, p) are fitted jointly by least squares on the last points
    (complex L, complex amplitude, real rate).
    """
    if len(series) < 4:
        raise ValueError("rate_fit needs at least 4 sweep points")
    eps = series.epsilons
    vals = series.values
    if last is not None:
        eps, vals = eps[-last:], vals[-last:]
    if limit_hypothesis is not None:
        L = complex(limit_hypothesis)
        gap = np.abs(vals - L)
        monotone = bool(np.all(np.diff(gap) < 0))
        good = gap > 0
        if good.sum() < 2:
            return RateFit(L, math.inf, 0.0, 0.0, monotone, L)
        A = np.c_[np.ones(good.sum()), np.log(eps[good])]
        coef, *_ = np.linalg.lstsq(A, np.log(gap[good]), rcond=None)
        res = float(np.sqrt(np.mean((A @ coef - np.log(gap[good])) ** 2)))
        return RateFit(L, float(coef[1]), float(math.exp(coef[0])), res, monotone, L)

    def model(p):
        L = p[0] + 1j * p[1]
        c = p[2] + 1j * p[3]
        return L + c * eps ** p[4]

    def resid(p):
        r = model(p) - vals
        return np.concatenate([r.real, r.imag])

    # start from a two-point Richardson guess at rate 1
    L0 = 2 * vals[-1] - vals[-2]
    c0 = (vals[-2] - vals[-1]) / (eps[-2] - eps[-1])
    best = None
    for p0 in (0.5, 1.0, 2.0):
        x0 = [L0.real, L0.imag, c0.real, c0.imag, p0]
        sol = least_squares(resid, x0, x_scale="jac", max_nfev=5000)
        if best is None or sol.cost < best.cost:
            best = sol
    p = best.x
    L = p[0] + 1j * p[1]
    gap = np.abs(vals - L)
    monotone = bool(np.all(np.diff(gap) < 0))
    rms = float(np.sqrt(np.mean(np.abs(model(p) - vals) ** 2)))
    return RateFit(complex(L), float(p[4]), float(abs(p[2] + 1j * p[3])), rms, monotone)


@dataclass
class HypothesisReport:
    series: SweepSeries
    fits: dict  # label -> RateFit
    preferred: str
    w0: complex


def lemma_limit_report(w, delta=0.5, gamma=1.0, q=1.0, epsilons=None) -> HypothesisReport:
    """Sweep lemma_l_integral and fit the two candidate limits 0 and -i pi w(0).

    The preferred hypothesis is the one whose gap decreases monotonically with
    the larger fitted rate."""
    epsilons = np.geomspace(0.2, 0.2 / 2**7, 8) if epsilons is None else np.asarray(epsilons, float)
    res = [lemma_l_integral(w, delta, e, gamma, q) for e in epsilons]
    series = SweepSeries(epsilons, [r.value for r in res], [r.error for r in res], "lemma_l_integral")
    w0 = complex(eval_complex(w, np.array([0.0]))[0])
    fits = {"zero": rate_fit(series, 0.0), "minus_i_pi_w0": rate_fit(series, -1j * math.pi * w0)}

    def score(k):
        f = fits[k]
        return (f.monotone, f.rate)

    preferred = max(fits, key=score)
    return HypothesisReport(series, fits, preferred, w0)


def conjugation_residual(w, delta: float, eps: float, gamma: float, q: float) -> float:
    """|I(conj w(-.)) + conj I(w)|: substituting r -> -r and conjugating maps the
    kernel 1/(-r + i eta) to minus itself, so the two values are exact negatives."""
    a = lemma_l_integral(w.reflect().conj(), delta, eps, gamma, q).value
    b = lemma_l_integral(w, delta, eps, gamma, q).value
    return float(abs(a + np.conj(b)))
