"""Helmholtz solutions with complex wavenumber, in exact Fourier form.

A solution of  (Delta + k2) u = S  with Im k2 <= 0 is stored as its source
(a FieldExpr in x) and k2; its transform is  u_hat = S_hat / (k2 - |xi|^2).
Three independent evaluators are provided:

* ``green``: closed form for unmodulated Gaussian atoms, each atom producing
  a radial profile about its own center (Faddeeva/erfcx expression);
* ``spectral``: inverse transform with the angular integral done in closed
  form and the radial one by singularity subtraction at the root rho of k2;
* ``grid``: brute-force Lorentzian radial grid times a sphere rule.

Waves behave like exp(-i rho |x|): the outgoing fundamental solution is
-exp(-i rho r) / (4 pi r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx

from .model import FieldExpr, Scenario, TWO_PI, scale_concentrate
from .quadrature import (
    QuadratureError,
    adaptive_1d,
    gl_panels,
    mc_integrate,
    GaussianMixtureSampler,
    radial_lorentzian_grid,
    sphere_rule,
)


def principal_root(k2) -> complex:
    """Square root of k2 with Re >= 0 and Im <= 0 (the outgoing branch)."""
    rho = np.sqrt(complex(k2))
    if rho.real < 0:
        rho = -rho
    if rho.imag > 0:
        rho = np.conj(rho) if abs(rho.imag) < 1e-300 else rho
    return complex(rho)


# --------------------------------------------------------------------------
# radial resolvent integrals


def radial_panels(r_max, rho_re, freq, n=16, width=0.5):
    """GL panels on [0, r_max] with a breakpoint at rho_re and widths set by ``freq``."""
    h = min(width, 3.0 / max(freq, 1e-12))
    breaks = [0.0]
    for stop in sorted({min(rho_re, r_max), r_max}):
        if stop <= breaks[-1]:
            continue
        m = max(1, int(math.ceil((stop - breaks[-1]) / h)))
        breaks.extend(np.linspace(breaks[-1], stop, m + 1)[1:])
    return gl_panels(np.array(breaks), n)


def resolvent_radial_integral(g, k2, r_max, freq, n=16, width=0.5):
    """int_0^r_max g(r) / (k2 - r^2) dr for an entire ``g`` (vectorised over r,
    returning shape (..., nr)).  The pole at rho = sqrt(k2) is removed by
    subtraction and integrated in closed form, so k2 may be real (giving the
    k2 - i0 limit).  Returns (value, error) with error from a coarser rule.
    """
    rho = principal_root(k2)

    def rule(nn):
        r, w = radial_panels(r_max, rho.real, freq, nn, width)
        gr = g(r)
        grho = g(np.array([rho]))[..., 0]
        # 1/(k2 - r^2) = (1/(2 rho)) [1/(rho - r) + 1/(rho + r)]
        sub = (gr - grho[..., None]) / (r - rho)
        inner = -(sub @ w) - grho * (np.log(r_max - rho) - np.log(-rho + 0j))
        outer = (gr / (rho + r)) @ w
        return (inner + outer) / (2 * rho)

    fine = rule(n)
    coarse = rule(max(4, n - 6))
    return fine, np.abs(fine - coarse)


# --------------------------------------------------------------------------
# closed-form radial profiles


@dataclass(frozen=True)
class GreenProfile:
    """Radial profile P(R) of (Delta + rho^2) u = A exp(-s |x - m|^2 / 2) in d=3,
    so that u(x) = P(|x - m|)."""

    amplitude: complex
    s: float
    rho: complex

    @property
    def far_constant(self) -> complex:
        """K with P(R) = K exp(-i rho R) / R once the Gaussian is negligible."""
        c = math.sqrt(math.pi / (2 * self.s))
        return -self.amplitude * c / self.s * np.exp(-self.rho**2 / (2 * self.s))

    @property
    def r_far(self) -> float:
        """Radius beyond which P equals its far-field form to double precision."""
        return math.sqrt(2 * 40.0 / self.s) + abs(self.rho) / self.s

    def __call__(self, R):
        R = np.asarray(R, dtype=float)
        out = np.empty(R.shape, dtype=complex)
        far = R > self.r_far
        if np.any(far):
            Rf = R[far]
            out[far] = self.far_constant * np.exp(-1j * self.rho * Rf) / Rf
        near = ~far
        if np.any(near):
            out[near] = self._near(R[near])
        return out

    def _near(self, R):
        s, rho, A = self.s, self.rho, self.amplitude
        c = math.sqrt(math.pi / (2 * s))
        a = math.sqrt(s / 2)
        Rs = np.maximum(R, 1e-300)
        zp = a * (Rs + 1j * rho / s)
        zm = a * (-Rs + 1j * rho / s)
        g = np.exp(-s * Rs**2 / 2)
        ep = g * erfcx(zp)
        neg = zm.real < 0
        zm_safe = np.where(neg, -zm, zm)
        em = np.where(
            neg,
            2 * np.exp(-1j * rho * Rs - rho**2 / (2 * s)) - g * erfcx(zm_safe),
            g * erfcx(zm_safe),
        )
        T = 1j * rho * c / s * (em - ep)
        P = -A * T / (2j * rho * Rs)
        small = R * math.sqrt(s) < 1e-5
        if np.any(small):
            z0 = a * 1j * rho / s
            P0 = A / s * (math.sqrt(math.pi) * z0 * erfcx(z0) - 1.0)
            P = np.where(small, P0, P)
        return P

    def kernel_quadrature(self, R, tol=1e-12):
        """Same profile from the convolution with -exp(-i rho r)/(4 pi r) by adaptive 1D
        quadrature of  -(A/(2 i rho R)) int t S(t) [e^{-i rho|R-t|} - e^{-i rho(R+t)}] dt."""
        s, rho, A = self.s, self.rho, self.amplitude
        t_max = math.sqrt(2 * 45.0 / s)
        out = []
        for Ri in np.atleast_1d(np.asarray(R, dtype=float)):

            def f(t, Ri=Ri):
                return t * np.exp(-s * t**2 / 2) * (np.exp(-1j * rho * np.abs(Ri - t)) - np.exp(-1j * rho * (Ri + t)))

            if Ri < 1e-12:
                res = adaptive_1d(lambda t: 2j * rho * t * np.exp(-s * t**2 / 2) * np.exp(-1j * rho * t), 0, t_max, tol)
                out.append(-A / (2j * rho) * res.value)
                continue
            total = 0j
            for lo, hi in ((0.0, min(Ri, t_max)), (min(Ri, t_max), t_max)):
                if hi > lo:
                    total += adaptive_1d(f, lo, hi, tol).value
            out.append(-A / (2j * rho * Ri) * total)
        return np.array(out)


def atom_profiles(source: FieldExpr, rho: complex):
    """Group unmodulated atoms by center; returns [(center, [GreenProfile, ...])]."""
    groups = {}
    for a in source.atoms:
        if np.any(a.modulation != 0):
            raise ValueError("closed-form profiles need unmodulated atoms")
        key = tuple(np.round(a.center, 14))
        groups.setdefault(key, []).append(GreenProfile(a.amplitude, a.inv_variance, rho))
    return [(np.array(k), v) for k, v in groups.items()]


# --------------------------------------------------------------------------
# spectral solutions


@dataclass(frozen=True)
class EvalResult:
    values: np.ndarray
    error: np.ndarray
    method: str


@dataclass(frozen=True)
class SpectralSolution:
    """u with  u_hat(xi) = S_hat(xi) / (k2 - |xi|^2),  Im k2 <= 0."""

    source: FieldExpr
    k2: complex
    eps: float = 1.0
    eta: float = 0.0
    descriptor: str = "rescaled0"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if complex(self.k2).imag > 0:
            raise ValueError("k2 must have nonpositive imaginary part")

    @property
    def d(self):
        return self.source.d

    @property
    def rho(self) -> complex:
        return principal_root(self.k2)

    @property
    def numerator(self) -> FieldExpr:
        return self.source.fourier()

    def symbol(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.k2 - np.sum(xi * xi, axis=-1)

    def fourier_value(self, xi):
        return self.numerator(xi) / self.symbol(xi)

    def with_k2(self, k2, eta=None) -> "SpectralSolution":
        return SpectralSolution(self.source, k2, self.eps, self.eta if eta is None else eta, self.descriptor, self.meta)

    @property
    def unmodulated(self) -> bool:
        return all(not np.any(a.modulation) for a in self.source.atoms)

    def profiles(self):
        return atom_profiles(self.source, self.rho)

    def radial_field(self):
        from .norms import RadialSumField

        return RadialSumField.from_profiles(self.profiles(), self.d)

    # evaluation ------------------------------------------------------------
    def evaluate(self, x, method="auto", n=16, **kw) -> EvalResult:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.source.is_zero:
            z = np.zeros(x.shape[0], dtype=complex)
            return EvalResult(z, np.zeros(x.shape[0]), "zero")
        if method == "auto":
            method = "green" if (self.unmodulated and self.d == 3) else "spectral"
        if method == "green":
            return EvalResult(self._green(x), np.full(x.shape[0], 1e-14), "green")
        if method == "spectral":
            return self._spectral(x, n=n, **kw)
        if method == "grid":
            return self._grid(x, **kw)
        raise ValueError(f"unknown evaluation method {method!r}")

    def __call__(self, x):
        return self.evaluate(x).values

    def _green(self, x):
        if self.d != 3:
            raise ValueError("closed-form profiles are implemented for d=3")
        out = np.zeros(x.shape[0], dtype=complex)
        for c, profs in self.profiles():
            R = np.linalg.norm(x - c, axis=1)
            for p in profs:
                out += p(R)
        return out

    def _spectral(self, x, n=16, r_max=None, chunk=256):
        N = self.numerator
        r_max = r_max or max(N.radius_bound(40.0), 1.5 * abs(self.rho) + 1.0)
        vals = np.zeros(x.shape[0], dtype=complex)
        errs = np.zeros(x.shape[0])
        base = N.max_frequency()
        for i in range(0, x.shape[0], chunk):
            xb = x[i : i + chunk]
            freq = base + np.max(np.linalg.norm(xb, axis=1))

            def g(r, xb=xb):
                return r**2 * N.sphere_integral(r, xb)

            v, e = resolvent_radial_integral(g, self.k2, r_max, freq, n)
            vals[i : i + chunk] = v
            errs[i : i + chunk] = e
        return EvalResult(vals, errs, "spectral")

    def _grid(self, x, n=24, order=None, r_max=None, rule="product"):
        """Brute-force oracle: Lorentzian radial grid times a sphere rule."""
        N = self.numerator
        rho = self.rho
        r_max = r_max or max(N.radius_bound(40.0), 1.5 * abs(rho) + 1.0)
        width = max(-complex(self.k2).imag / (2 * rho.real), 1e-12)
        grid = radial_lorentzian_grid(rho.real, width, r_max, n)
        if order is None:
            order = int(2 * r_max * (np.max(np.linalg.norm(x, axis=1)) + 1) + 20)
        S = sphere_rule(self.d, order, rule)
        out = np.zeros(x.shape[0], dtype=complex)
        for r, wr in zip(grid.nodes, grid.weights):
            xi = r * S.nodes
            f = N(xi) / (self.k2 - r * r)
            ph = np.exp(1j * x @ xi.T)
            out += wr * r ** (self.d - 1) * (ph @ (S.weights * f))
        return EvalResult(out, np.full(x.shape[0], np.nan), "grid")

    # pairings ------------------------------------------------------------------
    def pairing(self, v: FieldExpr, n=16, freq_cap=None) -> "PairingResult":
        """<u, v> = int u conj(v) dx = (2 pi)^d int u_hat conj(v_hat) dxi."""
        if self.source.is_zero or v.is_zero:
            return PairingResult(0j, 0.0)
        prod = self.numerator * v.fourier().conj()
        # drop atom pairs that cannot contribute above double precision
        keep = [a for a in prod.atoms if abs(a.amplitude) > 1e-300]
        prod = FieldExpr(tuple(keep), self.d)
        if prod.is_zero:
            return PairingResult(0j, 0.0)
        r_max = max(prod.radius_bound(40.0), 1.5 * abs(self.rho) + 1.0)
        freq = prod.max_frequency()
        if freq_cap is not None and freq > freq_cap:
            raise QuadratureError(f"oscillation rate {freq:.3g} exceeds the budget {freq_cap:.3g}")

        def g(r):
            return r**2 * prod.sphere_integral(r)

        val, err = resolvent_radial_integral(g, self.k2, r_max, freq, n)
        c = TWO_PI**self.d
        return PairingResult(complex(c * val), float(c * err))

    def pairing_oracle(self, v: FieldExpr, n_samples=400_000, seed=0):
        """Direct-space Monte Carlo of int u conj(v) dx with u from closed-form profiles."""
        sampler = _field_sampler(v)
        est = mc_integrate(lambda x: self.evaluate(x).values * np.conj(v(x)), sampler, n_samples, seed)
        return est


@dataclass(frozen=True)
class PairingResult:
    value: complex
    error: float


def _field_sampler(f: FieldExpr):
    means = np.array([a.center for a in f.atoms])
    sig = np.array([1.0 / math.sqrt(a.inv_variance) for a in f.atoms])
    w = np.array([abs(a.amplitude) * sig_i**f.d for a, sig_i in zip(f.atoms, sig)])
    return GaussianMixtureSampler(means, 1.2 * sig, w)


# --------------------------------------------------------------------------
# constructors


def solve_full(s: Scenario, eps: float) -> SpectralSolution:
    """u^eps for the equation at scale 1: k2 = 1/eps^2 - i alpha/eps, source S^eps."""
    src = scale_concentrate(s.S0, eps) + scale_concentrate(s.S1, eps, s.q1)
    k2 = 1.0 / eps**2 - 1j * s.alpha(eps) / eps
    return SpectralSolution(src, k2, eps, s.eta(eps), "full")


def solve_rescaled(s: Scenario, eps: float, center: int = 0) -> SpectralSolution:
    """w^eps_j(x) = eps^{(d-1)/2} u^eps(eps x + q_j): k2 = 1 - i eps alpha."""
    shift = s.q1 / eps
    if center == 0:
        src = s.S0 + s.S1.shift(shift)
    else:
        src = s.S0.shift(-shift) + s.S1
    eta = s.eta(eps)
    return SpectralSolution(src, 1.0 - 1j * eta, eps, eta, f"rescaled{center}")


def solve_shifted(s: Scenario, eps: float) -> SpectralSolution:
    """a^eps: only the shifted second source, centered at q1/eps."""
    eta = s.eta(eps)
    return SpectralSolution(s.S1.shift(s.q1 / eps), 1.0 - 1j * eta, eps, eta, "shifted")


def richardson(values, ratio=2.0, orders=(1, 2)):
    """Richardson extrapolation of values at h, h/ratio, h/ratio^2, ... to h -> 0."""
    table = [np.asarray(v, dtype=complex) for v in values]
    for p in orders:
        f = ratio**p
        table = [(f * b - a) / (f - 1) for a, b in zip(table[:-1], table[1:])]
    return table[-1]


@dataclass(frozen=True)
class OutgoingSolution:
    """Outgoing solution of (Delta + 1) w = S (limit eta -> 0)."""

    source: FieldExpr
    etas: tuple = (1e-2, 5e-3, 2.5e-3)

    @property
    def limit(self) -> SpectralSolution:
        return SpectralSolution(self.source, 1.0 + 0j, 0.0, 0.0, "outgoing")

    def evaluate(self, x):
        """Fast evaluator: closed-form profiles at eta = 0."""
        return self.limit.evaluate(x).values

    __call__ = evaluate

    def evaluate_absorption(self, x, n=16):
        """Limiting-absorption evaluator: spectral route at decreasing eta, extrapolated."""
        vals = [self.limit.with_k2(1.0 - 1j * e, e).evaluate(x, "spectral", n=n).values for e in self.etas]
        return richardson(vals, self.etas[0] / self.etas[1], orders=tuple(range(1, len(vals))))

    def evaluate_kernel(self, x, n_samples=400_000, seed=0, tol=1e-12):
        """x-space evaluator: convolution with -exp(-i|z|)/(4 pi |z|)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.source.is_zero:
            return np.zeros(x.shape[0], dtype=complex)
        if all(not np.any(a.modulation) for a in self.source.atoms):
            out = np.zeros(x.shape[0], dtype=complex)
            for c, profs in atom_profiles(self.source, 1.0 + 0j):
                R = np.linalg.norm(x - c, axis=1)
                for p in profs:
                    out += p.kernel_quadrature(R, tol)
            return out
        sampler = _field_sampler(self.source)
        out = []
        for xi in x:
            def f(y, xi=xi):
                r = np.linalg.norm(xi - y, axis=1)
                return -self.source(y) * np.exp(-1j * r) / (4 * math.pi * r)

            out.append(mc_integrate(f, sampler, n_samples, seed).value)
        return np.array(out)

    def far_constant(self):
        """Sum of K over atoms; for a single center w ~ K exp(-i|x|)/|x|."""
        return sum(p.far_constant for _, ps in atom_profiles(self.source, 1.0 + 0j) for p in ps)


def solve_outgoing(S: FieldExpr, check_points=None, rtol=1e-4) -> OutgoingSolution:
    """Build the outgoing solution and, if ``check_points`` are given, require the
    limiting-absorption and kernel evaluators to agree."""
    if S.d != 3:
        raise ValueError("outgoing solutions are built for d=3")
    sol = OutgoingSolution(S)
    if check_points is not None and not S.is_zero:
        a = sol.evaluate_absorption(check_points)
        b = sol.evaluate_kernel(check_points)
        rel = np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))
        if rel > rtol:
            raise RuntimeError(f"outgoing evaluators disagree (max relative gap {rel:.3g})")
    return sol


# --------------------------------------------------------------------------
# Sommerfeld residuals


@dataclass(frozen=True)
class SommerfeldResult:
    radius: float
    plus: float
    minus: float
    fd_error: float


def sommerfeld_residual(evaluator, r: float, h: float = 1e-3, order: int = 60) -> SommerfeldResult:
    """(1/r) int_{S_r} |d_r w + i w|^2 and the (-i) variant, by central differences."""
    S = sphere_rule(3, order, "product")
    w = S.nodes
    f0 = evaluator(r * w)
    fp = evaluator((r + h) * w)
    fm = evaluator((r - h) * w)
    dr = (fp - fm) / (2 * h)
    fp2 = evaluator((r + 2 * h) * w)
    fm2 = evaluator((r - 2 * h) * w)
    dr4 = (-fp2 + 8 * fp - 8 * fm + fm2) / (12 * h)
    plus = float(r * S.integrate(np.abs(dr + 1j * f0) ** 2))
    minus = float(r * S.integrate(np.abs(dr - 1j * f0) ** 2))
    # r^2 from the surface element divided by r
    fd = float(r * S.integrate(np.abs(dr - dr4) ** 2)) ** 0.5
    return SommerfeldResult(r, plus, minus, fd)
