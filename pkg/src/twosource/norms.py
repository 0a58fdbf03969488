"""Dyadic-ring norms and related functionals of fields on R^d.

Every field used here exposes its shell integral  I(r) = int_{|x|=r} |f|^2 dsigma,
which is all the ring norms need:

    ||f||_B  = sum_{j>=-1} (2^{j+1} int_{C(j)} |f|^2)^{1/2},
    ||u||_B* = sup_{j>=-1} (2^{-j} int_{C(j)} |u|^2)^{1/2},

with C(-1) the unit ball and C(j) = {2^j <= |x| < 2^{j+1}}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import hyp2f1

from .model import FieldExpr, TWO_PI
from .quadrature import adaptive_1d, gl_panels, sphere_area, sphere_rule


class NormError(ValueError):
    pass


# --------------------------------------------------------------------------
# rings


@dataclass(frozen=True)
class RingDecomposition:
    j_max: int = 20

    @property
    def indices(self):
        return range(-1, self.j_max + 1)

    @staticmethod
    def bounds(j: int):
        return (0.0, 1.0) if j < 0 else (2.0**j, 2.0 ** (j + 1))

    @property
    def outer_radius(self) -> float:
        return 2.0 ** (self.j_max + 1)


# --------------------------------------------------------------------------
# evaluable fields


class EvaluableField:
    """Interface: pointwise values, shell integrals of |f|^2 and decay data.

    ``far_shell``: limit of I(r) as r -> infinity for fields decaying like
    |x|^{-(d-1)/2} (None for fields decaying faster); ``far_radius`` the radius
    beyond which I(r) equals that limit up to rounding.
    """

    d = 3
    far_shell = None
    far_radius = math.inf

    def __call__(self, x):
        raise NotImplementedError

    def shell_integral(self, r):
        raise NotImplementedError

    def breakpoints(self):
        return []

    def tail_mass(self, R) -> float:
        """Upper bound on int_{|x| > R} |f|^2."""
        return math.inf


class GaussianField(EvaluableField):
    """A FieldExpr viewed through its (closed-form) shell integrals."""

    def __init__(self, f: FieldExpr):
        self.f = f
        self.d = f.d
        self._abs2 = f.abs2()

    def __call__(self, x):
        return self.f(x)

    def shell_integral(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.f.is_zero:
            return np.zeros_like(r)
        return (self._abs2.sphere_integral(r) * r ** (self.d - 1)).real

    def breakpoints(self):
        return sorted({float(np.linalg.norm(a.center)) for a in self.f.atoms})

    def tail_mass(self, R) -> float:
        if self.f.is_zero:
            return 0.0
        # |f| <= envelope(r), a sum of Gaussians in r - |m|; integrate its square numerically
        area = sphere_area(self.d)
        top = R + max(math.sqrt(80.0 / a.inv_variance) for a in self.f.atoms) + 1.0
        res = adaptive_1d(lambda r: area * r ** (self.d - 1) * self.f.envelope(r) ** 2, R, top, tol=1e-14)
        return float(res.value.real + res.error)


class BallIndicator(EvaluableField):
    """Indicator of the ball of radius ``radius`` about the origin (d = 3)."""

    def __init__(self, radius=1.0, d=3):
        self.radius = float(radius)
        self.d = d

    def __call__(self, x):
        x = np.atleast_2d(x)
        return (np.linalg.norm(x, axis=1) < self.radius).astype(float)

    def shell_integral(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.where(r < self.radius, sphere_area(self.d) * r ** (self.d - 1), 0.0)

    def breakpoints(self):
        return [self.radius]

    def tail_mass(self, R) -> float:
        return 0.0 if R >= self.radius else math.inf


class ZeroField(EvaluableField):
    def __init__(self, d=3):
        self.d = d

    def __call__(self, x):
        return np.zeros(np.atleast_2d(x).shape[0], dtype=complex)

    def shell_integral(self, r):
        return np.zeros_like(np.atleast_1d(np.asarray(r, dtype=float)))

    def tail_mass(self, R) -> float:
        return 0.0


class RadialSumField(EvaluableField):
    """u(x) = sum_k P_k(|x - c_k|) with radial profiles having outgoing far fields
    P(R) = K exp(-i rho R) / R (d = 3), e.g. the Green-function profiles of a
    Helmholtz solution.

    Shell integrals over |x| = r reduce per pair of profiles to a 1D integral
    in u = |x - c| (axial symmetry about c), whose far-field part is in closed
    form.  Pairs of distinct off-origin centers use a product sphere rule.
    """

    def __init__(self, items, d=3, n=48):
        if d != 3:
            raise ValueError("RadialSumField is implemented for d = 3")
        self.d = d
        self.items = [(np.asarray(c, dtype=float), p) for c, p in items]
        self.n = n
        self._far = all(abs(p.rho.imag) < 1e-300 for _, p in self.items)

    @classmethod
    def from_profiles(cls, groups, d=3):
        return cls([(c, p) for c, ps in groups for p in ps], d)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0], dtype=complex)
        for c, p in self.items:
            out += p(np.linalg.norm(x - c, axis=1))
        return out

    # decay data ---------------------------------------------------------------
    @property
    def far_radius(self) -> float:
        if not self.items:
            return 0.0
        return max(np.linalg.norm(c) + p.r_far for c, p in self.items)

    @property
    def far_shell(self):
        """lim_{r -> inf} I(r) for real rho (undamped outgoing fields); 0 if damped."""
        if not self.items:
            return 0.0
        if not self._far:
            return 0.0
        tot = 0.0
        for ci, pi in self.items:
            for cj, pj in self.items:
                Ki, Kj = pi.far_constant, np.conj(pj.far_constant)
                dc = np.linalg.norm(ci - cj)
                rho = pi.rho.real
                if dc < 1e-14:
                    tot += 4 * math.pi * (Ki * Kj).real
                else:
                    # phase difference rho (|x - c_j| - |x - c_i|) averaged over directions
                    tot += (4 * math.pi * Ki * Kj * math.sin(rho * dc) / (rho * dc)).real
        return float(tot)

    def breakpoints(self):
        pts = set()
        for c, p in self.items:
            a = float(np.linalg.norm(c))
            for v in (a, a - p.r_far, a + p.r_far):
                if v > 0:
                    pts.add(v)
        return sorted(pts)

    # shell integrals ------------------------------------------------------------
    def _axial(self, r, a, P, Q_at_r=None, Q=None):
        """int_{|x|=r} F dsigma for F = conj(Q(|x|)) P(|x - c|) (Q given) or |P(|x - c|)|^2,
        with |c| = a > 0:   2 pi r / a int_{|r-a|}^{r+a} u G(u) du."""
        lo, hi = abs(r - a), r + a
        rf = P.r_far
        val = 0j
        mid = min(max(rf, lo), hi)
        if mid > lo:
            edges = np.linspace(lo, mid, max(2, int(math.ceil((mid - lo) / 2.0)) + 1))
            u, w = gl_panels(edges, self.n)
            Pu = P(u)
            g = u * (Pu if Q is not None else np.abs(Pu) ** 2)
            val += g @ w
        if hi > mid:
            K, rho = P.far_constant, P.rho
            if Q is not None:
                # int u K e^{-i rho u}/u du
                if abs(rho) > 0:
                    val += K * (np.exp(-1j * rho * hi) - np.exp(-1j * rho * mid)) / (-1j * rho)
                else:
                    val += K * (hi - mid)
            else:
                # int |K|^2 e^{2 Im(rho) u} / u du
                if abs(rho.imag) < 1e-14:
                    val += abs(K) ** 2 * math.log(hi / mid)
                else:
                    uu, ww = gl_panels(np.geomspace(mid, hi, 24), 16)
                    val += (abs(K) ** 2 * np.exp(2 * rho.imag * uu) / uu) @ ww
        pref = 2 * math.pi * r / a
        if Q is not None:
            return pref * np.conj(Q_at_r) * val
        return pref * val

    def shell_integral(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros(r.shape[0])
        for idx, rr in enumerate(r):
            out[idx] = self._shell_one(float(rr))
        return out

    def _shell_one(self, r):
        if r <= 0:
            return 0.0
        tot = 0j
        items = self.items
        rule = None
        for i, (ci, pi) in enumerate(items):
            for j, (cj, pj) in enumerate(items):
                if j < i:
                    continue
                fac = 1.0 if i == j else 2.0
                ai, aj = np.linalg.norm(ci), np.linalg.norm(cj)
                same = np.linalg.norm(ci - cj) < 1e-14
                if same and ai < 1e-14:
                    v = 4 * math.pi * r * r * pi(np.array([r]))[0] * np.conj(pj(np.array([r]))[0])
                elif same and i == j:
                    v = self._axial(r, ai, pi)
                elif aj < 1e-14:
                    v = self._axial(r, ai, pi, Q_at_r=pj(np.array([r]))[0], Q=pj)
                elif ai < 1e-14:
                    v = np.conj(self._axial(r, aj, pj, Q_at_r=pi(np.array([r]))[0], Q=pi))
                else:
                    if rule is None:
                        rule = sphere_rule(3, 80, "product")
                    x = r * rule.nodes
                    v = r * r * rule.integrate(pi(np.linalg.norm(x - ci, axis=1)) * np.conj(pj(np.linalg.norm(x - cj, axis=1))))
                tot += fac * v.real if i != j else v
        return float(np.real(tot))

    def tail_mass(self, R) -> float:
        return 0.0 if (not self._far and not self.items) else math.inf


def as_field(f) -> EvaluableField:
    if isinstance(f, EvaluableField):
        return f
    if isinstance(f, FieldExpr):
        return GaussianField(f)
    if hasattr(f, "radial_field"):
        return f.radial_field()
    raise TypeError(f"cannot use {type(f).__name__} as an evaluable field")


# --------------------------------------------------------------------------
# ring integrals


def ring_integral(f: EvaluableField, j: int, tol=1e-11) -> float:
    """int_{C(j)} |f|^2 dx by adaptive quadrature of the shell integral."""
    lo, hi = RingDecomposition.bounds(j)
    if f.far_shell is not None and lo >= f.far_radius:
        return float(f.far_shell * (hi - lo))
    cuts = [lo] + [b for b in f.breakpoints() if lo < b < hi] + [hi]
    if f.far_shell is not None and lo < f.far_radius < hi:
        cuts = sorted(set(cuts + [f.far_radius]))
    tot = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if f.far_shell is not None and a >= f.far_radius:
            tot += f.far_shell * (b - a)
            continue
        # panel width of ~2 keeps the per-panel oscillation mild
        edges = np.linspace(a, b, max(2, int(math.ceil((b - a) / 2.0)) + 1))
        for e0, e1 in zip(edges[:-1], edges[1:]):
            res = adaptive_1d(lambda r: f.shell_integral(r), e0, e1, tol=tol * max(1.0, e1 - e0), rel=1e-11)
            tot += float(np.real(res.value))
    return tot


@dataclass
class NormResult:
    value: float
    truncated: float
    tail_bound: float
    ring_terms: list = field(default_factory=list)
    sup_index: int | None = None
    sup_interior: bool = True


def b_norm(f, rd: RingDecomposition = RingDecomposition(), tol=1e-8) -> NormResult:
    """Truncated ring sum plus a certified bound for rings beyond ``rd.j_max``."""
    f = as_field(f)
    terms = []
    for j in rd.indices:
        lo, hi = rd.bounds(j)
        if f.tail_mass(lo) == 0.0:
            terms.append(0.0)
            continue
        terms.append(math.sqrt(max(2.0 ** (j + 1) * ring_integral(f, j), 0.0)))
    tail = _b_tail(f, rd)
    if tail > tol:
        need = rd.j_max
        while _b_tail(f, RingDecomposition(need)) > tol and need < 200:
            need += 1
        raise NormError(f"B-norm tail bound {tail:.3g} exceeds tolerance; J_max >= {need} required")
    s = float(sum(terms))
    return NormResult(s, s, tail, terms)


def _b_tail(f: EvaluableField, rd: RingDecomposition) -> float:
    tot = 0.0
    j = rd.j_max + 1
    while j < rd.j_max + 200:
        lo = 2.0**j
        m = f.tail_mass(lo)
        if not math.isfinite(m):
            return math.inf
        # sum over remaining rings of sqrt(2^{j+1} mass_j) <= sum sqrt(2^{j+1} tail(2^j))
        term = math.sqrt(2.0 ** (j + 1) * m)
        tot += term
        if term < 1e-30:
            break
        j += 1
    return tot


def bstar_norm(u, rd: RingDecomposition = RingDecomposition()) -> NormResult:
    """sup over rings of (2^-j int_{C(j)} |u|^2)^{1/2}; flags whether the sup sits
    strictly inside [-1, J_max)."""
    u = as_field(u)
    terms = []
    for j in rd.indices:
        lo, _ = rd.bounds(j)
        # rings carrying no mass at all (Gaussian tails underflow) contribute 0
        terms.append(0.0 if u.tail_mass(lo) == 0.0 else math.sqrt(max(2.0 ** (-j) * ring_integral(u, j), 0.0)))
    k = int(np.argmax(terms))
    interior = k < len(terms) - 1
    # rings beyond J_max: far-field rings give exactly far_shell; faster decay gives less
    tail = math.sqrt(max(u.far_shell, 0.0)) if u.far_shell is not None else 0.0
    if not interior and tail >= terms[k]:
        warnings.warn("B* sup attained at J_max: possible truncation bias")
    value = max(terms[k], tail) if u.far_shell is not None else terms[k]
    return NormResult(float(value), float(terms[k]), float(tail), terms, k - 1, interior)


def weighted_l2(u, exponent: float, r_cap=1e7) -> float:
    """|| <x>^exponent u ||_{L^2} with <x> = (1 + |x|^2)^{1/2}."""
    u = as_field(u)
    if isinstance(u, ZeroField):
        return 0.0
    g = lambda r: (1 + r * r) ** exponent * u.shell_integral(r)
    if isinstance(u, GaussianField):
        if u.f.is_zero:
            return 0.0
        top = u.f.radius_bound(45.0)
    elif isinstance(u, BallIndicator):
        top = u.radius
    else:
        top = max(u.far_radius, 1.0)
    cuts = sorted({0.0, top, *[b for b in u.breakpoints() if b < top]})
    tot = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        edges = np.linspace(a, b, max(2, int(math.ceil((b - a) / 2.0)) + 1))
        for e0, e1 in zip(edges[:-1], edges[1:]):
            tot += float(np.real(adaptive_1d(g, e0, e1, tol=1e-13, rel=1e-12).value))
    I = u.far_shell
    if I:
        p = 2 * exponent
        if p >= -1:
            raise NormError(f"weighted L2 norm diverges: |u|^2 ~ |x|^-2 with weight exponent {exponent}")
        # int_top^inf (1 + r^2)^e dr = top^{2e+1}/(-2e-1) 2F1(-e, -e-1/2; 1/2-e; -1/top^2)
        e = exponent
        tail_val = top ** (2 * e + 1) / (-2 * e - 1) * hyp2f1(-e, -e - 0.5, 0.5 - e, -1.0 / top**2)
        tot += I * tail_val
    return math.sqrt(max(tot, 0.0))


# --------------------------------------------------------------------------
# observable norm and trace functional


def _sup_weighted(phi: FieldExpr, rho: float, p: float) -> float:
    """sup_x (1 + |x| + rho)^p |phi(x)|."""
    if phi.is_zero:
        return 0.0
    if len(phi.atoms) == 1:
        a = phi.atoms[0]
        m = np.linalg.norm(a.center)
        # the maximiser lies on the ray through the center, at |x| = t >= m
        f = lambda t: -((1 + t + rho) ** p) * abs(a.amplitude) * math.exp(-0.5 * a.inv_variance * (t - m) ** 2)
        hi = m + (p / math.sqrt(a.inv_variance)) + 10.0 / math.sqrt(a.inv_variance)
        res = minimize_scalar(f, bounds=(m, hi), method="bounded", options={"xatol": 1e-12})
        return float(max(-res.fun, -f(m)))
    # several atoms: multistart on the full space
    from scipy.optimize import minimize

    best = 0.0
    starts = [a.center for a in phi.atoms] + [np.zeros(phi.d)]
    for x0 in starts:
        g = lambda x: -((1 + np.linalg.norm(x) + rho) ** p) * abs(phi(x[None, :])[0])
        res = minimize(g, np.asarray(x0, float) + 1e-3, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -res.fun, -g(np.asarray(x0, float)))
    return float(best)


def xlambda_norm(a, lam: float, n=64) -> float:
    """int_{R^d} sup_x (1 + |x| + |y|)^{1+lam} |phi(x)| |psi_hat(y)| dy for a = phi(x) psi(xi)."""
    if lam <= 0:
        raise NormError("lambda must be positive")
    phi, psi = a.phi, a.psi
    if phi.is_zero or psi.is_zero:
        return 0.0
    K = psi.fourier()
    d = K.d
    p = 1.0 + lam
    if len(K.atoms) == 1:
        at = K.atoms[0]
        mod = FieldExpr((type(at)(abs(at.amplitude), at.center, at.inv_variance, np.zeros(d)),), d)
        shell = lambda r: mod.sphere_integral(r).real
    else:
        rule = sphere_rule(d, 40, "product") if d == 3 else sphere_rule(d, 60)
        shell = lambda r: np.array([rule.integrate(np.abs(K(ri * rule.nodes))) for ri in np.atleast_1d(r)])
    top = K.radius_bound(45.0)
    r, w = gl_panels(np.linspace(0.0, top, 33), n // 2)
    sup = np.array([_sup_weighted(phi, ri, p) for ri in r])
    return float(np.sum(w * r ** (d - 1) * shell(r) * sup))


def trace_functional(f) -> float:
    """int_R ||f(x_1, .)||_{L^2(R^{d-1})} dx_1  (d = 3)."""
    if isinstance(f, BallIndicator):
        if f.d != 3:
            raise NormError("trace functional is defined for d = 3")
        R = f.radius
        return float(math.sqrt(math.pi) * math.pi / 2 * R**2)
    if isinstance(f, ZeroField):
        return 0.0
    if isinstance(f, GaussianField):
        f = f.f
    if not isinstance(f, FieldExpr):
        raise TypeError("trace_functional needs a FieldExpr or a ball indicator")
    if f.d != 3:
        raise NormError("trace functional is defined for d = 3")
    if f.is_zero:
        return 0.0
    g = f.abs2()

    def slab(x1):
        x1 = np.atleast_1d(x1)
        out = np.zeros(x1.shape, dtype=complex)
        for a in g.atoms:
            s, m, k = a.inv_variance, a.center, a.modulation
            perp = a.amplitude * (TWO_PI / s) * np.exp(1j * (k[1:] @ m[1:]) - 0.5 * (k[1:] @ k[1:]) / s)
            out += perp * np.exp(-0.5 * s * (x1 - m[0]) ** 2 + 1j * k[0] * x1)
        return np.sqrt(np.maximum(out.real, 0.0))

    lo = min(a.center[0] - math.sqrt(90 / a.inv_variance) for a in g.atoms)
    hi = max(a.center[0] + math.sqrt(90 / a.inv_variance) for a in g.atoms)
    edges = np.linspace(lo, hi, 41)
    return float(sum(adaptive_1d(slab, a, b, tol=1e-13).value.real for a, b in zip(edges[:-1], edges[1:])))
