"""Quadratic phase-space observables  <W^eps(u, v), a>  for a(x, xi) = phi(x) psi(xi).

With  W^eps(u,v)(x,xi) = (2 pi)^-d int exp(-i y.xi) u(x + eps y/2) conj v(x - eps y/2) dy
the pairing against a separable symbol is

    <W, a> = int int u(X + eps z/2) conj v(X - eps z/2) phi(X) K(z) dX dz,   K = psi_hat,
           = (2 pi)^d int int u_hat(p) conj v_hat(q) phi_hat(q - p) psi(eps (p+q)/2) dp dq.

For Gaussian fields both forms are evaluated in closed form.  For Helmholtz
solutions the x-space form is used in the rescaled frame X = eps Y, with Y
drawn by importance sampling along the rays of each source and z integrated
by a tensor Gauss-Hermite rule on the atoms of K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_hermite

from .model import FieldExpr, Scenario, TWO_PI
from .quadrature import GaussianMixtureSampler, mc_integrate, sphere_rule
from .helmholtz import (
    SpectralSolution,
    resolvent_radial_integral,
    solve_rescaled,
)


# --------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    phi: FieldExpr
    psi: FieldExpr
    name: str = "a"
    off_sphere: bool = False
    off_zero_frequency: bool = False

    @property
    def d(self):
        return self.phi.d

    @property
    def kernel(self) -> FieldExpr:
        """K(z) = psi_hat(z), the x-space weight of the pairing."""
        return self.psi.fourier()

    def __call__(self, x, xi):
        return self.phi(x) * self.psi(xi)

    def scaled(self, c) -> "Observable":
        return Observable(self.phi.scale(c), self.psi, self.name, self.off_sphere, self.off_zero_frequency)

    @property
    def is_zero(self):
        return self.phi.is_zero or self.psi.is_zero

    def is_real(self, n=64, seed=7) -> bool:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, self.d)) * 2
        return bool(
            np.max(np.abs(np.imag(self.phi(x)))) < 1e-14 * max(1.0, self.phi.sup_abs_bound())
            and np.max(np.abs(np.imag(self.psi(x)))) < 1e-14 * max(1.0, self.psi.sup_abs_bound())
        )


def _max_on_shells(psi: FieldExpr, radii):
    d = psi.d
    if d == 1:
        pts = np.concatenate([radii, -radii])[:, None]
        return float(np.max(np.abs(psi(pts))))
    rule = sphere_rule(d, 30, "product") if d == 3 else sphere_rule(d, 60)
    vals = [np.max(np.abs(psi(r * rule.nodes))) for r in radii]
    return float(max(vals))


def _sup(psi: FieldExpr):
    pts = np.array([a.center for a in psi.atoms]) if psi.atoms else np.zeros((1, psi.d))
    return float(max(np.max(np.abs(psi(pts))), 1e-300))


def make_observable(phi: FieldExpr, psi: FieldExpr, name="a", shell=0.1, rel=1e-10) -> Observable:
    """Observable with its sphere-avoiding and origin-avoiding flags checked numerically.

    ``off_sphere``: |psi| < rel * sup|psi| for 1 - shell <= |xi| <= 1 + shell.
    ``off_zero_frequency``: the same bound on |xi| <= shell.
    """
    if phi.d != psi.d:
        raise ValueError("phi and psi must share the dimension")
    sup = _sup(psi)
    shell_r = np.linspace(1 - shell, 1 + shell, 21)
    zero_r = np.linspace(0.0, shell, 11)
    off_s = _max_on_shells(psi, shell_r) < rel * sup if not psi.is_zero else True
    off_z = _max_on_shells(psi, zero_r) < rel * sup if not psi.is_zero else True
    return Observable(phi, psi, name, bool(off_s), bool(off_z))


@dataclass(frozen=True)
class WignerPairingResult:
    value: complex
    error: float
    method: str
    budget: int = 0


# --------------------------------------------------------------------------
# closed-form Gaussian pairings


def _gauss2_integral(factors, d):
    """int int prod_j atom_j(alpha_j X + beta_j Z) [conjugated if flagged] dX dZ over R^{2d}.

    ``factors``: list of (GaussianAtom, alpha, beta, conj).  Each exponent
    -s/2 |alpha X + beta Z - m|^2 +/- i k.(alpha X + beta Z) is quadratic in (X, Z)
    and isotropic, so the integral reduces to a 2x2 matrix per coordinate.
    """
    M = np.zeros((2, 2))
    b = np.zeros((2, d), dtype=complex)
    c = 0j
    amp = 1 + 0j
    for atom, al, be, cj in factors:
        s, m, k = atom.inv_variance, atom.center, atom.modulation
        sgn = -1.0 if cj else 1.0
        v = np.array([al, be])
        M += s * np.outer(v, v)
        lin = s * m + sgn * 1j * k
        b += v[:, None] * lin[None, :]
        c += -0.5 * s * (m @ m)
        amp *= np.conj(atom.amplitude) if cj else atom.amplitude
    det = M[0, 0] * M[1, 1] - M[0, 1] ** 2
    Minv = np.array([[M[1, 1], -M[0, 1]], [-M[0, 1], M[0, 0]]]) / det
    quad = np.sum(b * (Minv @ b))
    return amp * np.exp(c + 0.5 * quad) * (TWO_PI**2 / det) ** (d / 2)


def gaussian_pairing(u: FieldExpr, v: FieldExpr, a: Observable, eps: float) -> complex:
    """Exact x-space form  int int u(X + eps z/2) conj v(X - eps z/2) phi(X) K(z)."""
    K = a.kernel
    total = 0j
    for au in u.atoms:
        for av in v.atoms:
            for ap in a.phi.atoms:
                for ak in K.atoms:
                    total += _gauss2_integral(
                        [(au, 1.0, eps / 2, False), (av, 1.0, -eps / 2, True), (ap, 1.0, 0.0, False), (ak, 0.0, 1.0, False)],
                        u.d,
                    )
    return complex(total)


def gaussian_pairing_fourier(u: FieldExpr, v: FieldExpr, a: Observable, eps: float) -> complex:
    """Exact Fourier form  (2 pi)^d int int u_hat(p) conj v_hat(q) phi_hat(q-p) psi(eps(p+q)/2)."""
    uh, vh, ph = u.fourier(), v.fourier(), a.phi.fourier()
    total = 0j
    for au in uh.atoms:
        for av in vh.atoms:
            for ap in ph.atoms:
                for aps in a.psi.atoms:
                    total += _gauss2_integral(
                        [(au, 1.0, 0.0, False), (av, 0.0, 1.0, True), (ap, -1.0, 1.0, False), (aps, eps / 2, eps / 2, False)],
                        u.d,
                    )
    return complex(TWO_PI**u.d * total)


def wigner_grid_d1(u: FieldExpr, v: FieldExpr, eps, x, xi, y_half=None, ny=2001):
    """W^eps(u,v) on a (x, xi) grid in d=1 straight from the definition."""
    if u.d != 1:
        raise ValueError("grid oracle is one-dimensional")
    if y_half is None:
        spread = max(u.radius_bound(40), v.radius_bound(40), 1.0)
        y_half = 2 * (spread + np.max(np.abs(x))) / eps
    y = np.linspace(-y_half, y_half, ny)
    hy = y[1] - y[0]
    X = x[:, None]
    prod = u((X + eps * y[None, :] / 2)[..., None]) * np.conj(v((X - eps * y[None, :] / 2)[..., None]))
    ph = np.exp(-1j * np.outer(xi, y))
    return (prod @ ph.T) * hy / TWO_PI


def wigner_pairing_d1_oracle(u, v, a: Observable, eps, nx=801, nxi=801):
    """<W, a> in d=1 by building W on a grid and integrating against phi * psi."""
    xr = max(a.phi.radius_bound(40), 1.0)
    xir = max(a.psi.radius_bound(40), 1.0)
    x = np.linspace(-xr, xr, nx)
    xi = np.linspace(-xir, xir, nxi)
    W = wigner_grid_d1(u, v, eps, x, xi)
    A = a.phi(x[:, None])[:, None] * a.psi(xi[:, None])[None, :]
    return complex(np.sum(W * A) * (x[1] - x[0]) * (xi[1] - xi[0]))


# --------------------------------------------------------------------------
# Weyl quantization (d <= 2 oracles)


def weyl_apply(symbol: Observable, f: FieldExpr, eps: float, x, n=401, half=None):
    """(a^W(x, eps D) f)(x) = (2 pi)^-d int int a((x+y)/2, eps xi) f(y) e^{i(x-y).xi} dxi dy.

    Direct quadrature: for each x the y-integral (trapezoidal, spectrally
    accurate on Gaussian integrands) is done for every xi on a grid covering
    the band of f, then the xi-integral.  Works for nearly constant symbols too.
    """
    d = f.d
    if d > 2:
        raise ValueError("weyl_apply is an oracle for d <= 2")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if half is None:
        half = f.radius_bound(40) + 1.0
    band = f.fourier().radius_bound(40) + 0.5 * min(symbol.phi.fourier().radius_bound(40), 50.0) + 1.0
    band = min(band, symbol.psi.radius_bound(40) / eps + 1.0)
    g = np.linspace(-half, half, n)
    k = np.linspace(-band, band, n)
    if d == 1:
        Y, wy = g[:, None], np.full(n, g[1] - g[0])
        XI, wxi = k[:, None], np.full(n, k[1] - k[0])
    else:
        Y = np.stack([m.ravel() for m in np.meshgrid(g, g, indexing="ij")], axis=1)
        wy = np.full(Y.shape[0], (g[1] - g[0]) ** 2)
        XI = np.stack([m.ravel() for m in np.meshgrid(k, k, indexing="ij")], axis=1)
        wxi = np.full(XI.shape[0], (k[1] - k[0]) ** 2)
    fy = f(Y) * wy
    psi_xi = symbol.psi(eps * XI) * wxi
    ph_y = np.exp(-1j * Y @ XI.T)  # (ny, nxi)
    out = np.zeros(x.shape[0], dtype=complex)
    for i, xi_ in enumerate(x):
        inner = (symbol.phi(0.5 * (xi_[None, :] + Y)) * fy) @ ph_y
        out[i] = np.sum(inner * psi_xi * np.exp(1j * XI @ xi_)) / TWO_PI**d
    return out


def reflect_symbol(a: Observable) -> Observable:
    """a(x, xi) -> a(x, -xi)."""
    return Observable(a.phi, a.psi.dilate(-1.0), a.name + "~", a.off_sphere, a.off_zero_frequency)


@dataclass(frozen=True)
class DualityResidual:
    literal: float
    reflected: float
    lhs: complex
    rhs_literal: complex
    rhs_reflected: complex


def conj_symbol(a: Observable) -> Observable:
    return Observable(a.phi.conj(), a.psi.conj(), a.name + "*", a.off_sphere, a.off_zero_frequency)


def weyl_duality_check(u: FieldExpr, v: FieldExpr, a: Observable, eps: float, n=801) -> DualityResidual:
    """Compare <W(u,v), a> = int int W conj(a) (semilinear bracket, closed form) with
    <conj v, a^W conj u> = int conj(v) conj(a^W conj u) dx (Weyl operator by quadrature).

    ``literal`` uses the symbol as given; ``reflected`` uses a(x, -xi), which is
    the form that holds for symbols that are not even in xi.
    """
    if u.d != 1:
        raise ValueError("duality check runs in d=1")
    lhs = gaussian_pairing(u, v, conj_symbol(a), eps)
    half = max(u.radius_bound(40), v.radius_bound(40), a.phi.radius_bound(40)) + 1.0
    xg = np.linspace(-half, half, n)[:, None]
    hx = xg[1, 0] - xg[0, 0]
    uc = u.conj()
    rhs = []
    for sym in (a, reflect_symbol(a)):
        Au = weyl_apply(sym, uc, eps, xg, n=n, half=half)
        rhs.append(complex(np.sum(np.conj(v(xg)) * np.conj(Au)) * hx))
    return DualityResidual(abs(lhs - rhs[0]), abs(lhs - rhs[1]), lhs, rhs[0], rhs[1])


# --------------------------------------------------------------------------
# hybrid estimator for resolvent fields


def gh_nodes(K: FieldExpr, n: int):
    """Tensor Gauss-Hermite nodes covering each atom of K; returns (nodes, weights, env)
    with weights such that  sum_i weights_i g(nodes_i) ~ int K(z) g(z) dz."""
    t, w = roots_hermite(n)
    d = K.d
    grids = np.meshgrid(*([t] * d), indexing="ij")
    T = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    nodes, base = [], []
    for a in K.atoms:
        sc = math.sqrt(2.0 / a.inv_variance)
        z = a.center + sc * T
        nodes.append(z)
        # remove this atom's envelope; the kernel itself is re-applied below
        env = np.exp(-0.5 * a.inv_variance * np.sum((z - a.center) ** 2, axis=1))
        base.append(W * sc**d / env)
    return np.concatenate(nodes), np.concatenate(base), [len(x) for x in nodes]


def kernel_weights(K: FieldExpr, nodes, base, sizes, which=None):
    """Per-node weights for K (which=None) or for i dK/dz_k (which=k)."""
    out = np.zeros(nodes.shape[0], dtype=complex)
    start = 0
    for a, m in zip(K.atoms, sizes):
        z = nodes[start : start + m]
        val = a(z)
        if which is not None:
            val = 1j * (-a.inv_variance * (z[:, which] - a.center[which]) + 1j * a.modulation[which]) * val
        out[start : start + m] = base[start : start + m] * val
        start += m
    return out


class RaySampler:
    """Importance density in the rescaled frame Y.

    Mixture of (i) Gaussians matching phi(eps Y), (ii) 'ray' laws around each
    source center (radius uniform on [0, R], direction uniform, so the density
    ~ 1/r^2 follows the decay of |w|^2) and (iii) unit-scale Gaussians on the
    centers for the near field.
    """

    def __init__(self, phi: FieldExpr, eps, centers, widen=1.3, weights=(0.4, 0.4, 0.2), core=2.0):
        self.eps = eps
        self.d = phi.d
        means = np.array([a.center / eps for a in phi.atoms])
        sig = np.array([widen / (eps * math.sqrt(a.inv_variance)) for a in phi.atoms])
        wts = np.array([abs(a.amplitude) for a in phi.atoms])
        self.gauss = GaussianMixtureSampler(means, sig, wts)
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float)).reshape(-1, self.d)
        self.reach = np.array([max(np.linalg.norm(m - c) + 6 * sg for m, sg in zip(means, sig)) for c in self.centers])
        w = np.array(weights, dtype=float)
        if not len(self.centers):
            w[1:] = 0.0
        self.w = w / w.sum()
        self.core = GaussianMixtureSampler(self.centers, core) if len(self.centers) else None
        self.area = 2 * math.pi ** (self.d / 2) / math.gamma(self.d / 2)

    def sample(self, rng, n):
        comp = rng.choice(3, size=n, p=self.w)
        g, _ = self.gauss.sample(rng, n)
        if self.core is not None:
            j = rng.integers(len(self.centers), size=n)
            r = rng.random(n) * self.reach[j]
            v = rng.standard_normal((n, self.d))
            v /= np.linalg.norm(v, axis=1)[:, None]
            ray = self.centers[j] + r[:, None] * v
            c, _ = self.core.sample(rng, n)
            g = np.where((comp == 1)[:, None], ray, g)
            g = np.where((comp == 2)[:, None], c, g)
        return g, self.density(g)

    def density(self, Y):
        out = self.w[0] * self.gauss.density(Y)
        if self.core is not None:
            nc = len(self.centers)
            for c, R in zip(self.centers, self.reach):
                r = np.linalg.norm(Y - c, axis=1)
                out = out + self.w[1] / nc * np.where(r < R, 1.0 / (self.area * np.maximum(r, 1e-300) ** (self.d - 1) * R), 0.0)
            out = out + self.w[2] * self.core.density(Y)
        return out


@dataclass
class FieldTerm:
    """A field in the rescaled frame: u(x) = scale * f(x / eps)."""

    f: object
    scale: complex
    centers: np.ndarray
    solution: SpectralSolution | None = None


def field_term_from_solution(sol: SpectralSolution, scale=1.0) -> FieldTerm:
    centers = np.array([c for c, _ in sol.profiles()]) if sol.unmodulated else np.zeros((0, sol.d))
    return FieldTerm(lambda Y: sol.evaluate(Y).values, scale, centers, sol)


def hybrid_pairing(
    u: FieldTerm,
    v: FieldTerm,
    eps: float,
    terms,
    K: FieldExpr,
    n_samples=20000,
    seed=0,
    gh=6,
    chunk=48,
    phi_for_sampling: FieldExpr | None = None,
) -> WignerPairingResult:
    """sum over terms of  eps^d scale_u conj(scale_v) int int f_u(Y+z/2) conj f_v(Y-z/2) phi_t(eps Y) K_t(z) dY dz.

    ``terms``: list of (phi_fn, kernel_index) with kernel_index None for K and
    k for i dK/dz_k.  Y is sampled by RaySampler, z uses Gauss-Hermite.
    """
    d = K.d
    nodes, base, sizes = gh_nodes(K, gh)
    wts = {}
    for _, which in terms:
        if which not in wts:
            wts[which] = kernel_weights(K, nodes, base, sizes, which)
    centers = np.concatenate([u.centers, v.centers]) if len(u.centers) + len(v.centers) else np.zeros((0, d))
    centers = np.unique(np.round(centers, 12), axis=0)
    sampler = RaySampler(phi_for_sampling, eps, centers)
    half = 0.5 * nodes

    def integrand(Y):
        out = np.zeros(Y.shape[0], dtype=complex)
        for i in range(0, Y.shape[0], chunk):
            Yb = Y[i : i + chunk]
            P = (Yb[:, None, :] + half[None, :, :]).reshape(-1, d)
            Mn = (Yb[:, None, :] - half[None, :, :]).reshape(-1, d)
            G = (u.f(P) * np.conj(v.f(Mn))).reshape(Yb.shape[0], -1)
            acc = np.zeros(Yb.shape[0], dtype=complex)
            for phi_fn, which in terms:
                acc += phi_fn(eps * Yb) * (G @ wts[which])
            out[i : i + chunk] = acc
        return out

    est = mc_integrate(integrand, sampler, n_samples, seed, batch=4096)
    pref = eps**d * u.scale * np.conj(v.scale)
    return WignerPairingResult(complex(pref * est.value), float(abs(pref) * est.stderr), "hybrid-mc", n_samples * nodes.shape[0])


def spectral_pairing(u: SpectralSolution, v: SpectralSolution, a: Observable, eps, scale_u=1.0, scale_v=1.0, gh_h=10, gh_q=10, cutoff=10.0) -> WignerPairingResult:
    """<W^eps(u, v), a> for u = scale_u w_u(x/eps), v = scale_v w_v(x/eps) by the Fourier route

        (2 pi)^d eps^d su conj(sv) int dh phi_hat(h) int dQ w_u_hat(Q - eps h/2) conj w_v_hat(Q + eps h/2) psi(Q).

    Only for sphere-avoiding observables: the resolvents are then smooth on the
    support of psi and both integrals use Gauss-Hermite rules on the atoms of
    phi_hat and psi.  Atom pairs whose relative modulation kappa satisfies
    kappa * sigma_psi > ``cutoff`` contribute below exp(-cutoff^2 / 2) and are skipped.
    """
    if not a.off_sphere:
        raise ValueError("spectral_pairing needs an off-sphere observable")
    if a.is_zero or u.numerator.is_zero or v.numerator.is_zero:
        return WignerPairingResult(0j, 0.0, "zero")
    d = a.d
    k2u, k2v = u.k2, np.conj(v.k2)

    def run(nh, nq):
        hn, hw = _source_nodes(a.phi.fourier(), nh)
        half = 0.5 * eps * hn
        total = 0j
        for C in a.psi.atoms:
            qn, qw = _source_nodes(FieldExpr((C,), d), nq)
            sig = 1.0 / math.sqrt(C.inv_variance)
            P = qn[None, :, :] - half[:, None, :]
            M = qn[None, :, :] + half[:, None, :]
            res = 1.0 / ((k2u - np.sum(P * P, axis=-1)) * (k2v - np.sum(M * M, axis=-1)))
            for A in u.numerator.atoms:
                for B in v.numerator.atoms:
                    if np.linalg.norm(A.modulation - B.modulation) * sig > cutoff:
                        continue
                    f = A(P) * np.conj(B(M)) * res
                    total += hw @ (f @ qw)
        return TWO_PI**d * eps**d * scale_u * np.conj(scale_v) * total

    v1 = run(gh_h, gh_q)
    v0 = run(max(gh_h - 2, 4), max(gh_q - 2, 4))
    return WignerPairingResult(complex(v1), float(abs(v1 - v0)), "spectral-gauss-hermite")


def common_axis(a: Observable, *terms, tol=1e-12):
    """Unit vector of a line through 0 carrying every center and modulation of
    phi, psi and the field terms, or None when no such axis exists."""
    vecs = [v for f in (a.phi, a.psi) for at in f.atoms for v in (at.center, at.modulation)]
    for t in terms:
        vecs.extend(t.centers)
    vecs = [np.asarray(v, float) for v in vecs if np.linalg.norm(v) > tol]
    if a.d != 3:
        return None
    if not vecs:
        return np.array([1.0, 0.0, 0.0])
    e = vecs[int(np.argmax([np.linalg.norm(v) for v in vecs]))]
    e = e / np.linalg.norm(e)
    for v in vecs:
        if np.linalg.norm(v - (v @ e) * e) > tol * max(1.0, np.linalg.norm(v)):
            return None
    return e


def axisymmetric_pairing(u: FieldTerm, v: FieldTerm, eps, terms, K: FieldExpr, phi: FieldExpr, axis, gh=6, n=10, panel=2.0, chunk=64) -> WignerPairingResult:
    """Deterministic version of :func:`hybrid_pairing` when everything is
    symmetric about ``axis``: the Y-integrand is then invariant under rotations
    about the axis and Y runs over a half-plane (t, rho) with weight 2 pi rho.
    Gauss-Legendre panels of width ``panel`` resolve the interference between
    the two sources (local frequency at most 2); the error is the change
    against a rule with two fewer nodes per panel and in each z-direction.
    """
    d = 3
    e = np.asarray(axis, float)
    perp = np.cross(e, [0.0, 0.0, 1.0] if abs(e[2]) < 0.9 else [1.0, 0.0, 0.0])
    perp /= np.linalg.norm(perp)
    sig = np.array([1.0 / math.sqrt(at.inv_variance) for at in phi.atoms]) / eps
    tc = np.array([at.center @ e for at in phi.atoms]) / eps
    L = 7.5 * sig.max()
    t_edges = np.arange(tc.min() - L, tc.max() + L + panel, panel)
    r_edges = np.arange(0.0, L + panel, panel)

    def env_ok(t0, t1, r0):
        dt = np.maximum(0.0, np.maximum(t0 - tc, tc - t1))
        return np.any((dt**2 + r0**2) / sig**2 < 60.0)

    def run(nn, ng):
        x, wx = np.polynomial.legendre.leggauss(nn)
        nodes, base, sizes = gh_nodes(K, ng)
        wts = {w: kernel_weights(K, nodes, base, sizes, w) for _, w in terms}
        half = 0.5 * nodes
        pts, pw = [], []
        for i in range(len(t_edges) - 1):
            t0, t1 = t_edges[i], t_edges[i + 1]
            for j in range(len(r_edges) - 1):
                r0, r1 = r_edges[j], r_edges[j + 1]
                if not env_ok(t0, t1, r0):
                    continue
                tt = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x
                rr = 0.5 * (r0 + r1) + 0.5 * (r1 - r0) * x
                T, R = np.meshgrid(tt, rr, indexing="ij")
                W = np.outer(wx, wx) * 0.25 * (t1 - t0) * (r1 - r0) * 2 * math.pi * R
                pts.append(np.c_[T.ravel(), R.ravel()])
                pw.append(W.ravel())
        pts = np.concatenate(pts)
        pw = np.concatenate(pw)
        Y = pts[:, :1] * e + pts[:, 1:] * perp
        total = 0j
        for i in range(0, Y.shape[0], chunk):
            Yb = Y[i : i + chunk]
            P = (Yb[:, None, :] + half[None, :, :]).reshape(-1, d)
            Mn = (Yb[:, None, :] - half[None, :, :]).reshape(-1, d)
            G = (u.f(P) * np.conj(v.f(Mn))).reshape(Yb.shape[0], -1)
            acc = np.zeros(Yb.shape[0], dtype=complex)
            for phi_fn, w in terms:
                acc += phi_fn(eps * Yb) * (G @ wts[w])
            total += pw[i : i + chunk] @ acc
        return total, Y.shape[0] * nodes.shape[0]

    v1, budget = run(n, gh)
    v0, _ = run(n - 2, gh - 1)
    pref = eps**d * u.scale * np.conj(v.scale)
    return WignerPairingResult(complex(pref * v1), float(abs(pref * (v1 - v0))), "axisymmetric", budget)


def _phi_terms(a: Observable, gradient=False):
    if not gradient:
        return [(lambda X, f=a.phi: f(X), None)]
    d = a.d
    return [(lambda X, f=a.phi, k=k: f.grad(X)[:, k], k) for k in range(d)]


# --------------------------------------------------------------------------
# scenario-level functionals


def full_field(s: Scenario, eps, which=None) -> FieldTerm:
    """u^eps (or its single-source part) as eps^{-(d-1)/2} w(x/eps), w rescaled about 0."""
    sc = s if which is None else s.only(which)
    sol = solve_rescaled(sc, eps, 0)
    return field_term_from_solution(sol, eps ** (-(s.d - 1) / 2))


def wigner_pairing(u, v, a: Observable, eps: float, n_samples=20000, seed=0, gh=6, gradient=False) -> WignerPairingResult:
    """<W^eps(u, v), a> for FieldExpr pairs (exact) or FieldTerm pairs.

    FieldTerm pairs go to the spectral route for off-sphere observables, to the
    deterministic axisymmetric route when all centers share an axis, and to
    hybrid Monte Carlo otherwise."""
    if a.is_zero:
        return WignerPairingResult(0j, 0.0, "zero")
    if isinstance(u, FieldExpr) and isinstance(v, FieldExpr):
        if gradient:
            raise ValueError("use xi_grad_observables for FieldExpr inputs")
        return WignerPairingResult(gaussian_pairing(u, v, a, eps), 1e-15, "closed-form")
    if a.off_sphere and not gradient and isinstance(u, FieldTerm) and u.solution is not None and v.solution is not None:
        return spectral_pairing(u.solution, v.solution, a, eps, u.scale, v.scale)
    radial = lambda t: isinstance(t, FieldTerm) and t.solution is not None and t.solution.unmodulated
    if not gradient and radial(u) and radial(v):
        axis = common_axis(a, u, v)
        if axis is not None:
            return axisymmetric_pairing(u, v, eps, _phi_terms(a), a.kernel, a.phi, axis, gh=gh, panel=3.0)
    return hybrid_pairing(u, v, eps, _phi_terms(a, gradient), a.kernel, n_samples, seed, gh, phi_for_sampling=a.phi)


def scenario_pairing(s: Scenario, eps, a: Observable, n_samples=20000, seed=0, gh=6, gradient=False):
    """<W^eps(u^eps), a> (or <W^eps, xi.grad_x a> when ``gradient``)."""
    u = full_field(s, eps)
    return wigner_pairing(u, u, a, eps, n_samples, seed, gh, gradient)


def cross_term(s: Scenario, eps, a: Observable, n_samples=20000, seed=0, gh=6) -> WignerPairingResult:
    """<W^eps(u0^eps, u1^eps), a> with single-source solutions."""
    if s.S0.is_zero or s.S1.is_zero:
        return WignerPairingResult(0j, 0.0, "zero")
    u0 = full_field(s, eps, 0)
    u1 = full_field(s, eps, 1)
    return wigner_pairing(u0, u1, a, eps, n_samples, seed, gh)


def _source_nodes(S: FieldExpr, n):
    t, w = roots_hermite(n)
    d = S.d
    grids = np.meshgrid(*([t] * d), indexing="ij")
    T = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    nodes, wts = [], []
    for a in S.atoms:
        sc = math.sqrt(2.0 / a.inv_variance)
        z = a.center + sc * T
        env = np.exp(-0.5 * a.inv_variance * np.sum((z - a.center) ** 2, axis=1))
        nodes.append(z)
        wts.append(W * sc**d * a(z) / env)
    return np.concatenate(nodes), np.concatenate(wts)


def source_term_pairing(s: Scenario, eps, which: int, a: Observable, gh_s=8, gh_z=10, gradient=False, swap=False) -> WignerPairingResult:
    """eps <W^eps(S^eps_which, u^eps), a>  (``swap``: eps <W^eps(u^eps, S^eps_which), a>).

    In the rescaled frame this is  int int S(s) conj w(s - z) phi(eps (s - z/2)) K(z) ds dz
    with S the rescaled source (centered at q1/eps for which=1) and w rescaled
    about 0; both integrals use tensor Gauss-Hermite rules, so the value is
    deterministic.
    """
    src = s.S0 if which == 0 else s.S1.shift(s.q1 / eps)
    if src.is_zero or a.is_zero:
        return WignerPairingResult(0j, 0.0, "zero")
    w = solve_rescaled(s, eps, 0)

    def run(ns, nz):
        sn, sw = _source_nodes(src, ns)
        K = a.kernel
        zn, zb, sizes = gh_nodes(K, nz)
        total = 0j
        for phi_fn, which_k in _phi_terms(a, gradient):
            zw = kernel_weights(K, zn, zb, sizes, which_k)
            for i in range(0, sn.shape[0], 64):
                sb = sn[i : i + 64]
                if not swap:
                    pts = sb[:, None, :] - zn[None, :, :]
                    mid = sb[:, None, :] - 0.5 * zn[None, :, :]
                    wv = np.conj(w.evaluate(pts.reshape(-1, s.d)).values).reshape(sb.shape[0], -1)
                    srcv = sw[i : i + 64]
                    total += np.sum(srcv[:, None] * wv * phi_fn(eps * mid.reshape(-1, s.d)).reshape(sb.shape[0], -1) * zw[None, :])
                else:
                    # u(Y + z/2) conj S(Y - z/2): substitute s = Y - z/2
                    pts = sb[:, None, :] + zn[None, :, :]
                    mid = sb[:, None, :] + 0.5 * zn[None, :, :]
                    wv = w.evaluate(pts.reshape(-1, s.d)).values.reshape(sb.shape[0], -1)
                    srcv = np.conj(sw[i : i + 64])
                    total += np.sum(srcv[:, None] * wv * phi_fn(eps * mid.reshape(-1, s.d)).reshape(sb.shape[0], -1) * zw[None, :])
        return total

    v1 = run(gh_s, gh_z)
    v0 = run(max(gh_s - 2, 4), max(gh_z - 2, 4))
    return WignerPairingResult(complex(v1), float(abs(v1 - v0)), "gauss-hermite")


def source_term_pairing_fourier(s: Scenario, eps, which: int, a: Observable, gh_h=10, n=16) -> WignerPairingResult:
    """Same quantity by the Fourier route

        (2 pi)^d int dh phi_hat(h) int dQ  S_hat(Q - eps h) psi(Q - eps h/2) conj N(Q) / (1 - |Q|^2 + i eta),

    N the numerator of w; the Q-integral uses closed-form angular integration and
    the radial pole subtraction, the h-integral a Gauss-Hermite rule on phi_hat.
    """
    src = s.S0 if which == 0 else s.S1.shift(s.q1 / eps)
    if src.is_zero or a.is_zero:
        return WignerPairingResult(0j, 0.0, "zero")
    w = solve_rescaled(s, eps, 0)
    Sh = src.fourier()
    Nc = w.numerator.conj()
    ph = a.phi.fourier()

    def run(nh, nn):
        hn, hw = _source_nodes(ph, nh)
        total = 0j
        err = 0.0
        for h, wt in zip(hn, hw):
            G = Sh.shift(eps * h) * a.psi.shift(0.5 * eps * h) * Nc
            Gc = G.conj()
            r_max = max(Gc.radius_bound(40.0), 2.0)
            freq = Gc.max_frequency()
            val, e = resolvent_radial_integral(lambda r: r**2 * Gc.sphere_integral(r), w.k2, r_max, freq, nn)
            # conj trick: int G / (1 - |Q|^2 + i eta) = conj(int conj G / (1 - |Q|^2 - i eta))
            total += wt * np.conj(val)
            err += abs(wt) * float(e)
        return TWO_PI**s.d * total, TWO_PI**s.d * err

    v1, e1 = run(gh_h, n)
    v0, _ = run(max(gh_h - 2, 4), n)
    return WignerPairingResult(complex(v1), float(abs(v1 - v0) + e1), "fourier-gauss-hermite")


def source_limit(s: Scenario, which: int, a: Observable, n=16) -> complex:
    """lim eps <W^eps(S^eps_j, u^eps), a> = (2 pi)^d phi(x_j) int |S_j_hat|^2 psi / (1 - |xi|^2 + i0) dxi."""
    S = s.S0 if which == 0 else s.S1
    if S.is_zero or a.is_zero:
        return 0j
    xj = np.zeros(s.d) if which == 0 else s.q1
    Sh = S.fourier()
    G = (Sh * Sh.conj() * a.psi).conj()
    r_max = max(G.radius_bound(40.0), 2.0)
    val, _ = resolvent_radial_integral(lambda r: r**2 * G.sphere_integral(r), 1.0 + 0j, r_max, G.max_frequency(), n)
    phi_x = complex(a.phi(xj[None, :])[0])
    return complex(TWO_PI**s.d * phi_x * np.conj(val))


def source_limit_split(s: Scenario, which: int, a: Observable, order=40):
    """(p.v. part, delta part) of source_limit: the delta part is
    -(i pi / 2) (2 pi)^d phi(x_j) int_{S^{d-1}} |S_hat|^2 psi dsigma, evaluated with a sphere rule."""
    S = s.S0 if which == 0 else s.S1
    xj = np.zeros(s.d) if which == 0 else s.q1
    Sh = S.fourier()
    rule = sphere_rule(s.d, order, "product")
    sph = rule.integrate(np.abs(Sh(rule.nodes)) ** 2 * a.psi(rule.nodes))
    phi_x = complex(a.phi(xj[None, :])[0])
    delta = -0.5j * math.pi * TWO_PI**s.d * phi_x * sph
    total = source_limit(s, which, a)
    return complex(total - delta), complex(delta)


def q_eps_pairing(s: Scenario, eps, a: Observable, gradient=False, **kw) -> WignerPairingResult:
    """<Q^eps, a> = (i eps / 2) [<W(S^eps, u^eps), a> - <W(u^eps, S^eps), a>]."""
    vals, errs = 0j, 0.0
    for j in (0, 1):
        p = source_term_pairing(s, eps, j, a, gradient=gradient, **kw)
        q = source_term_pairing(s, eps, j, a, gradient=gradient, swap=True, **kw)
        vals += 0.5j * (p.value - q.value)
        errs += 0.5 * (p.error + q.error)
    return WignerPairingResult(complex(vals), errs, "gauss-hermite")


@dataclass(frozen=True)
class TransportResidual:
    residual: float
    combined_error: float
    damping_term: WignerPairingResult
    transport_term: WignerPairingResult
    source_term: WignerPairingResult

    @property
    def ok(self):
        return self.residual <= self.combined_error


def transport_identity_residual(s: Scenario, eps, a: Observable, n_samples=20000, seed=0, gh=6, nsigma=3.0) -> TransportResidual:
    """|alpha <W, a> + <W, xi.grad_x a> - <Q^eps, a>|  with the three pairings computed separately.

    The combined error is nsigma times the root-sum-square of the three error estimates.
    """
    alpha = s.alpha(eps)
    if s.S0.is_zero and s.S1.is_zero:
        z = WignerPairingResult(0j, 0.0, "zero")
        return TransportResidual(0.0, 0.0, z, z, z)
    A = scenario_pairing(s, eps, a, n_samples, seed, gh)
    B = scenario_pairing(s, eps, a, n_samples, seed + 1, gh, gradient=True)
    Q = q_eps_pairing(s, eps, a)
    res = abs(alpha * A.value + B.value - Q.value)
    comb = nsigma * math.sqrt((alpha * A.error) ** 2 + B.error**2 + Q.error**2)
    return TransportResidual(float(res), float(comb), A, B, Q)
