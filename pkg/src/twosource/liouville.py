"""Limit objects of the high-frequency problem.

The source measure concentrates at the source points on the unit frequency
sphere,

    <Q, a> = C_Q sum_j (1/2) int_{S^{d-1}} |S_j_hat(w)|^2 a(x_j, w) dsigma(w),

and the outgoing measure transports it along straight rays,

    <mu, a> = C_Q sum_j (1/2) int_{S^{d-1}} |S_j_hat(w)|^2 [int_0^inf a(x_j + o t w, w) dt] psi dsigma,

with orientation o = -1 (backward rays, the limit of the Wigner transforms under
this package's Fourier convention) or o = +1 (forward rays).  The default
C_Q = (2 pi)^d pi makes <Q, a> the limit of the source pairings computed in
:mod:`twosource.wigner`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, roots_hermite

from .model import FieldExpr, Scenario, TWO_PI
from .quadrature import adaptive_1d, sphere_rule
from .wigner import Observable, make_observable

BACKWARD = -1
FORWARD = +1


def default_constant(d=3) -> float:
    return TWO_PI**d * math.pi


def reported_constant() -> float:
    """The constant (4 pi)^-2 quoted for the delta source in d = 3 (kept for reports)."""
    return 1.0 / (16 * math.pi**2)


# --------------------------------------------------------------------------
# ray integrals of Gaussian fields


def ray_integral(phi: FieldExpr, x0, omega, damping=0.0, direction=None):
    """int_0^inf exp(-damping t) f(x0 + t omega) dt in closed form per atom, with
    f = phi, or f = direction . grad phi when ``direction`` is given.

    ``x0``, ``omega`` and ``direction`` are arrays of shape (n, d) (broadcast);
    ``omega`` need not be a unit vector; ``damping`` is a scalar or shape (n,).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    om = np.atleast_2d(np.asarray(omega, dtype=float))
    x0, om = np.broadcast_arrays(x0, om)
    beta = np.broadcast_to(np.asarray(damping, dtype=float), (x0.shape[0],))
    v = None if direction is None else np.broadcast_to(np.asarray(direction, dtype=float), x0.shape)
    out = np.zeros(x0.shape[0], dtype=complex)
    for a in phi.atoms:
        s, m, k = a.inv_variance, a.center, a.modulation
        dd = x0 - m
        qa = 0.5 * s * np.sum(om * om, axis=1)
        qb = s * np.sum(dd * om, axis=1) - 1j * (om @ k) + beta
        c0 = -0.5 * s * np.sum(dd * dd, axis=1) + 1j * (x0 @ k)
        # I0 = int_0^inf exp(-qa t^2 - qb t) dt,  I1 = int_0^inf t exp(...) dt = (1 - qb I0) / (2 qa)
        # the factor exp(c0) is folded in to avoid overflow of erfcx for Re z < 0
        z = qb / (2 * np.sqrt(qa))
        neg = z.real < 0
        zz = np.where(neg, -z, z)
        ez = erfcx(zz) * np.exp(c0)
        ez = np.where(neg, 2 * np.exp(z * z + c0) - ez, ez)
        I0 = 0.5 * np.sqrt(math.pi / qa) * ez
        if v is None:
            val = I0
        else:
            I1 = (np.exp(c0) - qb * I0) / (2 * qa)
            # v . grad g = (-s v.(x - m) + i v.k) g, and v.(x - m) = v.dd + t v.om along the ray
            val = (-s * np.sum(v * dd, axis=1) + 1j * (v @ k)) * I0 - s * np.sum(v * om, axis=1) * I1
        out += a.amplitude * val
    return out


def ray_integral_adaptive(fn, x0, omega, damping=0.0, t_max=None, tol=1e-13):
    """Same integral for a generic callable ``fn`` (points -> values) by adaptive
    quadrature on [0, t_max]; used as an independent check of the closed form."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    om = np.atleast_2d(np.asarray(omega, dtype=float))
    x0, om = np.broadcast_arrays(x0, om)
    beta = np.broadcast_to(np.asarray(damping, dtype=float), (x0.shape[0],))
    out = np.zeros(x0.shape[0], dtype=complex)
    for i in range(x0.shape[0]):
        tm = t_max if t_max is not None else 60.0 / max(np.linalg.norm(om[i]), 1e-12)
        f = lambda t, i=i: np.exp(-beta[i] * t) * fn(x0[i][None, :] + t[:, None] * om[i][None, :])
        edges = np.linspace(0.0, tm, 13)
        out[i] = sum(adaptive_1d(f, a, b, tol=tol).value for a, b in zip(edges[:-1], edges[1:]))
    return out


# --------------------------------------------------------------------------
# source measure and ray measure


@dataclass(frozen=True)
class DeltaSphereSource:
    """Point sources x_j with frequency weights |S_j_hat|^2 on the unit sphere."""

    centers: tuple
    sources: tuple
    constant: float
    order: int = 60

    @classmethod
    def from_scenario(cls, s: Scenario, constant=None, order=60):
        cs, ss = [], []
        for xj, S in ((np.zeros(s.d), s.S0), (np.asarray(s.q1, dtype=float), s.S1)):
            if not S.is_zero:
                cs.append(xj)
                ss.append(S)
        return cls(tuple(cs), tuple(ss), default_constant(s.d) if constant is None else constant, order)

    @property
    def d(self):
        return self.sources[0].d if self.sources else 3

    def rule(self):
        d = self.d
        return sphere_rule(d, self.order, "product" if d == 3 else "fibonacci")

    def weights(self, j, nodes):
        Sh = self.sources[j].fourier()
        return np.abs(Sh(nodes)) ** 2

    def pairing_fn(self, fn) -> complex:
        """<Q, a> for a callable a(x, w) on arrays of shape (n, d)."""
        if not self.sources:
            return 0j
        rule = self.rule()
        tot = 0j
        for j, xj in enumerate(self.centers):
            X = np.broadcast_to(xj, rule.nodes.shape)
            tot += 0.5 * rule.integrate(self.weights(j, rule.nodes) * fn(X, rule.nodes))
        return complex(self.constant * tot)


def q_pairing(Q: DeltaSphereSource, a: Observable) -> complex:
    return Q.pairing_fn(lambda X, W: a.phi(X) * a.psi(W))


@dataclass(frozen=True)
class RayMeasure:
    source: DeltaSphereSource
    orientation: int = BACKWARD

    @classmethod
    def from_scenario(cls, s: Scenario, orientation=BACKWARD, constant=None, order=60):
        return cls(DeltaSphereSource.from_scenario(s, constant, order), orientation)

    def pairing_fn(self, ray_fn) -> complex:
        """<mu, a> where ray_fn(X, W, o) returns int_0^inf a(X + o t W, W) dt."""
        Q = self.source
        if not Q.sources:
            return 0j
        rule = Q.rule()
        tot = 0j
        for j, xj in enumerate(Q.centers):
            X = np.broadcast_to(xj, rule.nodes.shape)
            tot += 0.5 * rule.integrate(Q.weights(j, rule.nodes) * ray_fn(X, rule.nodes, self.orientation))
        return complex(Q.constant * tot)


def mu_pairing(mu: RayMeasure, a: Observable) -> complex:
    if a.is_zero:
        return 0j
    return mu.pairing_fn(lambda X, W, o: ray_integral(a.phi, X, o * W) * a.psi(W))


def mu_pairing_gradient(mu: RayMeasure, a: Observable) -> complex:
    """<mu, xi . grad_x a> with the ray integral of w . grad phi in closed form."""
    return mu.pairing_fn(lambda X, W, o: ray_integral(a.phi, X, o * W, direction=W) * a.psi(W))


def mu_pairing_adaptive(mu: RayMeasure, a: Observable) -> complex:
    """<mu, a> with adaptive quadrature along each ray (independent check)."""
    return mu.pairing_fn(lambda X, W, o: ray_integral_adaptive(a.phi, X, o * W) * a.psi(W))


# --------------------------------------------------------------------------
# transport resolvent


def transport_resolvent(R: Observable, alpha: float, x, xi, method="closed") -> np.ndarray:
    """g solving  -alpha g + xi . grad_x g = R  with decay along the rays:

        g(x, xi) = - int_0^inf exp(-alpha s / |xi|) |xi|^-1 R(x + s xi/|xi|, xi) ds.

    At alpha = 0 this is  -int_0^inf R(x + t xi, xi) dt.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x, xi = np.broadcast_arrays(x, xi)
    nrm = np.linalg.norm(xi, axis=1)
    if np.any(nrm == 0):
        raise ValueError("transport_resolvent is undefined at xi = 0")
    if R.is_zero:
        return np.zeros(x.shape[0], dtype=complex)
    unit = xi / nrm[:, None]
    if method == "closed":
        ray = ray_integral(R.phi, x, unit, damping=alpha / nrm)
    elif method == "adaptive":
        ray = ray_integral_adaptive(R.phi, x, unit, damping=alpha / nrm)
    else:
        raise ValueError(f"unknown method {method!r}")
    return -R.psi(xi) * ray / nrm


def transport_equation_residual(R: Observable, alpha: float, x, xi, h=1e-4) -> np.ndarray:
    """|-alpha g + xi . grad_x g - R| with the x-derivative by central differences."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    g0 = transport_resolvent(R, alpha, x, xi)
    gp = transport_resolvent(R, alpha, x + h * xi, xi)
    gm = transport_resolvent(R, alpha, x - h * xi, xi)
    deriv = (gp - gm) / (2 * h)
    return np.abs(-alpha * g0 + deriv - R(x, xi))


@dataclass
class DecayReport:
    x_radii: np.ndarray
    y_radii: np.ndarray
    values: np.ndarray  # |g_hat(x, y)| on the grid
    ratio: np.ndarray  # values * <y>^M / min(<x>^M, alpha^-M)
    constant: float
    bounded: bool
    decays_in_x: bool


def resolvent_fourier(R: Observable, alpha, x, y, n=16) -> np.ndarray:
    """g_hat(x, y) = (2 pi)^-d int exp(-i y . xi) g(x, xi) d xi by Gauss-Hermite
    rules on the atoms of psi; shape (len(x), len(y))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = R.d
    t, w = roots_hermite(n)
    grids = np.meshgrid(*([t] * d), indexing="ij")
    T = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    out = np.zeros((x.shape[0], y.shape[0]), dtype=complex)
    for at in R.psi.atoms:
        sc = math.sqrt(2.0 / at.inv_variance)
        nodes = at.center + sc * T
        env = np.exp(-0.5 * at.inv_variance * np.sum((nodes - at.center) ** 2, axis=1))
        wts = W * sc**d / env
        phase = np.exp(-1j * (y @ nodes.T))  # (ny, nq)
        single = Observable(R.phi, FieldExpr((at,), d), R.name)
        for i, xi_pt in enumerate(x):
            g = transport_resolvent(single, alpha, np.broadcast_to(xi_pt, nodes.shape), nodes)
            out[i] += phase @ (wts * g)
    return out / TWO_PI**d


def resolvent_decay_check(R: Observable, alpha: float, M: int = 2, x_radii=None, y_radii=None, directions=None) -> DecayReport:
    """Sample |g_hat(x, y)| on log grids and compare with (<x>^M ^ alpha^-M) / <y>^M."""
    x_radii = np.geomspace(0.5, 64, 8) if x_radii is None else np.asarray(x_radii, float)
    y_radii = np.geomspace(0.25, 8, 6) if y_radii is None else np.asarray(y_radii, float)
    d = R.d
    if directions is None:
        directions = np.eye(d)
        directions = np.concatenate([directions, -directions])
    if R.is_zero:
        z = np.zeros((len(x_radii), len(y_radii)))
        return DecayReport(x_radii, y_radii, z, z, 0.0, True, True)
    vals = np.zeros((len(x_radii), len(y_radii)))
    for dx in directions:
        X = x_radii[:, None] * dx[None, :]
        for dy in directions:
            Y = y_radii[:, None] * dy[None, :]
            vals = np.maximum(vals, np.abs(resolvent_fourier(R, alpha, X, Y)))
    bx = np.minimum((1 + x_radii**2) ** (M / 2), alpha ** (-M) if alpha > 0 else np.inf)
    by = (1 + y_radii**2) ** (M / 2)
    ratio = vals * by[None, :] / bx[:, None]
    C = float(ratio.max())
    bounded = bool(np.isfinite(C))
    sup_x = vals.max(axis=1)
    decays = bool(np.all(np.diff(sup_x[np.argmax(sup_x):]) <= 1e-300 + 1e-12 * sup_x.max()))
    return DecayReport(x_radii, y_radii, vals, ratio, C, bounded, decays)


# --------------------------------------------------------------------------
# exact identities of the limit objects


@dataclass(frozen=True)
class RadiationReport:
    residual: float
    mu_value: complex
    q_value: complex
    orientation: int
    matches: dict  # which displayed version of the identity the ray measure satisfies


def radiation_residual(s: Scenario, R: Observable, orientation=BACKWARD, order=60) -> RadiationReport:
    """|<mu, R> - <Q, G>| with G(x, xi) = int_0^inf R(x + o t xi, xi) dt.

    The left side uses closed-form ray integrals, the right side adaptive quadrature
    along each ray.  ``matches`` compares <mu, R> against the two displayed forms
    -<Q, int_0^inf R(x - t xi) dt> and +<Q, int_0^inf R(x + t xi) dt>, and
    the orientation-consistent +<Q, int_0^inf R(x - t xi) dt>.
    """
    mu = RayMeasure.from_scenario(s, orientation, order=order)
    if R.is_zero:
        return RadiationReport(0.0, 0j, 0j, orientation, {"minus_backward": True, "plus_forward": True, "plus_backward": True})
    lhs = mu_pairing(mu, R)
    Q = mu.source

    def G(o):
        return Q.pairing_fn(lambda X, W: ray_integral_adaptive(R.phi, X, o * W) * R.psi(W))

    g_same = G(orientation)
    g_back = g_same if orientation == BACKWARD else G(BACKWARD)
    g_fwd = g_same if orientation == FORWARD else G(FORWARD)
    scale = max(abs(lhs), 1e-300)
    matches = {
        "minus_backward": bool(abs(lhs + g_back) <= 1e-6 * max(scale, 1.0)),
        "plus_forward": bool(abs(lhs - g_fwd) <= 1e-6 * max(scale, 1.0)),
        "plus_backward": bool(abs(lhs - g_back) <= 1e-6 * max(scale, 1.0)),
    }
    return RadiationReport(float(abs(lhs - g_same)), lhs, g_same, orientation, matches)


@dataclass(frozen=True)
class WeakReport:
    residual: float
    transport_value: complex
    source_value: complex
    orientation: int


def liouville_weak_residual(s: Scenario, a: Observable, orientation=BACKWARD, order=60) -> WeakReport:
    """Weak form of  xi . grad_x mu = -o Q:  | -o <mu, xi . grad_x a> - <Q, a> |.

    For backward rays this is  xi . grad mu = Q  tested as  <mu, xi.grad a> = <Q, a>.
    """
    mu = RayMeasure.from_scenario(s, orientation, order=order)
    T = mu_pairing_gradient(mu, a)
    Qv = q_pairing(mu.source, a)
    return WeakReport(float(abs(-orientation * T - Qv)), T, Qv, orientation)


def additivity_residual(s: Scenario, a: Observable, orientation=BACKWARD) -> float:
    """|<mu(S0 + S1), a> - <mu(S0), a> - <mu(S1), a>|."""
    both = mu_pairing(RayMeasure.from_scenario(s, orientation), a)
    parts = sum(mu_pairing(RayMeasure.from_scenario(s.only(j), orientation), a) for j in (0, 1))
    return float(abs(both - parts))


def flux_ratio(s: Scenario, radius: float, orientation=BACKWARD) -> float:
    """(1/R) <mu, exp(-|x|^2 / (2 R^2)) x 1>: a smoothed ball indicator in x against
    a frequency weight equal to one on the unit sphere."""
    d = s.d
    phi = FieldExpr.gaussian(d, 1.0, np.zeros(d), 1.0 / radius**2)
    psi = FieldExpr.gaussian(d, 1.0, np.zeros(d), 1e-300)
    a = Observable(phi, psi, f"ball{radius:g}")
    return float(mu_pairing(RayMeasure.from_scenario(s, orientation), a).real / radius)


def squared_observable(phi_atom_center, phi_s, psi_center, psi_s, d=3, name="sq") -> Observable:
    """A nonnegative observable |g|^2 x |h|^2 for Gaussian atoms g, h."""
    g = FieldExpr.gaussian(d, 1.0, phi_atom_center, phi_s)
    h = FieldExpr.gaussian(d, 1.0, psi_center, psi_s)
    return make_observable(g.abs2(), h.abs2(), name)
