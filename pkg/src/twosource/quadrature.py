"""Integration engines: sphere rules, Lorentzian-clustered radial grids,
adaptive Gauss-Kronrod in 1D and seeded Monte Carlo."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre, sph_harm_y


class QuadratureError(RuntimeError):
    """Raised when an engine cannot reach its tolerance; carries the partial estimate."""

    def __init__(self, msg, value=None, error=None):
        super().__init__(msg)
        self.value = value
        self.error = error


def sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


# --------------------------------------------------------------------------
# sphere rules


@dataclass(frozen=True)
class SphereRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def d(self):
        return self.nodes.shape[1]

    def integrate(self, values):
        """Apply the rule along the last axis."""
        return np.asarray(values) @ self.weights


def _real_harmonics(order, theta, phi):
    cols = []
    for l in range(order + 1):
        cols.append(sph_harm_y(l, 0, theta, phi).real)
        for m in range(1, l + 1):
            y = sph_harm_y(l, m, theta, phi)
            cols.append(math.sqrt(2) * y.real)
            cols.append(math.sqrt(2) * y.imag)
    return np.array(cols)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (3 - math.sqrt(5)) * i
    rho = np.sqrt(1 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


@lru_cache(maxsize=64)
def sphere_rule(d: int, order: int, kind: str = "fibonacci") -> SphereRule:
    """Rule on S^{d-1} exact for polynomials of degree <= order.

    ``kind='fibonacci'`` uses a spiral node set whose equal weights are
    corrected (minimum-norm) to integrate real spherical harmonics exactly;
    ``kind='product'`` uses Gauss-Legendre in cos(theta) times a uniform
    azimuthal rule, cheap at high orders.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if d == 2:
        n = order + 2
        t = 2 * math.pi * (np.arange(n) + 0.5) / n
        nodes = np.stack([np.cos(t), np.sin(t)], axis=1)
        return SphereRule(nodes, np.full(n, 2 * math.pi / n), order)
    if d != 3:
        raise ValueError(f"sphere rules are available for d in {{2, 3}}, got {d}")
    if kind == "product":
        nt = order // 2 + 1
        nphi = order + 2
        ct, wt = roots_legendre(nt)
        ph = 2 * math.pi * (np.arange(nphi) + 0.5) / nphi
        st = np.sqrt(1 - ct**2)
        nodes = np.stack(
            [
                (st[:, None] * np.cos(ph)[None, :]).ravel(),
                (st[:, None] * np.sin(ph)[None, :]).ravel(),
                np.repeat(ct, nphi),
            ],
            axis=1,
        )
        weights = np.repeat(wt, nphi) * (2 * math.pi / nphi)
        return SphereRule(nodes, weights, order)
    if kind != "fibonacci":
        raise ValueError(f"unknown sphere rule kind {kind!r}")
    n = max(2 * (order + 1) ** 2, 12)
    for _ in range(8):
        nodes = fibonacci_sphere(n)
        theta = np.arccos(np.clip(nodes[:, 2], -1, 1))
        phi = np.arctan2(nodes[:, 1], nodes[:, 0])
        A = _real_harmonics(order, theta, phi)
        b = np.zeros(A.shape[0])
        b[0] = math.sqrt(4 * math.pi)
        w0 = np.full(n, 4 * math.pi / n)
        corr, *_ = np.linalg.lstsq(A, b - A @ w0, rcond=None)
        w = w0 + corr
        if np.all(w > 0) and np.max(np.abs(A @ w - b)) < 1e-12:
            return SphereRule(nodes, w, order)
        n = int(n * 1.5)
    raise QuadratureError(f"could not build a positive rule of order {order}")


# --------------------------------------------------------------------------
# Gauss-Legendre helpers


@lru_cache(maxsize=128)
def gauss_legendre(n: int):
    x, w = roots_legendre(n)
    return x, w


def gl_panels(edges, n: int):
    """Composite Gauss-Legendre nodes/weights on consecutive panels."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(n)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def graded_edges(a: float, b: float, start: float, ratio: float = 2.0, max_width=None):
    """Panel edges from ``a`` to ``b`` growing geometrically from width ``start``."""
    edges = [a]
    h = start
    while edges[-1] < b:
        if max_width is not None:
            h = min(h, max_width)
        edges.append(min(edges[-1] + h, b))
        h *= ratio
    return np.array(edges)


# --------------------------------------------------------------------------
# radial grids


@dataclass(frozen=True)
class RadialGrid:
    nodes: np.ndarray
    weights: np.ndarray
    c: float
    w: float
    r_max: float

    def integrate(self, values):
        return np.asarray(values) @ self.weights


def radial_lorentzian_grid(c: float, w: float, r_max: float, n: int, core: float = 4.0) -> RadialGrid:
    """Grid on (0, r_max) resolving a Lorentzian of width ``w`` at ``c``.

    The core |r - c| < core*w is mapped by r = c + w tan(theta), which turns the
    Lorentzian into a constant; outside it, panels grow geometrically (ratio 2,
    width capped at 1) towards 0 and r_max, ``n`` Gauss-Legendre nodes each.
    """
    if not (0 < w < c < r_max):
        raise ValueError(f"need 0 < w < c < r_max, got w={w}, c={c}, r_max={r_max}")
    a = min(core * w, 0.5 * c, 0.5 * (r_max - c))
    th = math.atan(a / w)
    tn, tw = gl_panels(np.linspace(-th, th, 3), n)
    rn = c + w * np.tan(tn)
    rw = tw * w / np.cos(tn) ** 2
    left = (c - a) - graded_edges(0.0, c - a, a, max_width=1.0)
    right = (c + a) + graded_edges(0.0, r_max - c - a, a, max_width=1.0)
    ln, lw = gl_panels(left[::-1], n)
    bn, bw = gl_panels(right, n)
    nodes = np.concatenate([ln, rn, bn])
    weights = np.concatenate([lw, rw, bw])
    return RadialGrid(nodes, weights, c, w, r_max)


# --------------------------------------------------------------------------
# adaptive Gauss-Kronrod

_XGK = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
)
_WGK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)
_WG = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
)
_X15 = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_W15 = np.concatenate([_WGK[:-1], _WGK[::-1]])
_W7 = np.zeros(15)
_W7[1:7:2] = _WG[:3]
_W7[7] = _WG[3]
_W7[8:15] = _W7[6::-1][:7]


@dataclass(frozen=True)
class Quad1D:
    value: complex
    error: float
    n_eval: int


def _gk15(f, a, b):
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    y = np.asarray(f(c + h * _X15), dtype=complex)
    k = h * (y @ _W15)
    g = h * (y @ _W7)
    return k, abs(k - g)


def adaptive_1d(f, a: float, b: float, tol: float = 1e-10, max_subdiv: int = 4000, rel: float = 0.0) -> Quad1D:
    """Globally adaptive Gauss-Kronrod (7/15) for vectorised, possibly complex ``f``.

    Stops when the summed local error estimate is below max(tol, rel*|I|).
    Raises QuadratureError with the partial estimate after ``max_subdiv``
    subdivisions.
    """
    if a == b:
        return Quad1D(0j, 0.0, 0)
    v, e = _gk15(f, a, b)
    heap = [(-e, a, b, v)]
    total_v, total_e, nev = v, e, 15
    for _ in range(max_subdiv):
        if total_e <= max(tol, rel * abs(total_v)):
            return Quad1D(complex(total_v), float(total_e), nev)
        ne, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        v1, e1 = _gk15(f, lo, mid)
        v2, e2 = _gk15(f, mid, hi)
        nev += 30
        total_v += v1 + v2 - val
        total_e += e1 + e2 + ne
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
        if len(heap) % 64 == 0:
            total_v = sum(t[3] for t in heap)
            total_e = sum(-t[0] for t in heap)
    total_v = sum(t[3] for t in heap)
    total_e = sum(-t[0] for t in heap)
    if total_e <= max(tol, rel * abs(total_v)):
        return Quad1D(complex(total_v), float(total_e), nev)
    raise QuadratureError(
        f"adaptive_1d did not converge after {max_subdiv} subdivisions (error {total_e:.3g})",
        complex(total_v),
        float(total_e),
    )


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McEstimate:
    value: complex
    stderr: float
    n_samples: int
    seed: int
    n_nan: int = 0


class GaussianMixtureSampler:
    """Mixture of isotropic Gaussians in R^k: weights, means (m, k), std devs (m,)."""

    def __init__(self, means, sigmas, weights=None):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (self.means.shape[0],)).copy()
        w = np.ones(self.means.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        self.weights = w / w.sum()
        self.k = self.means.shape[1]

    def sample(self, rng, n):
        comp = rng.choice(self.means.shape[0], size=n, p=self.weights)
        z = rng.standard_normal((n, self.k))
        x = self.means[comp] + self.sigmas[comp, None] * z
        return x, self.density(x)

    def density(self, x):
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0])
        for w, m, s in zip(self.weights, self.means, self.sigmas):
            r2 = np.sum((x - m) ** 2, axis=1)
            out += w * np.exp(-0.5 * r2 / s**2) / (2 * math.pi * s**2) ** (self.k / 2)
        return out


class RadialCauchySampler:
    """Isotropic density in R^3 whose radius follows a Cauchy law at ``c`` with width ``w``,
    truncated to (0, r_max), mixed with a Gaussian background of weight ``background``."""

    def __init__(self, c, w, r_max, background=0.2, sigma=1.0):
        self.c, self.w, self.r_max = float(c), float(w), float(r_max)
        self.bg = float(background)
        self.sigma = float(sigma)
        self.lo = math.atan(-self.c / self.w)
        self.hi = math.atan((self.r_max - self.c) / self.w)

    def _radial_pdf(self, r):
        inside = (r > 0) & (r < self.r_max)
        return np.where(inside, self.w / ((r - self.c) ** 2 + self.w**2) / (self.hi - self.lo), 0.0)

    def sample(self, rng, n):
        nb = rng.random(n) < self.bg
        u = rng.random(n)
        r = self.c + self.w * np.tan(self.lo + u * (self.hi - self.lo))
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        x = r[:, None] * v
        g = self.sigma * rng.standard_normal((n, 3))
        x = np.where(nb[:, None], g, x)
        return x, self.density(x)

    def density(self, x):
        r = np.linalg.norm(x, axis=-1)
        shell = self._radial_pdf(r) / (4 * math.pi * np.maximum(r, 1e-300) ** 2)
        gauss = np.exp(-0.5 * r**2 / self.sigma**2) / (2 * math.pi * self.sigma**2) ** 1.5
        return (1 - self.bg) * shell + self.bg * gauss


class ProductSampler:
    """Independent blocks concatenated along the last axis."""

    def __init__(self, *parts):
        self.parts = parts

    def sample(self, rng, n):
        xs, ds = zip(*(p.sample(rng, n) for p in self.parts))
        return np.concatenate(xs, axis=1), np.prod(ds, axis=0)


def mc_integrate(f, sampler, n: int, seed: int, batch: int = 65536) -> McEstimate:
    """Importance-sampled estimate of int f with a fixed batch/seed layout.

    Batch ``i`` draws from ``default_rng([seed, i])`` so results do not depend
    on how the batches are scheduled.
    """
    sums, sq = [], []
    nan_count = 0
    done, i = 0, 0
    while done < n:
        m = min(batch, n - done)
        rng = np.random.default_rng([seed, i])
        x, dens = sampler.sample(rng, m)
        val = np.asarray(f(x), dtype=complex) / dens
        bad = ~np.isfinite(val)
        if bad.any():
            nan_count += int(bad.sum())
            val = np.where(bad, 0.0, val)
        sums.append(np.sum(val))
        sq.append(np.sum(np.abs(val) ** 2))
        done += m
        i += 1
    if n == 0:
        return McEstimate(0j, 0.0, 0, seed, 0)
    mean = np.sum(np.array(sums)) / n
    second = np.sum(np.array(sq)) / n
    var = max(second - abs(mean) ** 2, 0.0) * n / max(n - 1, 1)
    return McEstimate(complex(mean), float(math.sqrt(var / n)), n, seed, nan_count)
