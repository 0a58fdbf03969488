"""Closed-form Gaussian field algebra, Fourier conventions and scenarios.

Every source, test function and symbol in the package is a finite sum of
modulated, shifted Gaussians

    x -> A * exp(-s |x - m|^2 / 2) * exp(i k . x)

so Fourier transforms, shifts, dilations, products and conjugates stay exact.

Fourier convention (fixed throughout)::

    f_hat(xi) = (2 pi)^-d  int exp(-i x.xi) f(x) dx
    f(x)      =            int exp(+i x.xi) f_hat(xi) dxi

hence  int u conj(v) dx = (2 pi)^d int u_hat conj(v_hat) dxi.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi


def parseval_factor(d: int) -> float:
    """Constant c with  int u conj(v) dx = c * int u_hat conj(v_hat) dxi."""
    return TWO_PI**d


@dataclass(frozen=True)
class GaussianAtom:
    amplitude: complex
    center: np.ndarray
    inv_variance: float
    modulation: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        k = np.atleast_1d(np.asarray(self.modulation, dtype=float))
        if k.shape != c.shape:
            k = np.broadcast_to(k, c.shape).astype(float)
        if not self.inv_variance > 0:
            raise ValueError(f"inverse variance must be positive, got {self.inv_variance}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "modulation", k)
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        object.__setattr__(self, "inv_variance", float(self.inv_variance))

    @property
    def d(self) -> int:
        return self.center.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        dx = x - self.center
        e = -0.5 * self.inv_variance * np.sum(dx * dx, axis=-1) + 1j * (x @ self.modulation)
        return self.amplitude * np.exp(e)

    def fourier(self) -> "GaussianAtom":
        s, d = self.inv_variance, self.d
        amp = self.amplitude * np.exp(1j * self.modulation @ self.center) * (TWO_PI * s) ** (-d / 2)
        return GaussianAtom(amp, self.modulation.copy(), 1.0 / s, -self.center)

    def inverse_fourier(self) -> "GaussianAtom":
        s, d = self.inv_variance, self.d
        amp = self.amplitude * np.exp(1j * self.modulation @ self.center) * (TWO_PI / s) ** (d / 2)
        return GaussianAtom(amp, -self.modulation, 1.0 / s, self.center.copy())

    def conj(self) -> "GaussianAtom":
        return GaussianAtom(np.conj(self.amplitude), self.center, self.inv_variance, -self.modulation)

    def __mul__(self, other: "GaussianAtom") -> "GaussianAtom":
        s1, s2 = self.inv_variance, other.inv_variance
        s = s1 + s2
        m = (s1 * self.center + s2 * other.center) / s
        dm = self.center - other.center
        amp = self.amplitude * other.amplitude * np.exp(-0.5 * s1 * s2 / s * (dm @ dm))
        return GaussianAtom(amp, m, s, self.modulation + other.modulation)

    def integral(self) -> complex:
        s, d, k = self.inv_variance, self.d, self.modulation
        return complex(
            self.amplitude * (TWO_PI / s) ** (d / 2) * np.exp(1j * k @ self.center - 0.5 * (k @ k) / s)
        )


@dataclass(frozen=True)
class FieldExpr:
    """Finite sum of Gaussian atoms in dimension ``d``."""

    atoms: tuple = ()
    d: int = 3

    def __post_init__(self):
        atoms = tuple(self.atoms)
        for a in atoms:
            if a.d != self.d:
                raise ValueError(f"atom dimension {a.d} != field dimension {self.d}")
        object.__setattr__(self, "atoms", atoms)

    # construction helpers -------------------------------------------------
    @classmethod
    def gaussian(cls, d=3, amplitude=1.0, center=None, inv_variance=1.0, modulation=None):
        center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        modulation = np.zeros(d) if modulation is None else np.asarray(modulation, dtype=float)
        return cls((GaussianAtom(amplitude, center, inv_variance, modulation),), d)

    @classmethod
    def zero(cls, d=3):
        return cls((), d)

    @property
    def is_zero(self) -> bool:
        return all(a.amplitude == 0 for a in self.atoms)

    # packed arrays for vectorised evaluation
    def _packed(self):
        if not self.atoms:
            return (np.zeros(0, complex), np.zeros((0, self.d)), np.zeros(0), np.zeros((0, self.d)))
        return (
            np.array([a.amplitude for a in self.atoms]),
            np.array([a.center for a in self.atoms]),
            np.array([a.inv_variance for a in self.atoms]),
            np.array([a.modulation for a in self.atoms]),
        )

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for a in self.atoms:
            out += a(x)
        return out

    def grad(self, x):
        """Pointwise gradient, shape ``x.shape``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=complex)
        for a in self.atoms:
            fac = -a.inv_variance * (x - a.center) + 1j * a.modulation
            out += fac * a(x)[..., None]
        return out

    # algebra --------------------------------------------------------------
    def __add__(self, other: "FieldExpr") -> "FieldExpr":
        _check_dim(self, other)
        return FieldExpr(self.atoms + other.atoms, self.d)

    def __sub__(self, other: "FieldExpr") -> "FieldExpr":
        return self + other.scale(-1.0)

    def __mul__(self, other):
        if isinstance(other, FieldExpr):
            _check_dim(self, other)
            return FieldExpr(tuple(a * b for a in self.atoms for b in other.atoms), self.d)
        return self.scale(other)

    __rmul__ = __mul__

    def scale(self, c) -> "FieldExpr":
        return FieldExpr(
            tuple(GaussianAtom(c * a.amplitude, a.center, a.inv_variance, a.modulation) for a in self.atoms),
            self.d,
        )

    def conj(self) -> "FieldExpr":
        return FieldExpr(tuple(a.conj() for a in self.atoms), self.d)

    def shift(self, m) -> "FieldExpr":
        """x -> f(x - m)."""
        m = np.asarray(m, dtype=float)
        return FieldExpr(
            tuple(
                GaussianAtom(a.amplitude * np.exp(-1j * a.modulation @ m), a.center + m, a.inv_variance, a.modulation)
                for a in self.atoms
            ),
            self.d,
        )

    def modulate(self, k) -> "FieldExpr":
        """x -> exp(i k.x) f(x)."""
        k = np.asarray(k, dtype=float)
        return FieldExpr(
            tuple(GaussianAtom(a.amplitude, a.center, a.inv_variance, a.modulation + k) for a in self.atoms),
            self.d,
        )

    def dilate(self, lam: float) -> "FieldExpr":
        """x -> f(lam * x)."""
        return FieldExpr(
            tuple(
                GaussianAtom(a.amplitude, a.center / lam, a.inv_variance * lam**2, a.modulation * lam)
                for a in self.atoms
            ),
            self.d,
        )

    def reflect(self) -> "FieldExpr":
        return self.dilate(-1.0) if self.atoms else self

    def fourier(self) -> "FieldExpr":
        return FieldExpr(tuple(a.fourier() for a in self.atoms), self.d)

    def inverse_fourier(self) -> "FieldExpr":
        return FieldExpr(tuple(a.inverse_fourier() for a in self.atoms), self.d)

    def integral(self) -> complex:
        return complex(sum(a.integral() for a in self.atoms))

    def abs2(self) -> "FieldExpr":
        return self * self.conj()

    def sup_abs_bound(self) -> float:
        return float(sum(abs(a.amplitude) for a in self.atoms))

    def envelope(self, r):
        """Upper bound of |f(x)| over the sphere |x| = r."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for a in self.atoms:
            gap = np.maximum(r - np.linalg.norm(a.center), 0.0)
            out += abs(a.amplitude) * np.exp(-0.5 * a.inv_variance * gap**2)
        return out

    def radius_bound(self, tail=40.0) -> float:
        """Radius beyond which every atom is below exp(-tail) of its peak."""
        if not self.atoms:
            return 1.0
        return max(np.linalg.norm(a.center) + math.sqrt(2 * tail / a.inv_variance) for a in self.atoms)

    def max_frequency(self) -> float:
        """Largest phase rate |k| + s|m| seen on spheres (drives panel widths)."""
        if not self.atoms:
            return 0.0
        return max(np.linalg.norm(a.modulation) + a.inv_variance * np.linalg.norm(a.center) for a in self.atoms)

    # sphere averages --------------------------------------------------------
    def sphere_integral(self, r, y=None):
        """Exact  int_{S^{d-1}} f(r w) exp(i r y.w) dsigma(w).

        ``r`` may be complex (the result is entire in r).  ``y`` is ``None`` or
        an array of shape (npts, d); the result has shape (nr,) or (npts, nr).
        """
        r = np.atleast_1d(np.asarray(r))
        amp, m, s, k = self._packed()
        if y is None:
            shape = (r.shape[0],)
            kk = k[:, None, :]
        else:
            y = np.atleast_2d(np.asarray(y, dtype=float))
            shape = (y.shape[0], r.shape[0])
            kk = k[:, None, :] + y[None, :, :]
        out = np.zeros(shape, dtype=complex)
        for i in range(amp.shape[0]):
            b = s[i] * m[i] + 1j * kk[i]  # (1 or npts, d)
            root = np.sqrt(np.sum(b * b, axis=-1).astype(complex))  # principal: Re >= 0
            z = root[:, None] * r[None, :]
            energy = 0.5 * s[i] * (r[None, :] ** 2 + m[i] @ m[i])
            out += (amp[i] * _sphere_kernel(z, energy, self.d)).reshape(shape)
        return out


def _sphere_kernel(z, energy, d):
    """int_{S^{d-1}} exp(b.w) dsigma * exp(-energy), with z = sqrt(b.b)."""
    if d == 3:
        small = np.abs(z) < 1e-3
        zs = np.where(small, 1.0, z)
        big = (np.exp(zs - energy) - np.exp(-zs - energy)) / (2 * zs)
        ser = np.exp(-energy) * (1 + z**2 / 6 + z**4 / 120)
        return 4 * np.pi * np.where(small, ser, big)
    if d == 2:
        from scipy.special import ive

        sgn = np.where(z.real >= 0, 1.0, -1.0)
        zz = z * sgn
        return TWO_PI * ive(0, zz) * np.exp(zz.real - energy)
    if d == 1:
        return np.exp(z - energy) + np.exp(-z - energy)
    raise ValueError(f"unsupported dimension {d}")


def _check_dim(a: FieldExpr, b: FieldExpr):
    if a.d != b.d:
        raise ValueError(f"dimension mismatch {a.d} vs {b.d}")


def fourier_transform(f: FieldExpr) -> FieldExpr:
    return f.fourier()


def scale_concentrate(f: FieldExpr, eps: float, q=None) -> FieldExpr:
    """x -> eps^-d f((x - q)/eps); its transform is exp(-i q.xi) f_hat(eps xi)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    q = np.zeros(f.d) if q is None else np.asarray(q, dtype=float)
    atoms = []
    for a in f.atoms:
        amp = a.amplitude * eps ** (-f.d) * np.exp(-1j * a.modulation @ q / eps)
        atoms.append(GaussianAtom(amp, q + eps * a.center, a.inv_variance / eps**2, a.modulation / eps))
    return FieldExpr(tuple(atoms), f.d)


# --------------------------------------------------------------------------
# scenarios


@dataclass
class ValidationReport:
    ok: bool
    threshold: float
    violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    d: int
    epsilons: tuple
    gamma: float
    q1: np.ndarray
    S0: FieldExpr
    S1: FieldExpr
    N: float
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "q1", np.asarray(self.q1, dtype=float))

    def alpha(self, eps: float) -> float:
        return eps**self.gamma

    def eta(self, eps: float) -> float:
        """Damping eps * alpha_eps of the rescaled equations."""
        return eps * self.alpha(eps)

    @property
    def h3_threshold(self) -> float:
        return 0.5 + 3 * self.gamma / (self.gamma + 1)

    def with_sources(self, S0=None, S1=None, name=None) -> "Scenario":
        return Scenario(
            self.d,
            self.epsilons,
            self.gamma,
            self.q1,
            self.S0 if S0 is None else S0,
            self.S1 if S1 is None else S1,
            self.N,
            self.name if name is None else name,
        )

    def only(self, which: int) -> "Scenario":
        """Single-source scenario keeping source ``which`` (0 or 1)."""
        z = FieldExpr.zero(self.d)
        if which == 0:
            return self.with_sources(S1=z, name=f"{self.name}[S0]")
        return self.with_sources(S0=z, name=f"{self.name}[S1]")

    def content_key(self) -> str:
        return json.dumps(scenario_to_dict(self), sort_keys=True)


def validate(s: Scenario) -> ValidationReport:
    violations = []
    thr = 0.5 + 3 * s.gamma / (s.gamma + 1) if s.gamma > -1 else float("nan")
    if not s.gamma > 0:
        violations.append(("damping", f"gamma must be positive, got {s.gamma}"))
    eps = np.asarray(s.epsilons, dtype=float)
    if eps.size and (np.any(eps <= 0) or np.any(np.diff(eps) >= 0)):
        violations.append(("grid", "epsilons must be positive and strictly decreasing"))
    if not s.N > thr:
        violations.append(("weight", f"N={s.N} must exceed 1/2 + 3 gamma/(gamma+1) = {thr:.6g}"))
    if s.q1.shape != (s.d,) or not np.any(s.q1 != 0):
        violations.append(("geometry", "q1 must be a point of R^d different from the origin"))
    for name, src in (("S0", s.S0), ("S1", s.S1)):
        if src.d != s.d:
            violations.append(("geometry", f"{name} has dimension {src.d}, scenario has {s.d}"))
    return ValidationReport(not violations, thr, violations)


def reference_scenario() -> Scenario:
    """d=3, q1=(2,0,0), gamma=1, N=2.1, unit Gaussian profiles, eps-grid 0.4..0.025."""
    g = FieldExpr.gaussian(3)
    return Scenario(3, (0.4, 0.2, 0.1, 0.05, 0.025), 1.0, np.array([2.0, 0.0, 0.0]), g, g, 2.1, "reference")


# --------------------------------------------------------------------------
# serialisation

_ATOM_KEYS = ("amplitude_re", "amplitude_im", "center", "inv_variance", "modulation")


def field_to_list(f: FieldExpr) -> list:
    return [
        {
            "amplitude_re": float(np.real(a.amplitude)),
            "amplitude_im": float(np.imag(a.amplitude)),
            "center": [float(v) for v in a.center],
            "inv_variance": float(a.inv_variance),
            "modulation": [float(v) for v in a.modulation],
        }
        for a in f.atoms
    ]


def field_from_list(items: Iterable[dict], d: int) -> FieldExpr:
    atoms = []
    for it in items:
        missing = [k for k in _ATOM_KEYS if k not in it]
        if missing:
            raise ScenarioError(f"atom is missing keys {missing}")
        atoms.append(
            GaussianAtom(
                complex(it["amplitude_re"], it["amplitude_im"]),
                np.asarray(it["center"], dtype=float),
                float(it["inv_variance"]),
                np.asarray(it["modulation"], dtype=float),
            )
        )
    return FieldExpr(tuple(atoms), d)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "d": s.d,
        "epsilons": list(s.epsilons),
        "gamma": s.gamma,
        "q1": [float(v) for v in s.q1],
        "N": s.N,
        "S0": field_to_list(s.S0),
        "S1": field_to_list(s.S1),
    }


def scenario_from_dict(cfg: dict) -> Scenario:
    try:
        d = int(cfg["d"])
        return Scenario(
            d,
            tuple(cfg["epsilons"]),
            float(cfg["gamma"]),
            np.asarray(cfg["q1"], dtype=float),
            field_from_list(cfg["S0"], d),
            field_from_list(cfg["S1"], d),
            float(cfg["N"]),
            cfg.get("name", "scenario"),
        )
    except KeyError as exc:
        raise ScenarioError(f"missing config key {exc}") from None


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        cfg = json.load(fh)
    return scenario_from_dict(cfg.get("scenario", cfg))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


def as_points(x: Sequence | np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, d) if x.shape[0] == d else x[:, None]
    return x
