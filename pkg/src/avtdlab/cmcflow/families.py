"""Closed-form homogeneous CMC families, expressed in Hubble time."""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicSpline

from .flow import Block, CmcTrajectory, MultiWarpedFlow, block_arrays


class DomainError(ValueError):
    """Requested time lies outside a family's domain."""


class Family:
    """A flow given as a function of Hubble time on ``(t_min, t_max]``.

    Subclasses implement :meth:`_fields`, returning ``a``, ``kappa`` and the
    lapse as arrays of shape ``(len(t), blocks)``, ``(.., blocks)``, ``(len(t),)``.
    """

    name = "family"
    blocks: tuple = ()
    t_min: float = 0.0
    t_max: float = math.inf

    def _fields(self, t: np.ndarray):
        raise NotImplementedError

    def fields(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t <= self.t_min) or np.any(t > self.t_max * (1 + 1e-12)):
            raise DomainError(f"{self.name}: times outside ({self.t_min:g}, {self.t_max:g}]")
        return self._fields(t)

    @property
    def n(self) -> int:
        return int(sum(b.n for b in self.blocks))

    def state(self, t: float) -> MultiWarpedFlow:
        a, kappa, _ = self.fields(t)
        return MultiWarpedFlow(self.blocks, a[0], kappa[0], float(t))

    def lapse(self, t) -> np.ndarray:
        return self.fields(t)[2]

    def sample(self, t) -> CmcTrajectory:
        t = np.asarray(t, dtype=float)
        a, kappa, L = self.fields(t)
        return CmcTrajectory(self.blocks, t, a, kappa, L)

    def dvol0_closed_form(self) -> float | None:
        """``lim (-H) vol`` when known in closed form, else None."""
        return None

    def has_nonpositive_curvature(self) -> bool:
        return all(b.eps <= 0 or b.n == 1 for b in self.blocks)

    def rescaled(self, s: float) -> "Family":
        return RescaledFamily(self, s)


class ConeFamily(Family):
    """Lorentzian cone ``-dt^2 + t^2 g`` over a unit-hyperbolic Einstein block."""

    def __init__(self, n: int = 3, vol0: float = 1.0):
        if n < 1:
            raise ValueError("dimension must be >= 1")
        self.name = "cone"
        self.blocks = (Block(n, -1 if n > 1 else 0, vol0),)

    def _fields(self, t):
        a = t[:, None].copy()
        kappa = -1.0 / t[:, None]
        return a, kappa, np.ones_like(t)

    def dvol0_closed_form(self):
        n = self.n
        return float(self.blocks[0].vol0) if n == 1 else 0.0


class ConeTorusFamily(Family):
    """Cone over an ``m``-dimensional hyperbolic block times a flat ``n'``-torus.

    In cone time ``t_c`` the scales are ``(t_c, 1)``; Hubble time is
    ``t = n t_c / m`` and the lapse is ``m/n``.
    """

    def __init__(self, m: int = 2, n_flat: int = 1, vol0_cone: float = 1.0,
                 vol0_flat: float = 1.0):
        if m < 1 or n_flat < 1:
            raise ValueError("block dimensions must be >= 1")
        self.name = "cone_torus"
        self.m, self.n_flat = m, n_flat
        self.blocks = (Block(m, -1 if m > 1 else 0, vol0_cone), Block(n_flat, 0, vol0_flat))

    def _fields(self, t):
        n, m = self.n, self.m
        tc = m * t / n
        a = np.stack([tc, np.ones_like(t)], axis=1)
        kappa = np.stack([-1.0 / tc, np.zeros_like(t)], axis=1)
        return a, kappa, np.full_like(t, m / n)

    def dvol0_closed_form(self):
        vol0 = float(np.prod([b.vol0 for b in self.blocks]))
        # (n/t) (m t/n)^m vol0
        return 0.0 if self.m >= 2 else vol0


class KasnerFamily(Family):
    """Flat Kasner ``a_i = c_i t^{p_i}`` with lapse ``1/n`` (diagonal exponent matrix).

    Blocks are flat tori of dimension ``dims[i]`` sharing exponent ``p[i]``;
    the exponents satisfy ``sum n_i p_i = sum n_i p_i^2 = 1``.
    """

    def __init__(self, p, dims=None, scales=None, vol0=None, tol: float = 1e-10):
        p = np.asarray(p, dtype=float)
        dims = np.ones(len(p), dtype=int) if dims is None else np.asarray(dims, dtype=int)
        if dims.shape != p.shape:
            raise ValueError("one dimension per exponent")
        s1, s2 = float(np.dot(dims, p)), float(np.dot(dims, p ** 2))
        if abs(s1 - 1) > tol or abs(s2 - 1) > tol:
            raise ValueError(f"Kasner exponents need Tr M = Tr M^2 = 1, got {s1:.12g}, {s2:.12g}")
        self.name = "kasner"
        self.p = p
        self.c = np.ones(len(p)) if scales is None else np.asarray(scales, dtype=float)
        vol0 = [1.0] * len(p) if vol0 is None else vol0
        self.blocks = tuple(Block(int(d), 0, float(v)) for d, v in zip(dims, vol0))

    def _fields(self, t):
        n = self.n
        a = self.c * t[:, None] ** self.p
        kappa = -n * self.p / t[:, None]
        return a, kappa, np.full_like(t, 1.0 / n)

    def dvol0_closed_form(self):
        dims, _, vol0 = block_arrays(self.blocks)
        return float(self.n * np.prod(self.c ** dims) * vol0)


class KantowskiSachsFamily(Family):
    """Schwarzschild interior ``S^1 x S^2`` in Hubble time.

    In the areal coordinate ``t_c in (0, 2m)`` the scales are
    ``a_1 = sqrt(2m/t_c - 1)`` (circle) and ``a_2 = t_c`` (unit sphere) with
    lapse ``(2m/t_c - 1)^{-1/2}``; ``H < 0`` on ``(0, 3m/2)`` and the Hubble
    time ``-3/H`` is inverted by monotone bisection.
    """

    def __init__(self, mass: float = 1.0, vol0_circle: float = 1.0,
                 vol0_sphere: float = 4 * math.pi):
        if not mass > 0:
            raise ValueError("mass must be positive")
        self.name = "kantowski_sachs"
        self.m = float(mass)
        self.blocks = (Block(1, 0, vol0_circle), Block(2, 1, vol0_sphere))

    def mean_curvature_coord(self, tc):
        tc = np.asarray(tc, dtype=float)
        a1 = np.sqrt(2 * self.m / tc - 1)
        return (2 * tc - 3 * self.m) / (tc ** 2 * a1)

    def coordinate_time(self, t) -> np.ndarray:
        """Areal time ``t_c`` with ``-3/H(t_c) = t`` (bisection in ``ln t_c``)."""
        t = np.asarray(t, dtype=float)
        lo = np.full_like(t, -300.0)
        hi = np.full_like(t, math.log(1.5 * self.m))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            th = -3.0 / self.mean_curvature_coord(np.exp(mid))
            below = th < t
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(np.abs(hi), 1.0)):
                break
        return np.exp(0.5 * (lo + hi))

    def _fields(self, t):
        m = self.m
        tc = self.coordinate_time(t)
        a1 = np.sqrt(2 * m / tc - 1)
        a = np.stack([a1, tc], axis=1)
        kappa = np.stack([m / (tc ** 2 * a1), -a1 / tc], axis=1)
        # L = N dt_c/dt with d ln t / d t_c = -d ln(-H)/d t_c
        dlnH = -2.0 / (3 * m - 2 * tc) - 2.0 / tc + m / (tc * (2 * m - tc))
        L = (1.0 / a1) / (t * -dlnH)
        return a, kappa, L

    def has_nonpositive_curvature(self):
        return False


class RescaledFamily(Family):
    """``E_s(u) = E(s u)`` with scales ``a/s`` and curvatures ``s kappa``.

    Nested rescalings collapse into one factor, so composing is exact.
    """

    def __init__(self, base: Family, s: float):
        if not s > 0:
            raise ValueError("rescaling factor must be positive")
        if isinstance(base, RescaledFamily):
            s = base.s * s
            base = base.base
        self.base, self.s = base, float(s)
        self.name = f"{base.name}@{s:g}"
        self.blocks = base.blocks
        self.t_min = base.t_min / s
        self.t_max = base.t_max / s

    def _fields(self, u):
        a, kappa, L = self.base._fields(self.s * u)
        return a / self.s, kappa * self.s, L

    def dvol0_closed_form(self):
        v = self.base.dvol0_closed_form()
        if v is None:
            return None
        # (-H) vol picks up s * s^{-n}
        return v * self.s ** (1 - self.n)

    def has_nonpositive_curvature(self):
        return self.base.has_nonpositive_curvature()


class TrajectoryFamily(Family):
    """Cubic-spline interpolation of an evolved trajectory in ``ln t``."""

    def __init__(self, traj: CmcTrajectory):
        order = np.argsort(traj.t)
        t = traj.t[order]
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be distinct")
        self.name = "trajectory"
        self.blocks = traj.blocks
        self.t_min = float(t[0]) * (1 - 1e-12)
        self.t_max = float(t[-1])
        x = np.log(t)
        self._lna = CubicSpline(x, np.log(traj.a[order]), axis=0)
        self._tk = CubicSpline(x, traj.kappa[order] * t[:, None], axis=0)
        self._L = CubicSpline(x, traj.lapse[order])
        self._closed = None

    def fields(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t_min) or np.any(t > self.t_max * (1 + 1e-12)):
            raise DomainError(f"trajectory: times outside [{self.t_min:g}, {self.t_max:g}]")
        return self._fields(t)

    def _fields(self, t):
        x = np.log(t)
        return np.exp(self._lna(x)), self._tk(x) / t[:, None], self._L(x)

    def has_nonpositive_curvature(self):
        return all(b.eps <= 0 or b.n == 1 for b in self.blocks)


def make_family(kind: str, **params) -> Family:
    """Closed-form family by name: cone, cone_torus, kantowski_sachs, kasner.

    ``kasner`` with a non-diagonal ``M`` returns a matrix family (see
    :func:`avtdlab.cmcflow.matrix.kasner_matrix_family`).
    """
    if kind == "cone":
        return ConeFamily(**params)
    if kind == "cone_torus":
        return ConeTorusFamily(**params)
    if kind == "kantowski_sachs":
        return KantowskiSachsFamily(**params)
    if kind == "kasner":
        if "M" in params:
            from .matrix import kasner_matrix_family
            M = np.asarray(params["M"], dtype=float)
            if np.allclose(M, np.diag(np.diag(M)), atol=0.0) and "hhat" not in params:
                rest = {k: v for k, v in params.items() if k != "M"}
                return KasnerFamily(np.diag(M), **rest)
            return kasner_matrix_family(M, params.get("hhat"))
        return KasnerFamily(**params)
    raise ValueError(f"unknown family kind {kind!r}")
