"""Periodic grids on the circle, quadrature, and discrete H^-1 dual norms.

Fields are numpy arrays whose leading axis runs over the grid points; any
trailing axes (e.g. ``N x N`` matrix entries) are carried along.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import logging

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy.integrate import cumulative_trapezoid

from .certificate import Certificate
from . import symmat

log = logging.getLogger(__name__)

SCHEMES = ("spectral", "fd4")


class ConvergenceError(RuntimeError):
    """An iterative solve stopped short of its residual target."""


@dataclass(frozen=True)
class CircleGrid:
    """``n`` equally spaced nodes on ``[0, length)``."""

    n: int
    length: float = 2 * np.pi
    scheme: str = "spectral"

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"circumference must be positive, got {self.length}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown derivative scheme {self.scheme!r}")

    @property
    def dy(self) -> float:
        return self.length / self.n

    @cached_property
    def points(self) -> np.ndarray:
        return np.arange(self.n) * self.dy

    @cached_property
    def _ik(self) -> np.ndarray:
        k = 2 * np.pi * np.fft.rfftfreq(self.n, d=self.dy)
        k[-1] = 0.0  # Nyquist mode has no odd derivative
        return 1j * k

    def _check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.n:
            raise ValueError(f"field has {f.shape[0]} points, grid has {self.n}")
        return f

    def derivative(self, f: np.ndarray) -> np.ndarray:
        """d/dy along the leading axis."""
        f = self._check(f)
        if self.scheme == "spectral":
            fh = np.fft.rfft(f, axis=0)
            fh *= self._ik.reshape((-1,) + (1,) * (f.ndim - 1))
            return np.fft.irfft(fh, n=self.n, axis=0)
        return (8.0 * (np.roll(f, -1, 0) - np.roll(f, 1, 0))
                - (np.roll(f, -2, 0) - np.roll(f, 2, 0))) / (12.0 * self.dy)

    @cached_property
    def derivative_matrix(self) -> np.ndarray:
        """Dense n x n matrix of :meth:`derivative` (skew-symmetric)."""
        return self.derivative(np.eye(self.n))

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Trapezoid rule over the full period (spectrally accurate)."""
        return self._check(f).sum(axis=0) * self.dy

    def refine(self, factor: int = 2) -> "CircleGrid":
        return CircleGrid(self.n * factor, self.length, self.scheme)


def periodic_derivative(f: np.ndarray, grid: CircleGrid) -> np.ndarray:
    return grid.derivative(f)


def _density_weights(mu, grid: CircleGrid) -> np.ndarray:
    w = np.broadcast_to(np.asarray(mu, dtype=float), (grid.n,)).copy()
    if not np.all(w > 0):
        raise ValueError("density must be strictly positive")
    return w


@dataclass
class HMinusResult:
    norm: float
    l2_norm: float
    kernel_component: float
    iterations: int
    residual: float


def hminus_norm_matrix(eta, G, mu, grid: CircleGrid, *, rtol: float = 1e-12,
                       maxiter: int | None = None, return_info: bool = False):
    """Dual norm of a G-self-adjoint section against the mu-weighted H^1 form.

    The test space is parametrized as ``eta_hat = G^-1 S`` with ``S``
    symmetric, so self-adjointness holds exactly.  The gradient term uses
    ``G^{1/2} (D_y eta_hat) G^{-1/2} = sym(G^{1/2} d_y(eta_hat) G^{-1/2})``,
    which is manifestly nonnegative after discretization.  ``mu`` is the
    density per unit coordinate length (scalar or per-node array).

    The sup is realized as ``sqrt(b^T A^-1 b)`` with ``A = mass + stiffness``,
    solved by conjugate gradients in the congruence variables
    ``Z = G^{-1/2} S G^{-1/2}`` (mass form = identity) with an FFT
    preconditioner built from the constant-coefficient part of ``A``.
    """
    eta = grid._check(eta)
    G = grid._check(G)
    if eta.shape != G.shape or eta.ndim != 3 or eta.shape[1] != eta.shape[2]:
        raise ValueError(f"shape mismatch: eta {eta.shape}, G {G.shape}")
    n, N, _ = G.shape
    w = _density_weights(mu, grid)
    mass = w * grid.dy
    stiff = grid.dy / w

    Ghalf, Gmhalf = symmat.sqrt_and_inv_sqrt(G)
    pack, unpack = symmat.packers(N)
    ncomp = N * (N + 1) // 2

    # Unknowns are Z = G^{-1/2} S G^{-1/2}; the mass form is then the identity.
    def apply(x):
        Z = unpack(x.reshape(n, ncomp))
        out = mass[:, None, None] * Z
        eta_hat = Gmhalf @ Z @ Ghalf
        X = symmat.sym(Ghalf @ grid.derivative(eta_hat) @ Gmhalf)
        Y = Ghalf @ (stiff[:, None, None] * X) @ Gmhalf
        out -= symmat.sym(Gmhalf @ grid.derivative(Y) @ Ghalf)
        return pack(out).ravel()

    # constant-coefficient (mean mass + mean stiffness * |k|^2) preconditioner
    k2 = np.abs(np.fft.fft(grid.derivative_matrix[:, 0])) ** 2
    symbol = (mass.mean() + stiff.mean() * k2)[:, None]

    def precondition(r):
        rh = np.fft.fft(r.reshape(n, ncomp), axis=0) / symbol
        return np.fft.ifft(rh, axis=0).real.ravel()

    size = n * ncomp
    A = scipy.sparse.linalg.LinearOperator((size, size), matvec=apply, dtype=float)
    P = scipy.sparse.linalg.LinearOperator((size, size), matvec=precondition, dtype=float)
    B = mass[:, None, None] * symmat.sym(Ghalf @ eta @ Gmhalf)
    b = pack(B).ravel()
    l2 = float(np.sqrt(max(np.sum(mass * np.trace(eta @ eta, axis1=1, axis2=2)), 0.0)))
    total_mass = float(mass.sum())
    kern = abs(float(np.sum(mass * np.trace(eta, axis1=1, axis2=2)))) / np.sqrt(N * total_mass)

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        res = HMinusResult(0.0, l2, kern, 0, 0.0)
        return res if return_info else 0.0

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = scipy.sparse.linalg.cg(A, b, rtol=rtol, atol=0.0, M=P,
                                     maxiter=maxiter or 20 * size, callback=count)
    resid = float(np.linalg.norm(b - apply(x)) / bnorm)
    if info != 0 and resid > 10 * rtol:
        raise ConvergenceError(f"CG stopped after {iters} iterations, "
                               f"relative residual {resid:.3e}")
    value = float(np.sqrt(max(b @ x, 0.0)))
    res = HMinusResult(value, l2, kern, iters, resid)
    return res if return_info else value


def hminus_norm_scalar(sigma, a, grid: CircleGrid) -> float:
    """Dual norm on ``L^2(a^-1 dtheta)`` against ``int (s^2 + a^2 s_theta^2) a^-1``.

    Dense Cholesky solve; independent of the matrix-valued CG path.
    """
    sigma = grid._check(sigma)
    if sigma.ndim != 1:
        raise ValueError("scalar field expected")
    a = np.broadcast_to(np.asarray(a, dtype=float), (grid.n,))
    if not np.all(a > 0):
        raise ValueError("a must be strictly positive")
    m = grid.dy / a
    c = grid.dy * a
    D = grid.derivative_matrix
    A = np.diag(m) + D.T @ (c[:, None] * D)
    b = m * sigma
    if not np.any(b):
        return 0.0
    cf = scipy.linalg.cho_factor(A)
    return float(np.sqrt(max(b @ scipy.linalg.cho_solve(cf, b), 0.0)))


def weighted_tail_integral(s, values, weight_exponent: float = 0.0, *,
                           window: float = 1.0, slope_margin: float = 0.05,
                           name: str = "weighted_tail_integral") -> Certificate:
    """Cumulative integral of ``exp(w s) * value(s)`` and its tail behaviour.

    The integrand's log-slope is fitted by least squares over the final
    ``window`` (one e-fold by default).  The run is "convergent-so-far"
    when that slope is below ``-slope_margin`` (or the integrand vanishes).
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.shape != v.shape or s.ndim != 1:
        raise ValueError("s and values must be matching 1-d arrays")
    if len(s) < 8:
        raise ValueError(f"need at least 8 samples, got {len(s)}")
    ds = np.diff(s)
    if not (np.all(ds > 0) or np.all(ds < 0)):
        raise ValueError("s grid must be strictly monotone")
    if ds[0] < 0:
        s, v = s[::-1], v[::-1]

    integrand = np.exp(weight_exponent * s) * v
    cumulative = np.concatenate([[0.0], cumulative_trapezoid(integrand, s)])
    total = float(cumulative[-1])
    tail_mask = s >= s[-1] - window
    i0 = int(np.argmax(tail_mask))
    before = float(cumulative[max(i0, 0)])
    tail_fraction = (total - before) / total if total != 0 else 0.0

    scale = np.max(np.abs(integrand)) if len(integrand) else 0.0
    pos = tail_mask & (integrand > 0)
    if scale == 0.0 or np.count_nonzero(pos) < 3:
        if scale == 0.0 or np.all(integrand[tail_mask] == 0):
            slope = -np.inf
        else:
            pos = integrand > 0
            slope = np.polyfit(s[pos], np.log(integrand[pos]), 1)[0]
    else:
        slope = np.polyfit(s[pos], np.log(integrand[pos]), 1)[0]
    convergent = bool(slope < -slope_margin)
    return Certificate(
        name=name,
        verdict="convergent-so-far" if convergent else "growing",
        passed=convergent,
        metrics={"integral": total, "slope": float(slope),
                 "tail_fraction": float(tail_fraction), "s_end": float(s[-1])},
        values={"s": s, "integrand": integrand, "cumulative": cumulative},
        tolerances={"window": window, "slope_margin": slope_margin},
    )


def fd4_derivative(y, h: float) -> np.ndarray:
    """Five-point centered derivative on a uniform grid (interior points 2..n-3)."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] < 5:
        raise ValueError("need at least 5 samples for a fourth-order stencil")
    return (8.0 * (y[3:-1] - y[1:-3]) - (y[4:] - y[:-4])) / (12.0 * h)


def fd2_nonuniform(y, x) -> np.ndarray:
    """Three-point centered derivative on a possibly non-uniform grid (interior)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    h0 = (x[1:-1] - x[:-2]).reshape((-1,) + (1,) * (y.ndim - 1))
    h1 = (x[2:] - x[1:-1]).reshape((-1,) + (1,) * (y.ndim - 1))
    return (-(h1 / (h0 * (h0 + h1))) * y[:-2]
            + ((h1 - h0) / (h0 * h1)) * y[1:-1]
            + (h0 / (h1 * (h0 + h1))) * y[2:])
