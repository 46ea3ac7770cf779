"""Gowdy state in the conformal gauge ``sqrt(det G) = T = exp(-s)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j0, j1

from .. import symmat
from ..circlefield import CircleGrid


@dataclass
class GowdyState:
    """Torus-orbit metric ``G`` and ``Atilde = G^-1 G_s`` at log-conformal time ``s``.

    The singularity sits at ``s -> +inf``.  ``det G = exp(-2 s)`` and
    ``tr Atilde = -2`` are the defining constraints.
    """

    grid: CircleGrid
    G: np.ndarray
    Atilde: np.ndarray
    s: float

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.Atilde = np.asarray(self.Atilde, dtype=float)
        if self.G.ndim != 3 or self.G.shape != self.Atilde.shape:
            raise ValueError(f"G {self.G.shape} and Atilde {self.Atilde.shape} must be (n, N, N)")
        if self.G.shape[0] != self.grid.n:
            raise ValueError("field length does not match grid")

    @property
    def N(self) -> int:
        return self.G.shape[1]

    @property
    def T(self) -> float:
        return float(np.exp(-self.s))

    @property
    def mu(self) -> np.ndarray:
        """Twist density per unit ``dy`` (constant 2 in this gauge)."""
        return np.full(self.grid.n, 2.0)

    @property
    def B(self) -> np.ndarray:
        """``G^-1 G_y``."""
        return np.linalg.solve(self.G, self.grid.derivative(self.G))

    @property
    def Ahat(self) -> np.ndarray:
        """``G^-1 G_T = -exp(s) Atilde``."""
        return -np.exp(self.s) * self.Atilde

    def copy(self) -> "GowdyState":
        return GowdyState(self.grid, self.G.copy(), self.Atilde.copy(), self.s)

    def constraint_errors(self) -> dict[str, float]:
        det = np.linalg.det(self.G)
        target = np.exp(-2 * self.s)
        return {
            "det": float(np.max(np.abs(det / target - 1.0))),
            "trace_atilde": float(np.max(np.abs(np.trace(self.Atilde, axis1=1, axis2=2) + 2.0))),
            "trace_b": float(np.max(np.abs(np.trace(self.B, axis1=1, axis2=2)))),
            "self_adjoint": symmat.self_adjoint_defect(self.Atilde, self.G),
        }


def homogeneous(q, s0: float, grid: CircleGrid) -> GowdyState:
    """Spatially homogeneous power law ``G = diag(T^{2 q_i})`` with ``sum q = 1``."""
    q = np.asarray(q, dtype=float)
    if abs(q.sum() - 1.0) > 1e-12:
        raise ValueError(f"exponents must sum to 1, got {q.sum()}")
    G = np.broadcast_to(np.diag(np.exp(-2 * q * s0)), (grid.n, len(q), len(q))).copy()
    A = np.broadcast_to(np.diag(-2 * q), G.shape).copy()
    return GowdyState(grid, G, A, s0)


def _pq_matrix(P, Q):
    eP = np.exp(P)
    M = np.empty(np.shape(P) + (2, 2))
    M[..., 0, 0] = eP
    M[..., 0, 1] = M[..., 1, 0] = eP * Q
    M[..., 1, 1] = eP * Q ** 2 + np.exp(-P)
    return M


def init_from_pq(P, Q, P_s, Q_s, s0: float, grid: CircleGrid) -> GowdyState:
    """N = 2 data from the unit-determinant ``(P, Q)`` parametrization."""
    P, Q, P_s, Q_s = (np.asarray(x, dtype=float) for x in (P, Q, P_s, Q_s))
    for x in (P, Q, P_s, Q_s):
        if x.shape != (grid.n,):
            raise ValueError("P, Q and their s-derivatives must be sampled on the grid")
    T = np.exp(-s0)
    M = _pq_matrix(P, Q)
    eP = np.exp(P)
    dM = np.empty_like(M)
    dM[:, 0, 0] = P_s * eP
    dM[:, 0, 1] = dM[:, 1, 0] = eP * (P_s * Q + Q_s)
    dM[:, 1, 1] = eP * (P_s * Q ** 2 + 2 * Q * Q_s) - P_s * np.exp(-P)
    A = -np.eye(2) + np.linalg.solve(M, dM)
    return GowdyState(grid, T * M, A, s0)


def extract_pq(G: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    M = np.asarray(G) * np.exp(s)
    return np.log(M[..., 0, 0]), M[..., 0, 1] / M[..., 0, 0]


def bessel_polarized(k: int, s0: float, grid: CircleGrid, amplitude: float = 1.0) -> GowdyState:
    """Polarized data ``P = amp J0(k T) cos(k y)``, ``Q = 0`` (needs 2*pi period)."""
    y = grid.points
    T = np.exp(-s0)
    P = amplitude * j0(k * T) * np.cos(k * y)
    P_s = amplitude * k * T * j1(k * T) * np.cos(k * y)
    z = np.zeros_like(y)
    return init_from_pq(P, z, P_s, z, s0, grid)


def bessel_solution(k: int, s: float, grid: CircleGrid, amplitude: float = 1.0) -> np.ndarray:
    return amplitude * j0(k * np.exp(-s)) * np.cos(k * grid.points)


def _band_field(rng, grid: CircleGrid, band: int, amplitude: float, shape=(), constant=False):
    """Real band-limited random field with modes ``1..band`` (plus mode 0 if asked)."""
    y = grid.points * (2 * np.pi / grid.length)
    out = np.zeros((grid.n,) + shape)
    ks = range(0 if constant else 1, band + 1)
    for k in ks:
        c = rng.standard_normal(shape)
        d = rng.standard_normal(shape)
        out += np.multiply.outer(np.cos(k * y), c) + np.multiply.outer(np.sin(k * y), d)
    return amplitude * out / np.sqrt(2 * len(ks))


def random_data(N: int, s0: float, grid: CircleGrid, rng: np.random.Generator, *,
                amplitude: float = 0.5, velocity: float = 0.5, band: int = 3,
                polarized: bool = False) -> GowdyState:
    """Band-limited random data with ``det G = exp(-2 s0)``.

    ``G = T^{2/N} exp(X)`` with ``X`` traceless symmetric; the velocity part
    of ``Atilde`` is ``G1^-1 S`` projected to zero trace.  ``polarized``
    keeps everything diagonal.
    """
    X = _band_field(rng, grid, band, amplitude, (N, N))
    S = _band_field(rng, grid, band, velocity, (N, N), constant=True)
    if polarized:
        X = X * np.eye(N)
        S = S * np.eye(N)
    X = symmat.sym(X)
    X -= (np.trace(X, axis1=1, axis2=2) / N)[:, None, None] * np.eye(N)
    S = symmat.sym(S)
    G1 = symmat.eig_apply(X, np.exp)
    V = np.linalg.solve(G1, S)
    trV = np.trace(V, axis1=1, axis2=2)
    V -= (trV / N)[:, None, None] * np.eye(N)
    G = np.exp(-2 * s0 / N) * G1
    A = -(2.0 / N) * np.eye(N) + V
    A = np.linalg.solve(G, symmat.sym(G @ A))
    return GowdyState(grid, G, A, s0)
