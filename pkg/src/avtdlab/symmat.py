"""Symmetric positive-definite matrices and G-self-adjoint sections.

Batched: a "field" is an array of shape ``(n, N, N)``.  A section ``sigma``
is self-adjoint with respect to ``G`` when ``sigma^T = G sigma G^-1``,
equivalently ``G sigma`` is symmetric; such sections are stored as
``sigma = G^-1 S`` with ``S`` symmetric.
"""
from __future__ import annotations

import numpy as np


class NotSelfAdjointError(ValueError):
    pass


class PositivityError(ArithmeticError):
    """A reconstructed metric lost positive definiteness."""


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def eig_apply(S: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to a (batch of) symmetric matrices."""
    lam, Q = np.linalg.eigh(S)
    return (Q * fn(lam)[..., None, :]) @ np.swapaxes(Q, -1, -2)


def sqrt_and_inv_sqrt(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam, Q = np.linalg.eigh(G)
    if np.any(lam <= 0):
        raise PositivityError(f"matrix not positive definite (min eigenvalue {lam.min():.3e})")
    Qt = np.swapaxes(Q, -1, -2)
    r = np.sqrt(lam)
    return (Q * r[..., None, :]) @ Qt, (Q * (1.0 / r)[..., None, :]) @ Qt


def check_spd(G: np.ndarray, rel: float = 1e-12, where: str = "") -> np.ndarray:
    """Symmetrize and fail loudly if min eigenvalue < rel * trace."""
    G = sym(np.asarray(G, dtype=float))
    lam = np.linalg.eigvalsh(G)
    tr = np.trace(G, axis1=-2, axis2=-1)
    bad = lam[..., 0] < rel * tr
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise PositivityError(f"SPD loss{where} at index {tuple(idx)}: "
                              f"min eigenvalue {np.min(lam[..., 0]):.3e}")
    return G


def self_adjoint_violation(sigma: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Pointwise ``||sigma^T - G sigma G^-1||_F / (1 + ||sigma||_F)``."""
    sigma = np.asarray(sigma, dtype=float)
    G = np.asarray(G, dtype=float)
    if sigma.shape != G.shape:
        raise ValueError(f"dimension mismatch: sigma {sigma.shape}, G {G.shape}")
    d = np.swapaxes(sigma, -1, -2) - G @ sigma @ np.linalg.inv(G)
    return np.linalg.norm(d, axis=(-2, -1)) / (1.0 + np.linalg.norm(sigma, axis=(-2, -1)))


def self_adjoint_defect(sigma: np.ndarray, G: np.ndarray) -> float:
    return float(np.max(self_adjoint_violation(sigma, G)))


def vtd_geodesic(G0: np.ndarray, W: np.ndarray, s, tol: float = 1e-10) -> np.ndarray:
    """``G0 exp(s W)`` for ``W`` self-adjoint with respect to ``G0``.

    Since ``G0 W`` is symmetric, ``W`` is similar to the symmetric matrix
    ``Z = G0^{1/2} W G0^{-1/2}`` and ``G0 exp(sW) = G0^{1/2} exp(sZ) G0^{1/2}``,
    which is evaluated by a symmetric eigendecomposition and is SPD by
    construction.  ``s`` may be a scalar or a 1-d array (result gains a
    leading axis).
    """
    G0 = check_spd(G0)
    W = np.asarray(W, dtype=float)
    viol = self_adjoint_defect(W, G0)
    if viol > tol:
        raise NotSelfAdjointError(f"W is not self-adjoint w.r.t. G0 (violation {viol:.3e})")
    R, Rinv = sqrt_and_inv_sqrt(G0)
    Z = sym(R @ W @ Rinv)
    lam, Q = np.linalg.eigh(Z)
    s_arr = np.asarray(s, dtype=float)
    e = np.exp(np.multiply.outer(s_arr, lam))
    RQ = R @ Q
    return (RQ * e[..., None, :]) @ np.swapaxes(RQ, -1, -2)


def covariant_dy(sigma: np.ndarray, G: np.ndarray, grid) -> np.ndarray:
    """``D_y sigma = sigma_y + 1/2 [G^-1 G_y, sigma]`` on a periodic grid."""
    sigma = np.asarray(sigma, dtype=float)
    G = np.asarray(G, dtype=float)
    if sigma.shape != G.shape:
        raise ValueError(f"dimension mismatch: sigma {sigma.shape}, G {G.shape}")
    B = np.linalg.solve(G, grid.derivative(G))
    return grid.derivative(sigma) + 0.5 * (B @ sigma - sigma @ B)


def packers(N: int):
    """Orthonormal packing of symmetric ``N x N`` matrices into ``N(N+1)/2`` vectors."""
    iu = np.triu_indices(N)
    wt = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))

    def pack(S):
        return S[..., iu[0], iu[1]] * wt

    def unpack(x):
        S = np.zeros(x.shape[:-1] + (N, N))
        S[..., iu[0], iu[1]] = x / wt
        S[..., iu[1], iu[0]] = x / wt
        return S

    return pack, unpack


def batch_inv(G: np.ndarray) -> np.ndarray:
    """Inverse of a stack of small matrices (closed form for N <= 3)."""
    N = G.shape[-1]
    if N == 1:
        return 1.0 / G
    if N == 2:
        a, b, c, d = G[..., 0, 0], G[..., 0, 1], G[..., 1, 0], G[..., 1, 1]
        det = a * d - b * c
        out = np.empty_like(G)
        out[..., 0, 0] = d / det
        out[..., 0, 1] = -b / det
        out[..., 1, 0] = -c / det
        out[..., 1, 1] = a / det
        return out
    if N == 3:
        c0 = np.cross(G[..., 1, :], G[..., 2, :])
        c1 = np.cross(G[..., 2, :], G[..., 0, :])
        c2 = np.cross(G[..., 0, :], G[..., 1, :])
        det = np.einsum("...i,...i->...", G[..., 0, :], c0)
        return np.stack([c0, c1, c2], axis=-1) / det[..., None, None]
    return np.linalg.inv(G)


def batch_det(G: np.ndarray) -> np.ndarray:
    N = G.shape[-1]
    if N == 2:
        return G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    if N == 3:
        return np.einsum("...i,...i->...", G[..., 0, :], np.cross(G[..., 1, :], G[..., 2, :]))
    return np.linalg.det(G)
