"""Flat-slice (Bianchi-I type) flows in matrix form and Kasner reconstruction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import symmat
from ..certificate import Certificate


@dataclass
class MatrixFlow:
    """Spatial metric and second fundamental form on flat slices at Hubble time ``t``."""

    hmat: np.ndarray
    Kmat: np.ndarray
    t: float
    R: float = 0.0

    def __post_init__(self):
        self.hmat = symmat.check_spd(self.hmat, where=" (spatial metric)")
        self.Kmat = symmat.sym(np.asarray(self.Kmat, dtype=float))
        if self.hmat.shape != self.Kmat.shape or self.hmat.ndim != 2:
            raise ValueError("h and K must be matching square matrices")

    @property
    def n(self) -> int:
        return self.hmat.shape[0]

    @property
    def shape_operator(self) -> np.ndarray:
        return np.linalg.solve(self.hmat, self.Kmat)

    @property
    def H(self) -> float:
        return float(np.trace(self.shape_operator))

    def constraint_residual(self) -> float:
        S = self.shape_operator
        K2 = float(np.trace(S @ S))
        H = self.H
        return abs(self.R - (K2 - H ** 2 / self.n) + (1 - 1 / self.n) * H ** 2) / H ** 2


class KasnerMatrixFamily:
    """``h(t) = hhat (-H)^{-2M}`` with ``-H = n/t``, ``M`` self-adjoint for ``hhat``."""

    name = "kasner_matrix"

    def __init__(self, M, hhat=None, tol: float = 1e-10):
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        hhat = np.eye(n) if hhat is None else symmat.check_spd(hhat)
        if abs(np.trace(M) - 1) > tol or abs(np.trace(M @ M) - 1) > tol:
            raise ValueError(f"Kasner matrix needs Tr M = Tr M^2 = 1, got "
                             f"{np.trace(M):.12g}, {np.trace(M @ M):.12g}")
        if symmat.self_adjoint_defect(M, hhat) > tol:
            raise ValueError("M must be self-adjoint with respect to hhat")
        self.M, self.hhat, self.n = M, hhat, n

    def at(self, t: float) -> MatrixFlow:
        n = self.n
        lam = np.log(n / t)
        h = symmat.sym(symmat.vtd_geodesic(self.hhat, self.M, -2.0 * lam))
        K = symmat.sym(-(n / t) * h @ self.M)
        return MatrixFlow(h, K, float(t))

    def sample(self, ts) -> list[MatrixFlow]:
        return [self.at(float(t)) for t in ts]


def kasner_matrix_family(M, hhat=None) -> KasnerMatrixFamily:
    return KasnerMatrixFamily(M, hhat)


@dataclass
class KasnerFit:
    M: np.ndarray
    hhat: np.ndarray
    certificate: Certificate


def kasner_reconstruct(history, tol: float = 1e-8) -> KasnerFit:
    """Recover ``M = h^-1 K / H`` and ``hhat = h (-H)^{2M}`` from flat-slice samples.

    ``hhat`` is evaluated as ``h^{1/2} exp(2 ln(-H) M_s) h^{1/2}`` with the
    symmetric ``M_s = h^{1/2} M h^{-1/2}``.  The certificate passes when ``M``
    and ``hhat`` are constant in time to ``tol`` and ``h(t)`` is reproduced.
    """
    history = list(history)
    if len(history) < 3:
        raise ValueError(f"need at least 3 samples, got {len(history)}")
    Ms, hhats, lnt = [], [], []
    for f in history:
        if f.R != 0:
            raise ValueError("Kasner reconstruction needs flat slices (R = 0)")
        H = f.H
        if H == 0:
            raise ValueError("mean curvature vanishes; M is undefined")
        M = f.shape_operator / H
        Ms.append(M)
        Rh, Rmh = symmat.sqrt_and_inv_sqrt(f.hmat)
        Msym = symmat.sym(Rh @ M @ Rmh)
        E = symmat.eig_apply(Msym, lambda lam, c=2.0 * np.log(-H): np.exp(c * lam))
        hhats.append(symmat.sym(Rh @ E @ Rh))
        lnt.append(np.log(f.t))
    Ms, hhats = np.array(Ms), np.array(hhats)
    M = Ms.mean(axis=0)
    hhat = hhats.mean(axis=0)
    scale = max(np.linalg.norm(M), 1.0)
    m_var = float(np.max(np.linalg.norm(Ms - M, axis=(1, 2)))) / scale
    h_var = float(np.max(np.linalg.norm(hhats - hhat, axis=(1, 2))) / np.linalg.norm(hhat))
    pred = []
    Rh, Rmh = symmat.sqrt_and_inv_sqrt(hhat)
    Msym = symmat.sym(Rh @ M @ Rmh)
    for f in history:
        E = symmat.eig_apply(Msym, lambda lam, c=-2.0 * np.log(-f.H): np.exp(c * lam))
        hp = Rh @ E @ Rh
        pred.append(np.linalg.norm(hp - f.hmat) / np.linalg.norm(f.hmat))
    h_res = float(np.max(pred))
    trM, trM2 = float(np.trace(M)), float(np.trace(M @ M))
    span = float(np.ptp(lnt))
    ok = m_var < tol and h_var < tol and h_res < tol
    return KasnerFit(M, hhat, Certificate(
        name="kasner_reconstruct",
        verdict="kasner" if ok else "not-kasner",
        passed=ok,
        metrics={"M_variation": m_var, "hhat_variation": h_var, "h_residual": h_res,
                 "trace_M": trM, "trace_M2": trM2, "ln_t_span": span,
                 "M_variation_rate": m_var / span if span > 0 else float("inf")},
        values={"M_samples": Ms, "hhat_samples": hhats},
        tolerances={"tol": tol},
    ))
