"""Energies, their monotonicity identities, and the AVTD decay certificate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .. import symmat
from ..certificate import Certificate
from ..circlefield import fd2_nonuniform, fd4_derivative, hminus_norm_matrix, weighted_tail_integral
from .evolve import Trajectory
from .state import GowdyState


@dataclass(frozen=True)
class GowdyEnergies:
    E: float
    Ehat: float
    Etilde: float


def _tr2(X):
    return np.einsum("nij,nji->n", X, X)


def energy_densities(state: GowdyState) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ``Tr(Ahat^2)`` and ``Tr(B^2)`` with ``Ahat = G^-1 G_T``."""
    return np.exp(2 * state.s) * _tr2(state.Atilde), _tr2(state.B)


def energies(state: GowdyState) -> GowdyEnergies:
    """``Ehat``, ``Etilde = T^2 Ehat`` and the areal-time energy ``E``."""
    a2, b2 = energy_densities(state)
    Ehat = 0.5 * float(state.grid.integrate(a2 + b2))
    T = state.T
    N = state.N
    dTdt = 0.5 * N * T ** ((N - 2) / N)
    return GowdyEnergies(E=2 * dTdt * Ehat, Ehat=Ehat, Etilde=T * T * Ehat)


def _derivative_in_s(values, s):
    s = np.asarray(s)
    h = np.diff(s)
    if len(s) >= 5 and np.allclose(h, h[0], rtol=1e-9, atol=0):
        return fd4_derivative(values, h[0]), slice(2, len(s) - 2)
    return fd2_nonuniform(values, s), slice(1, len(s) - 1)


def _relative(lhs, rhs, scale):
    err = np.max(np.abs(lhs - rhs)) if len(lhs) else 0.0
    ref = np.max(np.abs(rhs)) if len(rhs) else 0.0
    if ref <= 1e-10 * scale:
        ref = scale
    return float(err / ref) if ref > 0 else float(err)


def energy_identities(traj: Trajectory, tol: float = 1e-9) -> Certificate:
    """Check ``dEhat/dT = -(1/T) int Tr(Ahat^2)`` and ``dEtilde/dT = T int Tr(B^2)``.

    Time derivatives use a five-point stencil in ``s`` when the outputs are
    uniformly spaced (three-point otherwise), converted by ``d/dT = -e^s d/ds``.
    Also checks the integrated bound ``int T int Tr(B^2) dT = Etilde(T_hi) - Etilde(T_lo)``
    and adjacent-output monotonicity at tolerance ``tol * (1 + |value|)``.
    """
    if len(traj) < 5:
        raise ValueError(f"need at least 5 output times, got {len(traj)}")
    s = traj.s
    order = np.argsort(s)
    states = [traj.states[i] for i in order]
    s = s[order]
    T = np.exp(-s)
    en = [energies(st) for st in states]
    Ehat = np.array([e.Ehat for e in en])
    Etilde = np.array([e.Etilde for e in en])
    dens = [energy_densities(st) for st in states]
    intA = np.array([st.grid.integrate(a) for st, (a, _) in zip(states, dens)])
    intB = np.array([st.grid.integrate(b) for st, (_, b) in zip(states, dens)])

    dEh_ds, sl = _derivative_in_s(Ehat, s)
    dEt_ds, _ = _derivative_in_s(Etilde, s)
    dEh_dT = -np.exp(s[sl]) * dEh_ds
    dEt_dT = -np.exp(s[sl]) * dEt_ds
    rhs_hat = -intA[sl] / T[sl]
    rhs_tilde = T[sl] * intB[sl]
    res_hat = _relative(dEh_dT, rhs_hat, np.max(np.abs(Ehat / T)))
    res_tilde = _relative(dEt_dT, rhs_tilde, np.max(np.abs(Etilde / T)))

    # Ehat nonincreasing in T <=> nondecreasing in s; Etilde the reverse.
    dh = np.diff(Ehat)
    dt_ = np.diff(Etilde)
    tol_h = tol * (1 + np.abs(Ehat[1:]))
    tol_t = tol * (1 + np.abs(Etilde[1:]))
    mono_hat = bool(np.all(dh >= -tol_h))
    mono_tilde = bool(np.all(dt_ <= tol_t))

    bound_lhs = float(simpson(np.exp(-2 * s) * intB, x=s))
    bound_rhs = float(Etilde[0] - Etilde[-1])
    bscale = max(abs(bound_rhs), 1e-14 * np.max(np.abs(Etilde)))
    bound_res = abs(bound_lhs - bound_rhs) / bscale if bscale > 0 else 0.0

    ok = mono_hat and mono_tilde
    return Certificate(
        name="gowdy_energy_identities",
        verdict="monotone" if ok else "non-monotone",
        passed=ok,
        metrics={"residual_hat": res_hat, "residual_tilde": res_tilde,
                 "bound_residual": float(bound_res),
                 "monotone_hat": mono_hat, "monotone_tilde": mono_tilde,
                 "min_step_hat": float(np.min(dh)), "max_step_tilde": float(np.max(dt_))},
        values={"s": s, "T": T, "Ehat": Ehat, "Etilde": Etilde,
                "dEhat_dT": dEh_dT, "rhs_hat": rhs_hat,
                "dEtilde_dT": dEt_dT, "rhs_tilde": rhs_tilde},
        tolerances={"monotonicity": tol},
    )


def avtd_defect(state: GowdyState) -> np.ndarray:
    """``(G^-1 G_s)_s = exp(-2s) d_y(G^-1 G_y)``, returned exactly G-self-adjoint.

    Stored as ``G^-1 S`` with ``S = exp(-2s)(G_yy - G_y G^-1 G_y)`` symmetric.
    Multiply by ``(N/2)^2`` for the areal-time defect ``(G^-1 G_tau)_tau``.
    """
    g = state.grid
    Gy = g.derivative(state.G)
    Gyy = g.derivative(Gy)
    S = np.exp(-2 * state.s) * symmat.sym(Gyy - Gy @ np.linalg.solve(state.G, Gy))
    return np.linalg.solve(state.G, S)


def decay_integrand(state: GowdyState, **kw) -> float:
    """``W(s) = exp(2s) ||(G^-1 G_s)_s||^2`` in the H^-1 norm with ``mu = 2 dy``."""
    d = avtd_defect(state)
    nrm = hminus_norm_matrix(d, state.G, state.mu, state.grid, **kw)
    return float(np.exp(2 * state.s) * nrm * nrm)


def decay_certificate(traj: Trajectory, *, every: int = 1, min_span: float = 3.0,
                      **kw) -> Certificate:
    """Weighted tail integral of ``W(s)`` along the run.

    Reports the fitted tail exponent of ``W`` over the final e-fold and the
    fraction of the integral accumulated there; the verdict is that of the
    tail integral (the exponent's value is reported, not judged).
    """
    states = traj.states[::every]
    if traj.states[-1] is not states[-1]:
        states.append(traj.states[-1])
    s = np.array([st.s for st in states])
    if s[-1] - s[0] < min_span:
        raise ValueError(f"run spans {s[-1] - s[0]:.3g} in s; need >= {min_span}")
    W = np.array([decay_integrand(st, **kw) for st in states])
    cert = weighted_tail_integral(s, W, 0.0, name="gowdy_decay")
    cert.values["W"] = W
    cert.metrics["tail_exponent"] = cert.metrics["slope"]
    if np.all(W == 0):
        cert.notes.append("defect vanishes identically")
    return cert


def bump(s, a: float, b: float):
    """Smooth bump supported in ``(a, b)`` and its derivative."""
    s = np.asarray(s, dtype=float)
    x = (2 * s - (a + b)) / (b - a)
    inside = np.abs(x) < 1
    f = np.zeros_like(s)
    df = np.zeros_like(s)
    xi = x[inside]
    f[inside] = np.exp(-1.0 / (1 - xi * xi))
    df[inside] = f[inside] * (-2 * xi / (1 - xi * xi) ** 2) * 2 / (b - a)
    return f, df


def bump_section(a: float, b: float, S0=None) -> Callable[[GowdyState], tuple[np.ndarray, np.ndarray]]:
    """Test sections ``sigma = bump(s) G^-1 S0`` (or ``bump(s) I`` if ``S0`` is None)."""

    def fn(state: GowdyState):
        f, df = bump(np.array([state.s]), a, b)
        f, df = float(f[0]), float(df[0])
        if S0 is None:
            eye = np.broadcast_to(np.eye(state.N), state.G.shape)
            return f * eye, df * eye
        Gi_S0 = np.linalg.solve(state.G, S0)
        return f * Gi_S0, df * Gi_S0 - f * state.Atilde @ Gi_S0

    return fn


def weak_form_check(traj: Trajectory, test_fn, tol: float = 1e-5) -> Certificate:
    """Integrated weak form of the evolution equation against a test section.

    Checks ``iint Tr(sigma_s Atilde) dmu ds = iint exp(-2s) Tr((D_y sigma) B) dmu ds``
    (``mu = 2 dy``) with Simpson's rule in ``s``.  ``test_fn(state)`` returns
    ``(sigma, sigma_s)`` and must vanish at both ends of the run.
    """
    s = traj.s
    lhs = np.empty(len(traj))
    rhs = np.empty(len(traj))
    alhs = np.empty(len(traj))
    arhs = np.empty(len(traj))
    sig_end = []
    for i, st in enumerate(traj.states):
        sigma, sigma_s = test_fn(st)
        if i in (0, len(traj) - 1):
            sig_end.append(np.max(np.abs(sigma)))
        mu = st.mu
        l_den = mu * np.einsum("nij,nji->n", sigma_s, st.Atilde)
        Dsig = symmat.covariant_dy(sigma, st.G, st.grid)
        r_den = mu * np.exp(-2 * st.s) * np.einsum("nij,nji->n", Dsig, st.B)
        lhs[i] = st.grid.integrate(l_den)
        rhs[i] = st.grid.integrate(r_den)
        alhs[i] = st.grid.integrate(np.abs(l_den))
        arhs[i] = st.grid.integrate(np.abs(r_den))
    if max(sig_end) > 1e-12:
        raise ValueError("test section is not compactly supported inside the run")
    L = float(simpson(lhs, x=s))
    R = float(simpson(rhs, x=s))
    scale = max(abs(L), abs(R), float(simpson(alhs, x=s)), float(simpson(arhs, x=s)))
    mismatch = abs(L - R) / scale if scale > 0 else 0.0
    return Certificate(
        name="gowdy_weak_form",
        verdict="consistent" if mismatch < tol else "mismatch",
        passed=bool(mismatch < tol),
        metrics={"lhs": L, "rhs": R, "mismatch": float(mismatch)},
        values={"s": s, "lhs_density": lhs, "rhs_density": rhs},
        tolerances={"mismatch": tol},
    )


def twist_density(state: GowdyState) -> np.ndarray:
    """``sqrt(det G) d_T ln det G`` per unit ``dy`` evaluated from the state."""
    det = np.linalg.det(state.G)
    return np.sqrt(det) * (-np.exp(state.s)) * np.trace(state.Atilde, axis1=1, axis2=2)


def twist_density_check(traj: Trajectory, tol: float = 1e-10) -> Certificate:
    """Time-independence of the twist density (``mu = 2 dy`` in this gauge)."""
    if len(traj) < 2:
        raise ValueError("need at least 2 output times")
    mus = np.array([twist_density(st) for st in traj.states])
    err = float(np.max(np.abs(mus - 2.0)) / 2.0)
    drift = float(np.max(np.abs(mus - mus[0])) / 2.0)
    masses = np.array([traj.grid.integrate(m) for m in mus])
    ok = err < tol and drift < tol
    return Certificate(
        name="gowdy_twist_density",
        verdict="time-independent" if ok else "violated",
        passed=bool(ok),
        metrics={"max_relative_error": err, "max_drift": drift,
                 "total_mass": float(masses[-1]), "expected_mass": 2 * traj.grid.length},
        values={"s": traj.s, "mass": masses},
        tolerances={"relative": tol},
    )


def b_lipschitz(state: GowdyState) -> float:
    """Spatial Lipschitz constant of ``B = G^-1 G_y`` (under-resolution monitor)."""
    By = state.grid.derivative(state.B)
    return float(np.max(np.linalg.norm(By, axis=(1, 2))))
