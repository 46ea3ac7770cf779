"""Functionals, residuals and AVTD criteria for T^2-symmetric twisted data.

Fields live on a periodic ``theta`` grid at areal time ``R`` (``tau = -ln R``).
Time derivatives are stored with respect to ``R``; nothing here evolves the
system, histories are supplied (from files or from the formal large-``tau``
expansion).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
import csv
import json
import logging
from pathlib import Path
import warnings

import numpy as np

from .certificate import Certificate
from .circlefield import (CircleGrid, fd2_nonuniform, fd4_derivative,
                          hminus_norm_scalar, weighted_tail_integral)

log = logging.getLogger(__name__)

FIELD_NAMES = ("U", "A", "eta", "a", "Gconn", "Hconn")
DERIVATIVE_NAMES = ("U_R", "A_R", "eta_R", "a_R", "H_R")
HISTORY_FORMAT = "tsym-history/1"


class MissingFieldError(ValueError):
    """A functional needs a field the state does not carry."""


@dataclass
class TsymState:
    """Scalar fields at one areal time ``R`` with twist constant ``K``.

    ``eta_given`` is False when ``eta`` is a placeholder (expansion data);
    terms that need the true metric exponent are then unavailable.
    """

    grid: CircleGrid
    R: float
    K: float
    U: np.ndarray
    A: np.ndarray
    a: np.ndarray
    eta: np.ndarray | None = None
    Gconn: np.ndarray | None = None
    Hconn: np.ndarray | None = None
    U_R: np.ndarray | None = None
    A_R: np.ndarray | None = None
    eta_R: np.ndarray | None = None
    a_R: np.ndarray | None = None
    H_R: np.ndarray | None = None
    eta_given: bool = True

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"areal time must be positive, got {self.R}")
        if not self.K > 0:
            raise ValueError(f"twist constant must be positive, got {self.K}")
        n = self.grid.n
        for name in FIELD_NAMES + DERIVATIVE_NAMES:
            v = getattr(self, name)
            if v is None:
                continue
            v = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
            setattr(self, name, v)
        if self.eta is None:
            self.eta_given = False
        if not np.all(self.a > 0):
            raise ValueError("a must be strictly positive")

    @property
    def tau(self) -> float:
        return float(-np.log(self.R))

    @property
    def has_derivatives(self) -> bool:
        return self.U_R is not None and self.A_R is not None

    def need(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingFieldError(f"state at R={self.R:g} lacks {', '.join(missing)}")
        if "eta" in names and not self.eta_given:
            raise MissingFieldError("eta is a placeholder on this state (no eta profile given)")

    def present(self) -> list[str]:
        return [n for n in FIELD_NAMES + DERIVATIVE_NAMES if getattr(self, n) is not None]


class TsymHistory:
    """States at strictly monotone times sharing a grid and ``K``."""

    def __init__(self, states):
        states = list(states)
        if not states:
            raise ValueError("empty history")
        grid, K = states[0].grid, states[0].K
        for st in states[1:]:
            if st.grid != grid:
                raise ValueError("history entries must share one grid")
            if st.K != K:
                raise ValueError("history entries must share one twist constant")
        R = np.array([st.R for st in states])
        dR = np.diff(R)
        if len(R) > 1 and not (np.all(dR > 0) or np.all(dR < 0)):
            raise ValueError("history times must be strictly monotone")
        self.states = states
        self.grid = grid
        self.K = K

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def R(self) -> np.ndarray:
        return np.array([st.R for st in self.states])

    @property
    def tau(self) -> np.ndarray:
        return -np.log(self.R)

    def stack(self, name: str) -> np.ndarray:
        vals = [getattr(st, name) for st in self.states]
        if any(v is None for v in vals):
            raise MissingFieldError(f"field {name} missing from some history entries")
        return np.stack(vals)


# --------------------------------------------------------------------------
# formal expansion


def _on_grid(f, grid: CircleGrid) -> np.ndarray:
    if callable(f):
        return np.broadcast_to(np.asarray(f(grid.points), dtype=float), (grid.n,)).copy()
    return np.broadcast_to(np.asarray(f, dtype=float), (grid.n,)).copy()


@dataclass
class ExpansionProfile:
    """Free functions of the formal large-``tau`` expansion.

    Each entry is a constant, an array on the grid, or a callable of theta.
    """

    k: object
    U_ss: object = 0.0
    A_star: object = 0.0
    A_ss: object = 0.0
    a_star: object = 1.0
    H_star: object = 0.0
    allow_k_out_of_range: bool = False

    def evaluate(self, grid: CircleGrid) -> dict[str, np.ndarray]:
        vals = {f.name: _on_grid(getattr(self, f.name), grid)
                for f in fields(self) if f.name != "allow_k_out_of_range"}
        k = vals["k"]
        if np.any(k <= 0) or np.any(k >= 1):
            msg = f"k outside (0, 1): range [{k.min():.3g}, {k.max():.3g}]"
            if not self.allow_k_out_of_range:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=2)
        if np.any(vals["a_star"] <= 0):
            raise ValueError("a_star must be strictly positive")
        return vals


def expansion_fields(profile: ExpansionProfile, tau: float, grid: CircleGrid,
                     K: float = 1.0) -> TsymState:
    """Leading-order fields of the expansion at time ``tau`` (``R = e^-tau``).

    ``eta`` is a zero placeholder with ``eta_given=False``; derivative fields
    come from term-by-term differentiation, converted by ``d/dR = -R^-1 d/dtau``.
    """
    if tau < 1:
        raise ValueError(f"expansion is evaluated for tau >= 1, got {tau}")
    p = profile.evaluate(grid)
    k = p["k"]
    R = float(np.exp(-tau))
    decay = np.exp(-2.0 * k * tau)
    U = -0.5 * (1.0 - k) * tau + p["U_ss"]
    A = p["A_star"] + p["A_ss"] * decay
    U_tau = -0.5 * (1.0 - k)
    A_tau = -2.0 * k * p["A_ss"] * decay
    zero = np.zeros(grid.n)
    return TsymState(grid=grid, R=R, K=K, U=U, A=A, a=p["a_star"], eta=zero.copy(),
                     Gconn=zero.copy(), Hconn=p["H_star"],
                     U_R=-U_tau / R, A_R=-A_tau / R, eta_R=zero.copy(),
                     a_R=zero.copy(), H_R=zero.copy(), eta_given=False)


def expansion_history(profile: ExpansionProfile, taus, grid: CircleGrid,
                      K: float = 1.0) -> TsymHistory:
    return TsymHistory(expansion_fields(profile, float(t), grid, K) for t in taus)


# --------------------------------------------------------------------------
# energies


@dataclass
class EnergiesK:
    D_integral: float
    Ehat_K: float
    Etilde_K: float
    holonomy: float
    twist_term: float
    twist_term_included: bool


def _d_density(st: TsymState) -> np.ndarray:
    st.need("U_R", "A_R")
    grid = st.grid
    U_t, A_t = grid.derivative(st.U), grid.derivative(st.A)
    e4U = np.exp(4.0 * st.U)
    return (st.U_R ** 2 / st.a + st.a * U_t ** 2
            + 0.25 * st.R ** -2 * e4U * (st.A_R ** 2 / st.a + st.a * A_t ** 2))


def energies_k(state: TsymState) -> EnergiesK:
    """Energy density integral, the two energies and the twist holonomy.

    The ``K^2`` term needs the true ``eta``; on states with a placeholder
    ``eta`` it is omitted and ``twist_term_included`` is False.
    """
    grid = state.grid
    D = float(grid.integrate(_d_density(state)))
    if state.eta_given:
        twist = float(grid.integrate(0.25 * state.K ** 2 * state.R ** -4
                                     * np.exp(2.0 * state.eta) / state.a))
    else:
        twist = 0.0
    hol = float(grid.integrate(state.Hconn)) if state.Hconn is not None else 0.0
    Ehat = D + twist
    Etilde = state.R ** 2 * Ehat + 0.5 * state.K * hol
    return EnergiesK(D, Ehat, Etilde, hol, twist, state.eta_given)


def _tilde_rate(st: TsymState) -> float:
    """Right side of the rate identity for the tilde energy."""
    grid = st.grid
    U_t = grid.derivative(st.U)
    e4U = np.exp(4.0 * st.U)
    return float(2.0 * st.R * grid.integrate(st.a * U_t ** 2
                                             + 0.25 * st.R ** -2 * e4U * st.A_R ** 2 / st.a))


def _hat_rate(st: TsymState) -> float:
    """Right side of the rate identity for the hat energy."""
    grid = st.grid
    A_t = grid.derivative(st.A)
    e4U = np.exp(4.0 * st.U)
    out = -2.0 / st.R * grid.integrate(st.U_R ** 2 / st.a
                                       + 0.25 * st.R ** -2 * e4U * st.a * A_t ** 2)
    if st.eta_given:
        out -= st.K ** 2 * st.R ** -5 * grid.integrate(np.exp(2.0 * st.eta) / st.a)
    return float(out)


def _time_derivative(y: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, slice]:
    """Derivative of samples ``y`` along axis 0 and the slice of ``t`` it lives on."""
    h = np.diff(t)
    if len(t) >= 5 and np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        return fd4_derivative(y, h[0]), slice(2, -2)
    return fd2_nonuniform(y, t), slice(1, -1)


def monotonicity_residual(history: TsymHistory, tol: float = 1e-6,
                          sign_tol: float = 1e-12) -> Certificate:
    """Finite-difference rates of both energies against their identities.

    The verdict reports whether the tilde energy is nondecreasing in ``R``;
    ``passed`` additionally requires both identity residuals below ``tol``.
    Residual arrays are kept in ``values`` (they equal the forcing of a
    manufactured non-solution).
    """
    if len(history) < 5:
        raise ValueError(f"need at least 5 history entries, got {len(history)}")
    R = history.R
    order = np.argsort(R)
    states = [history[i] for i in order]
    R = R[order]
    en = [energies_k(st) for st in states]
    Et = np.array([e.Etilde_K for e in en])
    Eh = np.array([e.Ehat_K for e in en])
    dEt, sl = _time_derivative(Et, R)
    dEh, _ = _time_derivative(Eh, R)
    rhs_t = np.array([_tilde_rate(st) for st in states])[sl]
    rhs_h = np.array([_hat_rate(st) for st in states])[sl]
    res_t = dEt - rhs_t
    res_h = dEh - rhs_h
    scale_t = max(np.max(np.abs(rhs_t)), np.max(np.abs(dEt)), 1e-300)
    scale_h = max(np.max(np.abs(rhs_h)), np.max(np.abs(dEh)), 1e-300)
    rel_t = float(np.max(np.abs(res_t)) / scale_t)
    rel_h = float(np.max(np.abs(res_h)) / scale_h)
    steps = np.diff(Et)
    nondecreasing = bool(np.all(steps >= -sign_tol * max(np.max(np.abs(Et)), 1.0)))
    return Certificate(
        name="tsym_monotonicity",
        verdict="nondecreasing" if nondecreasing else "decreasing",
        passed=nondecreasing and rel_t < tol and rel_h < tol,
        metrics={"residual_tilde": rel_t, "residual_hat": rel_h,
                 "min_rate": float(np.min(dEt))},
        values={"R": R, "Etilde_K": Et, "Ehat_K": Eh, "R_inner": R[sl],
                "rate_tilde": dEt, "identity_tilde": rhs_t, "forcing_tilde": res_t,
                "rate_hat": dEh, "identity_hat": rhs_h, "forcing_hat": res_h},
        tolerances={"tol": tol, "sign_tol": sign_tol},
        notes=[] if states[0].eta_given else ["twist term omitted: eta not given"],
    )


# --------------------------------------------------------------------------
# pointwise residuals


@dataclass
class FieldResiduals:
    R: np.ndarray
    twist: np.ndarray | None
    uwave: np.ndarray
    twist_sup: float | None
    uwave_sup: float


def field_residuals(history: TsymHistory) -> FieldResiduals:
    """Twist-potential and U-wave residual fields at the interior times.

    ``R``-derivatives of composite fluxes use three-point centered differences
    of the stored first derivatives; ``theta`` derivatives use the grid scheme.
    The twist residual is None when ``eta`` is a placeholder.
    """
    if len(history) < 3:
        raise ValueError(f"need at least 3 history entries, got {len(history)}")
    grid = history.grid
    R = history.R
    for st in history.states:
        st.need("U_R", "A_R")
    U, A, a = history.stack("U"), history.stack("A"), history.stack("a")
    U_R, A_R = history.stack("U_R"), history.stack("A_R")
    flux = R[:, None] * U_R / a
    dflux = fd2_nonuniform(flux, R)
    inner = slice(1, -1)
    Ri = R[inner][:, None]
    ai, Ui = a[inner], U[inner]
    U_t = grid.derivative(Ui.T).T
    A_t = grid.derivative(A[inner].T).T
    spatial = grid.derivative((Ri * ai * U_t).T).T
    source = 0.5 / Ri * np.exp(4.0 * Ui) * (A_R[inner] ** 2 / ai - ai * A_t ** 2)
    uwave = dflux - spatial - source

    twist = None
    if all(st.eta_given for st in history.states):
        eta = history.stack("eta")
        if all(st.H_R is not None for st in history.states):
            H_R = history.stack("H_R")[inner]
        else:
            H_R = fd2_nonuniform(history.stack("Hconn"), R)
        twist = H_R - history.K * Ri ** -3 / ai * np.exp(2.0 * eta[inner])
    return FieldResiduals(R[inner], twist, uwave,
                          None if twist is None else float(np.max(np.abs(twist))),
                          float(np.max(np.abs(uwave))))


def twist_residual(state: TsymState) -> np.ndarray:
    """``H_R - K R^-3 a^-1 e^{2 eta}`` on a single state with stored ``H_R``."""
    state.need("eta", "H_R")
    return state.H_R - state.K * state.R ** -3 / state.a * np.exp(2.0 * state.eta)


# --------------------------------------------------------------------------
# AVTD quantities


@dataclass
class AvtdResult:
    tau: np.ndarray
    q_avtd: np.ndarray
    q_full: np.ndarray
    source: np.ndarray
    norms: dict[str, np.ndarray]
    holonomy: np.ndarray
    certificates: dict[str, Certificate]

    def certificate_rows(self) -> list[dict]:
        rows = []
        for i, t in enumerate(self.tau):
            rows.append({"tau": float(t), "norm_q_avtd": float(self.norms["q_avtd"][i]),
                         "norm_q_full": float(self.norms["q_full"][i]),
                         "norm_source": float(self.norms["source"][i]),
                         "holonomy": float(self.holonomy[i])})
        return rows


def holonomy_monitor(tau, holonomy, *, window: float = 1.0,
                     slope_margin: float = 1e-3) -> Certificate:
    """Whether the twist holonomy stays bounded below as ``tau`` grows.

    Judged from the least-squares trend over the final ``window``: a
    downward drift steeper than ``slope_margin * (1 + |mean|)`` fails.
    """
    tau = np.asarray(tau, dtype=float)
    hol = np.asarray(holonomy, dtype=float)
    tail = tau >= tau[-1] - window
    slope = float(np.polyfit(tau[tail], hol[tail], 1)[0]) if np.count_nonzero(tail) >= 2 else 0.0
    limit = slope_margin * (1.0 + abs(float(np.mean(hol[tail]))))
    bounded = slope >= -limit
    return Certificate(
        name="holonomy_lower_bound",
        verdict="bounded-below" if bounded else "decreasing",
        passed=bounded,
        metrics={"min": float(np.min(hol)), "tail_slope": slope},
        values={"tau": tau, "holonomy": hol},
        tolerances={"window": window, "slope_margin": slope_margin},
    )


def avtd_quantities(history: TsymHistory, *, window: float = 1.0,
                    slope_margin: float = 0.05, triangle_tol: float = 1e-10) -> AvtdResult:
    """The AVTD combinations, their dual norms and the integrability certificates.

    ``q_avtd = a (a^-1 U_tau)_tau - 1/2 e^{2 tau} e^{4U} A_tau^2`` and
    ``q_full = q_avtd + 1/2 source`` with ``source = e^{4U} a^2 A_theta^2``.
    Each norm squared is weighted by ``e^{2 tau}`` and tested for tail
    integrability.  The implication certificate checks, on the sampled
    history, that a bounded holonomy together with integrable ``source`` and
    ``q_full`` comes with an integrable ``q_avtd``, and that the dual-norm
    triangle inequality ``|q_avtd| <= |q_full| + 1/2 |source|`` holds.
    """
    if len(history) < 10:
        raise ValueError(f"need at least 10 history entries, got {len(history)}")
    grid = history.grid
    tau = history.tau
    order = np.argsort(tau)
    states = [history[i] for i in order]
    tau = tau[order]
    R = np.exp(-tau)
    for st in states:
        st.need("U_R", "A_R")
    U = np.stack([st.U for st in states])
    A = np.stack([st.A for st in states])
    a = np.stack([st.a for st in states])
    U_tau = -R[:, None] * np.stack([st.U_R for st in states])
    A_tau = -R[:, None] * np.stack([st.A_R for st in states])
    hol = np.array([grid.integrate(st.Hconn) if st.Hconn is not None else 0.0
                    for st in states])

    inner = slice(1, -1)
    ti = tau[inner]
    ai, Ui = a[inner], U[inner]
    drift = ai * fd2_nonuniform(U_tau / a, tau)
    e4U = np.exp(4.0 * Ui)
    q_avtd = drift - 0.5 * np.exp(2.0 * ti)[:, None] * e4U * A_tau[inner] ** 2
    A_t = grid.derivative(A[inner].T).T
    source = e4U * ai ** 2 * A_t ** 2
    q_full = q_avtd + 0.5 * source

    norms = {name: np.array([hminus_norm_scalar(q[i], ai[i], grid) for i in range(len(ti))])
             for name, q in (("q_avtd", q_avtd), ("q_full", q_full), ("source", source))}

    certs = {}
    for name in ("source", "q_full", "q_avtd"):
        certs[name] = weighted_tail_integral(ti, norms[name] ** 2, 2.0, window=window,
                                             slope_margin=slope_margin,
                                             name=f"integrability_{name}")
    certs["holonomy"] = holonomy_monitor(ti, hol[inner], window=window)

    gap = norms["q_avtd"] - norms["q_full"] - 0.5 * norms["source"]
    scale = 1.0 + np.maximum(norms["q_full"], norms["source"])
    triangle = float(np.max(gap / scale))
    premise = all(certs[k].passed for k in ("holonomy", "source", "q_full"))
    holds = (not premise or certs["q_avtd"].passed) and triangle <= triangle_tol
    certs["implication"] = Certificate(
        name="avtd_implication",
        verdict=("holds" if holds else "violated") if premise else
        ("vacuous" if triangle <= triangle_tol else "violated"),
        passed=holds,
        metrics={"triangle_excess": triangle, "premise": premise,
                 "conclusion": certs["q_avtd"].passed},
        tolerances={"triangle_tol": triangle_tol},
    )
    return AvtdResult(ti, q_avtd, q_full, source, norms, hol[inner], certs)


# --------------------------------------------------------------------------
# history files


def write_history(path, history: TsymHistory) -> None:
    """One JSON header line, then per time the present fields as ``<f8`` blocks."""
    names = history[0].present()
    for st in history.states:
        if st.present() != names:
            raise ValueError("history entries carry different field sets")
    header = {"format": HISTORY_FORMAT, "n_y": history.grid.n, "L_c": history.grid.length,
              "scheme": history.grid.scheme, "K": history.K,
              "times": [float(r) for r in history.R], "time_variable": "R",
              "fields": names, "eta_given": bool(history[0].eta_given), "dtype": "<f8"}
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for st in history.states:
            for name in names:
                fh.write(np.ascontiguousarray(getattr(st, name), dtype="<f8").tobytes())


def read_history(path) -> TsymHistory:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != HISTORY_FORMAT:
            raise ValueError(f"not a tsym history file: {header.get('format')!r}")
        grid = CircleGrid(int(header["n_y"]), float(header["L_c"]), header["scheme"])
        names = header["fields"]
        unknown = set(names) - set(FIELD_NAMES + DERIVATIVE_NAMES)
        if unknown:
            raise ValueError(f"unknown fields in history: {sorted(unknown)}")
        states = []
        for R in header["times"]:
            vals = {}
            for name in names:
                buf = fh.read(8 * grid.n)
                if len(buf) != 8 * grid.n:
                    raise ValueError("history file truncated")
                vals[name] = np.frombuffer(buf, dtype="<f8").copy()
            states.append(TsymState(grid=grid, R=float(R), K=float(header["K"]),
                                    eta_given=bool(header["eta_given"]), **vals))
        if fh.read(1):
            raise ValueError("trailing bytes after history data")
    return TsymHistory(states)


def export_csv(path, result: AvtdResult, history: TsymHistory) -> None:
    """Per-time table of energies, holonomy, dual norms and weighted integrands."""
    by_tau = {round(st.tau, 12): energies_k(st) for st in history.states}
    integrand = {k: result.certificates[k].values["integrand"]
                 for k in ("source", "q_full", "q_avtd")}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "Ehat_K", "Etilde_K", "holonomy", "norm_q_avtd", "norm_q_full",
                    "norm_source", "integrand_source", "integrand_q_full",
                    "integrand_q_avtd"])
        for i, t in enumerate(result.tau):
            e = by_tau[round(float(t), 12)]
            w.writerow(["%.17g" % v for v in (
                t, e.Ehat_K, e.Etilde_K, result.holonomy[i], result.norms["q_avtd"][i],
                result.norms["q_full"][i], result.norms["source"][i],
                integrand["source"][i], integrand["q_full"][i], integrand["q_avtd"][i])])


def with_derivatives_from_tau(state: TsymState, **tau_derivs) -> TsymState:
    """Copy of ``state`` with derivatives given in ``tau`` converted to ``R``."""
    conv = {f"{name[:-4]}_R" if name.endswith("_tau") else name: -np.asarray(v) / state.R
            for name, v in tau_derivs.items()}
    return replace(state, **conv)
