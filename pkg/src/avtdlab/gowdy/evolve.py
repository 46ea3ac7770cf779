"""Method-of-lines evolution of the Gowdy matrix wave equation.

In ``s = -ln T`` the gauge-reduced system is::

    G_s      = G Atilde
    Atilde_s = exp(-2 s) d_y(G^-1 G_y)

advanced with classical RK4, ``ds = min(cfl * dy * exp(s), ds_max)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from .. import symmat
from .state import GowdyState

log = logging.getLogger(__name__)

CFL_LIMIT = {"spectral": 0.9, "fd4": 2.0}


class EvolutionError(RuntimeError):
    pass


@dataclass
class Trajectory:
    states: list[GowdyState]
    steps: int = 0
    max_renormalization: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def s(self) -> np.ndarray:
        return np.array([st.s for st in self.states])

    @property
    def T(self) -> np.ndarray:
        return np.exp(-self.s)

    @property
    def grid(self):
        return self.states[0].grid

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]


def rhs(G: np.ndarray, A: np.ndarray, s: float, grid) -> tuple[np.ndarray, np.ndarray]:
    B = symmat.batch_inv(G) @ grid.derivative(G)
    dA = grid.derivative(B)
    # d_y tr(B) = d_y^2 ln det G vanishes identically; drop its discretization error
    dA -= (np.trace(dA, axis1=1, axis2=2) / G.shape[1])[:, None, None] * np.eye(G.shape[1])
    return G @ A, np.exp(-2.0 * s) * dA


def _renormalize(G, A, s, where, check_spd=True):
    """Restore det G = exp(-2s) and exact G-self-adjointness of Atilde."""
    N = G.shape[1]
    G = symmat.sym(G)
    det = symmat.batch_det(G)
    if np.any(det <= 0):
        i = int(np.argmin(det))
        raise EvolutionError(f"SPD loss at s={s:.6g}, y-index {i}{where}")
    c = (np.exp(-2.0 * s) / det) ** (1.0 / N)
    corr = float(np.max(np.abs(c - 1.0)))
    G = G * c[:, None, None]
    if check_spd:
        lam_min = np.linalg.eigvalsh(G)[:, 0]
        tr = np.trace(G, axis1=1, axis2=2)
        if np.any(lam_min < 1e-12 * tr):
            i = int(np.argmin(lam_min / tr))
            raise EvolutionError(f"SPD loss at s={s:.6g}, y-index {i}: "
                                 f"min eigenvalue {lam_min[i]:.3e}")
    A = symmat.batch_inv(G) @ symmat.sym(G @ A)
    return G, A, corr


def evolve(state: GowdyState, s_end: float, cfl: float = 0.5, *, outputs=None,
           ds_max: float = 2e-3, max_correction: float = 1e-6,
           spd_check_every: int = 10) -> Trajectory:
    """Integrate from ``state.s`` to ``s_end`` and sample at ``outputs``.

    ``outputs`` defaults to just the endpoints.  Steps are shortened to land
    exactly on every output time.  Positive determinant is checked every
    step; the full eigenvalue test every ``spd_check_every`` steps.
    """
    grid = state.grid
    limit = CFL_LIMIT[grid.scheme]
    if not 0 < cfl <= limit:
        raise ValueError(f"cfl={cfl} outside (0, {limit}] for the {grid.scheme} scheme")
    s0 = float(state.s)
    direction = 1.0 if s_end >= s0 else -1.0
    if outputs is None:
        outputs = [s0, s_end]
    outputs = sorted(set(float(o) for o in outputs), reverse=direction < 0)
    for o in outputs:
        if (o - s0) * direction < -1e-14 or (o - s_end) * direction > 1e-14:
            raise ValueError(f"output time {o} outside [{s0}, {s_end}]")

    G, A, s = state.G.copy(), state.Atilde.copy(), s0
    traj = Trajectory([])
    steps = 0
    max_corr = 0.0
    for target in outputs:
        while (target - s) * direction > 1e-13:
            s_lo = s if direction > 0 else s - ds_max
            ds = min(cfl * grid.dy * np.exp(s_lo), ds_max)
            ds = min(ds, abs(target - s)) * direction
            if abs(target - (s + ds)) < 1e-12:
                ds = target - s
            k1 = rhs(G, A, s, grid)
            k2 = rhs(G + 0.5 * ds * k1[0], A + 0.5 * ds * k1[1], s + 0.5 * ds, grid)
            k3 = rhs(G + 0.5 * ds * k2[0], A + 0.5 * ds * k2[1], s + 0.5 * ds, grid)
            k4 = rhs(G + ds * k3[0], A + ds * k3[1], s + ds, grid)
            G = G + ds / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            A = A + ds / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            s = s + ds
            G, A, corr = _renormalize(G, A, s, "", check_spd=steps % spd_check_every == 0)
            max_corr = max(max_corr, corr)
            if corr > max_correction:
                raise EvolutionError(f"determinant renormalization {corr:.3e} at s={s:.6g} "
                                     f"exceeds {max_correction:.1e}; reduce the step")
            steps += 1
        s = target
        traj.states.append(GowdyState(grid, G.copy(), A.copy(), s))
    traj.steps = steps
    traj.max_renormalization = max_corr
    log.debug("gowdy evolve: %d steps, max det correction %.3e", steps, max_corr)
    return traj
