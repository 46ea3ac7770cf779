"""Homogeneous multi-block CMC Einstein flows in Hubble time.

A flow is a product of blocks, each a fixed unit-Einstein metric ``g_i`` of
dimension ``n_i`` with ``Ric(g_i) = eps_i (n_i - 1) g_i``, warped by a scale
``a_i(t)``: ``h(t) = sum a_i^2 g_i``.  The second fundamental form is
``K = sum kappa_i a_i^2 g_i``.  Time is the Hubble time ``t = -n/H``, in
which the CMC lapse is algebraic, ``L = (n/t^2) / |K|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

log = logging.getLogger(__name__)


class ConstraintError(ValueError):
    """Initial data violate the Hamiltonian constraint or the Hubble gauge."""


class ConstraintDriftError(RuntimeError):
    """The Hamiltonian constraint drifted past tolerance during evolution."""


class SingularityError(RuntimeError):
    """A block scale reached zero inside the requested interval."""

    def __init__(self, message: str, crossing_time: float):
        super().__init__(message)
        self.crossing_time = crossing_time


@dataclass(frozen=True)
class Block:
    """A unit-Einstein factor: dimension, Einstein sign, reference volume."""

    n: int
    eps: int = 0
    vol0: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"block dimension must be >= 1, got {self.n}")
        if self.eps not in (-1, 0, 1):
            raise ValueError(f"Einstein sign must be -1, 0 or +1, got {self.eps}")
        if not self.vol0 > 0:
            raise ValueError("reference volume must be positive")


def block_arrays(blocks) -> tuple[np.ndarray, np.ndarray, float]:
    dims = np.array([b.n for b in blocks], dtype=float)
    ric = np.array([b.eps * (b.n - 1) for b in blocks], dtype=float)
    vol0 = float(np.prod([b.vol0 for b in blocks]))
    return dims, ric, vol0


def hubble_lapse(t, kappa, dims) -> np.ndarray:
    """``L = (n/t^2) / |K|^2``, the homogeneous CMC lapse in Hubble time."""
    t = np.asarray(t, dtype=float)
    K2 = np.sum(dims * kappa ** 2, axis=-1)
    return (dims.sum() / t ** 2) / K2


@dataclass
class MultiWarpedFlow:
    """Instantaneous data ``(a_i, kappa_i)`` at Hubble time ``t``."""

    blocks: tuple
    a: np.ndarray
    kappa: np.ndarray
    t: float

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        self.a = np.asarray(self.a, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=float)
        if self.a.shape != (len(self.blocks),) or self.kappa.shape != self.a.shape:
            raise ValueError("a and kappa need one entry per block")
        if not np.all(self.a > 0):
            raise ValueError("block scales must be positive")
        if not self.t > 0:
            raise ValueError("Hubble time must be positive")

    @property
    def dims(self) -> np.ndarray:
        return block_arrays(self.blocks)[0]

    @property
    def n(self) -> int:
        return int(self.dims.sum())

    @property
    def H(self) -> float:
        return float(np.sum(self.dims * self.kappa))

    @property
    def K2(self) -> float:
        return float(np.sum(self.dims * self.kappa ** 2))

    @property
    def K0sq(self) -> float:
        return self.K2 - self.H ** 2 / self.n

    @property
    def R(self) -> float:
        dims, ric, _ = block_arrays(self.blocks)
        return float(np.sum(dims * ric / self.a ** 2))

    @property
    def L(self) -> float:
        return float(hubble_lapse(self.t, self.kappa, self.dims))

    @property
    def vol(self) -> float:
        dims, _, vol0 = block_arrays(self.blocks)
        return float(np.prod(self.a ** dims) * vol0)

    def constraint_errors(self) -> dict[str, float]:
        """Hamiltonian residual over ``H^2``, Hubble-gauge defect, momentum (zero)."""
        H = self.H
        ham = self.R - self.K0sq + (1.0 - 1.0 / self.n) * H ** 2
        return {"hamiltonian": abs(ham) / H ** 2,
                "hubble": abs(H + self.n / self.t) * self.t / self.n,
                "momentum": 0.0}

    def check(self, ham_tol: float = 1e-9, hubble_tol: float = 1e-10) -> None:
        err = self.constraint_errors()
        if err["hamiltonian"] > ham_tol:
            raise ConstraintError(f"Hamiltonian residual {err['hamiltonian']:.3e} > {ham_tol:g}")
        if err["hubble"] > hubble_tol:
            raise ConstraintError(f"not in Hubble gauge: |H + n/t| t/n = {err['hubble']:.3e}")


@dataclass
class CmcTrajectory:
    """Samples of a multi-block flow; ``a`` and ``kappa`` are ``(len(t), blocks)``."""

    blocks: tuple
    t: np.ndarray
    a: np.ndarray
    kappa: np.ndarray
    lapse: np.ndarray | None = None

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        self.t = np.asarray(self.t, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=float)
        if self.lapse is None:
            self.lapse = hubble_lapse(self.t, self.kappa, self.dims)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> MultiWarpedFlow:
        return MultiWarpedFlow(self.blocks, self.a[i], self.kappa[i], float(self.t[i]))

    @property
    def dims(self) -> np.ndarray:
        return block_arrays(self.blocks)[0]

    @property
    def n(self) -> int:
        return int(self.dims.sum())

    @property
    def H(self) -> np.ndarray:
        return self.kappa @ self.dims

    @property
    def K2(self) -> np.ndarray:
        return (self.kappa ** 2) @ self.dims

    @property
    def K0sq(self) -> np.ndarray:
        return self.K2 - self.H ** 2 / self.n

    @property
    def R(self) -> np.ndarray:
        dims, ric, _ = block_arrays(self.blocks)
        return (ric * dims / self.a ** 2).sum(axis=1)

    @property
    def vol(self) -> np.ndarray:
        dims, _, vol0 = block_arrays(self.blocks)
        return np.prod(self.a ** dims, axis=1) * vol0

    @property
    def exponents(self) -> np.ndarray:
        """Local Kasner-type exponents ``d ln a_i / d ln t = -L kappa_i t``."""
        return -self.lapse[:, None] * self.kappa * self.t[:, None]

    def hamiltonian_residual(self) -> np.ndarray:
        return np.abs(self.R - self.K0sq + (1.0 - 1.0 / self.n) * self.H ** 2) / self.H ** 2

    def hubble_drift(self) -> np.ndarray:
        return np.abs(self.H + self.n / self.t) * self.t / self.n

    def normalized_volume_density(self) -> np.ndarray:
        """``vol / t^n`` per unit reference volume (block-scale noncollapsing ratio)."""
        return self.vol / self.t ** self.n


def _rhs(x, y, dims, ric):
    """Derivatives in ``x = ln t`` of ``y = (a, kappa)``."""
    nb = len(dims)
    a, kappa = y[:nb], y[nb:]
    t = np.exp(x)
    H = np.dot(dims, kappa)
    L = hubble_lapse(t, kappa, dims)
    da = -t * L * kappa * a
    dk = t * L * (H * kappa + ric / a ** 2)
    return np.concatenate([da, dk])


def evolve_cmc(flow: MultiWarpedFlow, t_end: float, steps: int = 2000, *,
               drift_tol: float = 1e-6) -> CmcTrajectory:
    """RK4 in ``ln t`` from ``flow.t`` to ``t_end`` with ``steps`` equal steps.

    Returns all ``steps + 1`` samples (uniform in ``ln t``).  The mean
    curvature is evolved, not imposed, so ``H = -n/t`` is a check.
    """
    flow.check()
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if steps < 1:
        raise ValueError("need at least one step")
    dims, ric, _ = block_arrays(flow.blocks)
    nb = len(dims)
    xs = np.linspace(np.log(flow.t), np.log(t_end), steps + 1)
    h = xs[1] - xs[0]
    Y = np.empty((steps + 1, 2 * nb))
    Y[0] = np.concatenate([flow.a, flow.kappa])
    for i in range(steps):
        x, y = xs[i], Y[i]
        k1 = _rhs(x, y, dims, ric)
        k2 = _rhs(x + h / 2, y + h / 2 * k1, dims, ric)
        k3 = _rhs(x + h / 2, y + h / 2 * k2, dims, ric)
        k4 = _rhs(x + h, y + h * k3, dims, ric)
        ynew = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        a = ynew[:nb]
        if not np.all(np.isfinite(ynew)) or np.any(a <= 0):
            prev = y[:nb]
            j = int(np.argmin(np.where(np.isfinite(a), a, -np.inf)))
            frac = prev[j] / (prev[j] - a[j]) if np.isfinite(a[j]) and prev[j] != a[j] else 0.5
            t_cross = float(np.exp(x + np.clip(frac, 0.0, 1.0) * h))
            raise SingularityError(f"block {j} scale reached zero near t = {t_cross:.6g}", t_cross)
        Y[i + 1] = ynew
        kap = ynew[nb:]
        H = np.dot(dims, kap)
        K2 = np.dot(dims, kap ** 2)
        R = np.sum(dims * ric / a ** 2)
        ham = abs(R - (K2 - H ** 2 / dims.sum()) + (1 - 1 / dims.sum()) * H ** 2) / H ** 2
        if ham > drift_tol:
            raise ConstraintDriftError(f"Hamiltonian drift {ham:.3e} at t = {np.exp(xs[i + 1]):.6g}")
    return CmcTrajectory(flow.blocks, np.exp(xs), Y[:, :nb], Y[:, nb:])


def rescale_flow(flow: MultiWarpedFlow, s: float) -> MultiWarpedFlow:
    """Parabolic rescaling: ``h -> s^-2 h(s u)``, so ``a/s``, ``s kappa``, ``u = t/s``."""
    if not s > 0:
        raise ValueError("rescaling factor must be positive")
    return MultiWarpedFlow(flow.blocks, flow.a / s, flow.kappa * s, flow.t / s)


def rescale_trajectory(traj: CmcTrajectory, s: float) -> CmcTrajectory:
    if not s > 0:
        raise ValueError("rescaling factor must be positive")
    return CmcTrajectory(traj.blocks, traj.t / s, traj.a / s, traj.kappa * s, traj.lapse.copy())
