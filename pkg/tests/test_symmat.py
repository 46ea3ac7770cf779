import numpy as np
import pytest
import scipy.linalg

from avtdlab import symmat
from avtdlab.circlefield import CircleGrid


def random_spd(rng, N, shape=()):
    X = rng.normal(size=shape + (N, N))
    return X @ np.swapaxes(X, -1, -2) + N * np.eye(N)


def random_self_adjoint(rng, G):
    S = rng.normal(size=G.shape)
    return np.linalg.solve(G, symmat.sym(S))


def smooth_field(grid, N, seed=0, amp=0.4):
    rng = np.random.default_rng(seed)
    y = grid.points
    X = np.zeros((grid.n, N, N))
    for k in (1, 2, 3):
        C = rng.normal(size=(N, N)) / k ** 2
        D = rng.normal(size=(N, N)) / k ** 2
        X += amp * (np.cos(k * y)[:, None, None] * C + np.sin(k * y)[:, None, None] * D)
    return symmat.eig_apply(symmat.sym(X), np.exp)


def test_vtd_geodesic_identity_cases():
    assert np.allclose(symmat.vtd_geodesic(np.eye(3), np.zeros((3, 3)), 2.7), np.eye(3))
    G = symmat.vtd_geodesic(np.eye(2), np.diag([0.3, -1.2]), 1.5)
    assert np.allclose(G, np.diag([np.exp(0.45), np.exp(-1.8)]), rtol=1e-14)


def test_vtd_geodesic_determinant_against_lu():
    rng = np.random.default_rng(1)
    G0 = random_spd(rng, 3)
    W = random_self_adjoint(rng, G0)
    for s in np.linspace(-2, 2, 20):
        G = symmat.vtd_geodesic(G0, W, s)
        lu, piv = scipy.linalg.lu_factor(G)
        swaps = np.sum(piv != np.arange(len(piv)))
        lu_det = (-1) ** swaps * np.prod(np.diag(lu))
        assert lu_det == pytest.approx(np.linalg.det(G0) * np.exp(s * np.trace(W)), rel=1e-10)
        assert np.min(np.linalg.eigvalsh(G)) > 0


def test_vtd_geodesic_solves_vtd_equation():
    rng = np.random.default_rng(2)
    G0 = random_spd(rng, 3)
    W = random_self_adjoint(rng, G0)
    h = 1e-3

    def log_derivative(s):
        Gs = [symmat.vtd_geodesic(G0, W, s + k * h) for k in (-2, -1, 0, 1, 2)]
        dG = (Gs[0] - 8 * Gs[1] + 8 * Gs[3] - Gs[4]) / (12 * h)
        return np.linalg.solve(Gs[2], dG)

    for s in (-1.0, 0.0, 0.7):
        assert np.allclose(log_derivative(s), W, atol=1e-9)
        second = (log_derivative(s + h) - log_derivative(s - h)) / (2 * h)
        assert np.linalg.norm(second) < 1e-8 * max(np.linalg.norm(W) ** 2, 1.0)


def test_vtd_geodesic_rejects_non_self_adjoint():
    W = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(symmat.NotSelfAdjointError, match="violation"):
        symmat.vtd_geodesic(np.eye(2), W, 1.0)


def test_self_adjoint_defect_examples():
    rng = np.random.default_rng(3)
    G = random_spd(rng, 3, (16,))
    assert symmat.self_adjoint_defect(random_self_adjoint(rng, G), G) < 1e-13
    assert symmat.self_adjoint_defect(2.5 * np.broadcast_to(np.eye(3), G.shape), G) < 1e-14
    A = rng.normal(size=(3, 3))
    A = A - A.T
    F = np.linalg.norm(A)
    assert symmat.self_adjoint_defect(A[None], np.eye(3)[None]) == pytest.approx(
        2 * F / (1 + F), rel=1e-13)


def test_self_adjoint_defect_shape_mismatch():
    with pytest.raises(ValueError):
        symmat.self_adjoint_defect(np.zeros((4, 2, 2)), np.broadcast_to(np.eye(3), (4, 3, 3)))


def test_covariant_dy_examples():
    grid = CircleGrid(64)
    y = grid.points
    G = np.broadcast_to(np.diag([2.0, 0.5]), (64, 2, 2)).copy()
    sigma = np.sin(y)[:, None, None] * np.eye(2)
    assert np.allclose(symmat.covariant_dy(sigma, G, grid), np.cos(y)[:, None, None] * np.eye(2),
                       atol=1e-12)
    G2 = smooth_field(grid, 2)
    assert np.max(np.abs(symmat.covariant_dy(3 * np.broadcast_to(np.eye(2), G2.shape), G2, grid))) < 1e-12


def test_covariant_dy_preserves_self_adjointness_under_refinement():
    defects = []
    for n in (32, 64, 128, 512):
        grid = CircleGrid(n)
        G = smooth_field(grid, 3, seed=5)
        S = smooth_field(grid, 3, seed=6)
        sigma = np.linalg.solve(G, S)
        defects.append(symmat.self_adjoint_defect(symmat.covariant_dy(sigma, G, grid), G))
    assert defects[-1] < 1e-8
    assert defects[-1] <= defects[0]


def test_covariant_dy_integration_by_parts():
    grid = CircleGrid(128)
    G = smooth_field(grid, 2, seed=7)
    s1 = np.linalg.solve(G, smooth_field(grid, 2, seed=8))
    s2 = np.linalg.solve(G, smooth_field(grid, 2, seed=9))
    d1, d2 = symmat.covariant_dy(s1, G, grid), symmat.covariant_dy(s2, G, grid)
    total = grid.integrate(np.trace(d1 @ s2 + s1 @ d2, axis1=1, axis2=2))
    assert abs(total) < 1e-10


def test_check_spd_fails_loudly():
    with pytest.raises(symmat.PositivityError):
        symmat.check_spd(np.diag([1.0, -1e-3]))
    G = symmat.check_spd(np.array([[2.0, 1.0 + 1e-15], [1.0, 2.0]]))
    assert np.array_equal(G, G.T)


def test_batch_inverse_and_determinant():
    rng = np.random.default_rng(10)
    for N in (1, 2, 3, 4):
        G = random_spd(rng, N, (7,))
        assert np.allclose(symmat.batch_inv(G) @ G, np.eye(N), atol=1e-12)
        assert np.allclose(symmat.batch_det(G), np.linalg.det(G), rtol=1e-12)


def test_packers_round_trip():
    pack, unpack = symmat.packers(3)
    rng = np.random.default_rng(11)
    S = symmat.sym(rng.normal(size=(5, 3, 3)))
    assert np.allclose(unpack(pack(S)), S, rtol=1e-15, atol=0)
    x = pack(S)
    assert np.allclose(np.sum(x * x, axis=-1), np.sum(S * S, axis=(1, 2)), rtol=1e-14)
