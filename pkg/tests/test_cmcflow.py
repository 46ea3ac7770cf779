import math

import numpy as np
import pytest

from avtdlab import cmcflow
from avtdlab.cmcflow import (Block, ConeFamily, ConeTorusFamily, KasnerFamily, MatrixFlow,
                             MultiWarpedFlow, RescaledFamily, make_family)

import oracles

KASNER = (2 / 3, 2 / 3, -1 / 3)


def negative_curvature_flow(weights, t, blocks=((2, -1), (1, 0))):
    """Flow at Hubble time ``t`` with ``kappa`` proportional to ``weights`` and ``R <= 0``.

    The first block carries the curvature; its scale is solved from the constraint.
    """
    dims = np.array([b[0] for b in blocks], dtype=float)
    n = dims.sum()
    w = np.asarray(weights, dtype=float)
    kappa = w * (-n / t) / np.dot(dims, w)
    H = np.dot(dims, kappa)
    R = np.dot(dims, kappa ** 2) - H ** 2
    assert R < 0
    d0, e0 = blocks[0]
    a = np.ones(len(blocks))
    a[0] = math.sqrt(e0 * d0 * (d0 - 1) / R)
    return MultiWarpedFlow([Block(d, e) for d, e in blocks], a, kappa, t)


def test_kasner_family_values():
    fam = make_family("kasner", p=KASNER)
    t = np.geomspace(0.1, 1, 7)
    traj = fam.sample(t)
    assert np.allclose(traj.lapse, 1 / 3, rtol=1e-15)
    assert np.all(traj.R == 0)
    assert np.allclose(traj.K2, 9 / t ** 2, rtol=1e-13)
    assert np.allclose(traj.H, -3 / t, rtol=1e-13)
    with pytest.raises(ValueError):
        make_family("kasner", p=(0.5, 0.5, 0.0))


def test_cone_family_values():
    fam = make_family("cone", n=3)
    traj = fam.sample(np.geomspace(0.1, 1, 11))
    assert np.allclose(traj.H, -3 / traj.t, rtol=1e-15)
    Vn = (-traj.H) ** 3 * traj.vol
    assert np.ptp(Vn) / Vn[0] < 1e-10
    assert np.all(traj.lapse == 1.0)


def test_constraints_hold_on_families():
    for fam in (ConeFamily(3), ConeTorusFamily(2, 1), KasnerFamily(KASNER),
                make_family("kantowski_sachs", mass=1.0)):
        for t in (0.01, 0.3, 2.0):
            fam.state(t).check()


def test_unknown_family_and_bad_initial_data():
    with pytest.raises(ValueError):
        make_family("taub")
    bad = MultiWarpedFlow([Block(3, 0)], [1.0], [-0.5], 2.0)
    with pytest.raises(cmcflow.ConstraintError):
        cmcflow.evolve_cmc(bad, 1.0)


def test_evolve_reproduces_kasner():
    fam = KasnerFamily(KASNER, scales=[1.3, 0.7, 2.0])
    traj = cmcflow.evolve_cmc(fam.state(1.0), 0.1, steps=2000)
    exact = fam.sample(traj.t)
    assert np.max(np.abs(traj.a / exact.a - 1)) < 1e-9
    assert np.max(np.abs(traj.kappa / exact.kappa - 1)) < 1e-9
    assert np.max(traj.hubble_drift()) < 1e-10


def test_evolve_keeps_cone_self_similar():
    traj = cmcflow.evolve_cmc(ConeFamily(3).state(1.0), 0.1, steps=2000)
    assert np.allclose(traj.a[:, 0], traj.t, rtol=1e-7, atol=0)
    assert np.allclose(traj.lapse, 1.0, rtol=1e-7, atol=0)


@pytest.mark.parametrize("steps", [1000, 2000])
def test_evolve_matches_kantowski_sachs(steps):
    fam = make_family("kantowski_sachs", mass=1.0)
    traj = cmcflow.evolve_cmc(fam.state(1.0), 0.1, steps=steps)
    exact = fam.sample([0.1])
    assert np.max(np.abs(traj.a[-1] / exact.a[0] - 1)) < 1e-7
    assert np.max(np.abs(traj.kappa[-1] / exact.kappa[0] - 1)) < 1e-7
    assert traj.lapse[-1] == pytest.approx(exact.lapse[0], rel=1e-7)


def test_evolve_constraint_and_hubble_drift():
    flow = negative_curvature_flow([1.0, 2.5], 1.0, ((3, -1), (2, 0)))
    traj = cmcflow.evolve_cmc(flow, 0.1, steps=2000)
    assert np.max(traj.hubble_drift()) < 1e-10
    assert np.max(traj.hamiltonian_residual()) < 1e-9


def test_monotone_quantities_examples():
    t = np.geomspace(0.1, 1, 201)
    cone = cmcflow.monotone_quantities(ConeFamily(3).sample(t))
    assert cone.passed and cone.metrics["Vn_constant"] and cone.metrics["equality_chain"]
    kas = cmcflow.monotone_quantities(KasnerFamily(KASNER).sample(t))
    assert kas.passed and kas.metrics["V1_constant"] and not kas.metrics["Vn_constant"]
    assert np.all(np.diff(kas.values["V_n"]) < 0)
    ct = cmcflow.monotone_quantities(ConeTorusFamily(2, 1).sample(t))
    assert ct.passed and ct.metrics["R_nonpositive"]
    assert np.all(np.diff(ct.values["V_1"]) > 0)
    assert ct.metrics["residual_V1"] < 1e-6 and ct.metrics["residual_Vn"] < 1e-6


def test_monotone_quantities_on_evolved_flow():
    traj = cmcflow.evolve_cmc(negative_curvature_flow([1.0, 3.0], 2.0), 0.2, steps=800)
    cert = cmcflow.monotone_quantities(traj)
    assert cert.passed
    assert cert.metrics["Vn_nonincreasing"] and cert.metrics["V1_nondecreasing"]


def test_monotone_needs_five_samples():
    with pytest.raises(ValueError):
        cmcflow.monotone_quantities(ConeFamily(3).sample([0.5, 1.0]))


def test_lapse_bounds():
    for w in ([1.0, 3.0], [1.0, 0.2], [2.0, -0.3]):
        traj = cmcflow.evolve_cmc(negative_curvature_flow(w, 1.0), 0.1, steps=400)
        cert = cmcflow.lapse_bounds(traj)
        assert cert.passed and cert.metrics["R_nonpositive"]
        assert 1 / 3 - 1e-12 <= cert.metrics["L_min"] and cert.metrics["L_max"] <= 1 + 1e-12
    fake = KasnerFamily(KASNER).sample(np.geomspace(0.1, 1, 5))
    fake.lapse = fake.lapse * 0.5
    assert not cmcflow.lapse_bounds(fake).passed


def test_curvature_integral_check():
    traj = cmcflow.evolve_cmc(negative_curvature_flow([1.0, 2.0], 1.0), 0.1, steps=1000)
    cert = cmcflow.curvature_integral_check(traj)
    assert cert.passed and cert.metrics["relative_error"] < 1e-8
    assert cert.metrics["V1_change"] > 0


def test_dvol0_examples():
    fam = KasnerFamily(KASNER, scales=[2.0, 0.5, 3.0], vol0=[1.0, 2.0, 1.5])
    d = cmcflow.dvol0_limit(fam, use_closed_form=False, t0=1.0)
    assert d.value == pytest.approx(3 * 3.0 * 3.0, rel=1e-12) and not d.is_zero
    assert cmcflow.dvol0_limit(fam).closed_form
    assert cmcflow.dvol0_limit(ConeFamily(3)).is_zero
    assert cmcflow.dvol0_limit(ConeFamily(3), use_closed_form=False, t0=1.0).is_zero
    assert cmcflow.dvol0_limit(ConeTorusFamily(2, 1)).is_zero
    with pytest.raises(cmcflow.HypothesisError):
        cmcflow.dvol0_limit(make_family("kantowski_sachs", mass=1.0))


def test_rescale_examples():
    u = np.geomspace(0.5, 2, 9)
    cone = ConeFamily(3)
    r = cmcflow.rescale(cone, 0.01).sample(u)
    assert np.allclose(r.a, cone.sample(u).a, rtol=1e-15)
    assert np.allclose(r.kappa, cone.sample(u).kappa, rtol=1e-15)
    fam = KasnerFamily(KASNER)
    a = RescaledFamily(RescaledFamily(fam, 0.3), 0.02).fields(u)
    b = RescaledFamily(fam, 0.3 * 0.02).fields(u)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    kr = cmcflow.rescale(fam, 0.05).sample(u)
    assert np.allclose(kr.exponents, np.array(KASNER), rtol=1e-13)
    assert np.max(kr.hubble_drift()) < 1e-14
    flow = fam.state(0.4)
    assert np.allclose(cmcflow.rescale(cmcflow.rescale(flow, 2.0), 0.5).a, flow.a, rtol=1e-15)
    with pytest.raises(ValueError):
        cmcflow.rescale(flow, -1.0)


def test_kantowski_sachs_rescaling_limit():
    fam = make_family("kantowski_sachs", mass=1.0)
    traj = RescaledFamily(fam, 1e-4).sample([1.0])
    # circle block then sphere block; Kasner exponents diag(-1/3, 2/3, 2/3)
    assert traj.exponents[0] == pytest.approx([-1 / 3, 2 / 3], abs=1e-3)


def test_kasner_reconstruct_synthetic():
    M = np.diag(KASNER)
    theta = 0.4
    c, s = math.cos(theta), math.sin(theta)
    hhat = np.array([[2.0 * c * c + s * s, (2.0 - 1.0) * c * s, 0.0],
                     [(2.0 - 1.0) * c * s, 2.0 * s * s + c * c, 0.0],
                     [0.0, 0.0, 0.7]])
    fam = cmcflow.kasner_matrix_family(M, hhat)
    fit = cmcflow.kasner_reconstruct(fam.sample(np.geomspace(0.01, 1, 9)))
    assert fit.certificate.passed
    assert np.allclose(fit.M, M, atol=1e-10)
    assert np.allclose(fit.hhat, hhat, rtol=1e-10)
    assert fit.certificate.metrics["trace_M"] == pytest.approx(1, abs=1e-9)
    assert fit.certificate.metrics["trace_M2"] == pytest.approx(1, abs=1e-9)


def test_kasner_reconstruct_non_diagonal_M():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    M = Q @ np.diag(KASNER) @ Q.T
    fit = cmcflow.kasner_reconstruct(cmcflow.kasner_matrix_family(M).sample([0.1, 0.3, 1.0, 3.0]))
    assert fit.certificate.passed and np.allclose(fit.M, M, atol=1e-10)


def test_kasner_reconstruct_flags_perturbed_history():
    fam = cmcflow.kasner_matrix_family(np.diag(KASNER))
    rng = np.random.default_rng(5)
    hist = []
    for f in fam.sample(np.geomspace(0.1, 1, 6)):
        noise = rng.normal(size=(3, 3))
        h = f.hmat * (1 + 1e-3 * (noise + noise.T) / 2)
        hist.append(MatrixFlow(h, f.Kmat, f.t))
    fit = cmcflow.kasner_reconstruct(hist)
    assert not fit.certificate.passed
    assert 1e-4 < fit.certificate.metrics["M_variation"] < 1e-1


def test_kasner_reconstruct_rejects_curved_input():
    f = MatrixFlow(np.eye(3), -np.eye(3), 3.0, R=-1.0)
    with pytest.raises(ValueError):
        cmcflow.kasner_reconstruct([f, f, f])


def test_curvature_report_kasner_against_tensor_oracle():
    rep = cmcflow.curvature_report(KasnerFamily(KASNER), [0.2, 1.0])
    expected = oracles.kasner_rm_hubble(KASNER)
    assert rep.samples == pytest.approx([expected, expected], rel=1e-6)
    assert rep.type_i_constant == pytest.approx(expected, rel=1e-6)


def test_curvature_report_flat_kasner_and_cone():
    assert cmcflow.curvature_report(KasnerFamily((1.0, 0.0, 0.0)), [0.1, 1.0]).type_i_constant < 1e-8
    rep = cmcflow.curvature_report(ConeFamily(3), [0.01, 0.1, 1.0])
    assert np.ptp(rep.samples) < 1e-6
    with pytest.raises(ValueError):
        cmcflow.curvature_report(ConeFamily(3), [0.0])


def test_causal_radius_kasner_closed_form():
    fam = KasnerFamily(KASNER)
    for block, p in enumerate(KASNER):
        for lo, hi in ((0.1, 1.0), (0.0, 0.5)):
            r = cmcflow.causal_radius(fam, block, lo, hi)
            assert r.finite
            assert r.value == pytest.approx(oracles.kasner_radius(p, 3, lo, hi), rel=1e-10)


def test_causal_radius_diverges_at_unit_exponent():
    r = cmcflow.causal_radius(KasnerFamily((1.0, 0.0, 0.0)), 0, 0.0, 1.0)
    assert not r.finite and math.isinf(r.value)
    assert r.exponent == pytest.approx(-1.0)
    assert cmcflow.causal_radius(KasnerFamily((1.0, 0.0, 0.0)), 1, 0.0, 1.0).finite


def test_causal_radius_scale_covariance():
    fam = ConeTorusFamily(2, 1)
    Lam = 4.0
    unit = cmcflow.causal_radius(fam, 1, 1 / Lam, 1.0).value
    for t in (0.01, 0.3, 7.0):
        assert cmcflow.causal_radius(fam, 1, t / Lam, t).value == pytest.approx(t * unit, rel=1e-10)
    assert cmcflow.disjointness(fam, 1, 3 * unit, Lam, 1.0)
    assert not cmcflow.disjointness(fam, 1, unit, Lam, 1.0)


def test_kasner_limit_check_examples():
    kas = cmcflow.kasner_limit_check(KasnerFamily(KASNER))
    assert kas.verdict == "converges"
    for key in ("lapse", "second_fundamental_form", "scalar_curvature"):
        assert np.max(kas.values[key]) < 1e-12
    assert cmcflow.kasner_limit_check(ConeFamily(3)).verdict == "vacuous"
    assert cmcflow.kasner_limit_check(ConeTorusFamily(2, 1)).verdict == "vacuous"
    forced = cmcflow.kasner_limit_check(ConeTorusFamily(2, 1), measure=1.0)
    assert forced.verdict == "does not converge"
    assert forced.values["lapse"][-1] > 0.1
    with pytest.raises(cmcflow.HypothesisError):
        cmcflow.kasner_limit_check(make_family("kantowski_sachs", mass=1.0))
