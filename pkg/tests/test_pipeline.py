import numpy as np
import pytest

from torusnf.curves import gauss_degree
from torusnf.errors import HypothesisViolation
from torusnf.fibering import phase_profile_distance
from torusnf.flows import flow
from torusnf.pipeline import (
    TorusEmbedding,
    closure_defect,
    curve_from_profile,
    exactness_correct,
    half_turn_profile,
    identity_embedding,
    jacobian_density,
    modulus_phase_split,
    normal_form_curve,
    normal_form_embedding,
    normalize_embedding,
    postcompose_monomial_shear,
    precompose_torus_map,
)
from torusnf.realization import AnnulusFunction
from torusnf.series import PeriodicSeries, coeff_distance, theta_grid

from test_flows import stream_field
from test_series import random_series, sin_series


def bessel_j1_quadrature(x, M=20000):
    """J_1 by the integral representation (independent oracle)."""
    tau = np.pi * (np.arange(M) + 0.5) / M
    return float(np.mean(np.cos(tau - x * np.sin(tau))))


def rich_profile(delta=1e-3, N=4):
    """First, second and third harmonics.

    Closure correction removes the first harmonic (forced to second order by
    the closure constraint); the others survive, and the third changes sign
    under the half turn, keeping the two representatives distinguishable.
    """
    return delta * (sin_series(1, N, 0)
                    + PeriodicSeries.from_terms(
                        1, N, {(2,): -0.5j, (-2,): 0.5j,
                               (3,): -0.5j, (-3,): 0.5j}))


def seeded_embedding(delta=1e-3, rho0=1.0, n=2, r0=0.5, profile=None):
    k = exactness_correct(profile if profile is not None else rich_profile(delta))
    g, _ = normal_form_curve(k, rho0)
    return normal_form_embedding(g, n, r0), k


class TestJacobianDensity:
    def test_identity(self):
        a = jacobian_density(identity_embedding(2))
        assert a.series.abs_max_coeff() < 1e-13

    def test_linear_scaling(self):
        eps = 1e-3
        comps = (AnnulusFunction.from_terms(2, 1, {(1, 0): 1.0 + eps}),
                 AnnulusFunction.from_terms(2, 1, {(0, 1): 1.0}))
        a = jacobian_density(TorusEmbedding(comps, 0.5))
        assert abs(a.series.mean() - eps) < 1e-13
        assert abs(a.norm(0.25) - eps) < 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(81)
        emb, _ = seeded_embedding(1e-3)
        pert = [AnnulusFunction(c.series
                                + 1e-4 * random_series(rng, 2, 3, real=False))
                for c in emb.components]
        emb = TorusEmbedding(tuple(pert), 0.5)
        a = jacobian_density(emb)
        h = 1e-5
        pts = theta_grid(2, 9)
        z = np.exp(1j * pts)
        jac = np.empty((pts.shape[0], 2, 2), dtype=complex)
        for l in range(2):
            dz = np.zeros(2)
            dz[l] = h
            jac[:, :, l] = (emb.eval_z(z + dz) - emb.eval_z(z - dz)) / (2 * h)
        fd = np.linalg.det(jac)
        assert np.max(np.abs(fd - 1.0 - a.eval_z(z))) < 1e-8


class TestModulusPhaseSplit:
    def test_zero(self):
        split = modulus_phase_split(AnnulusFunction.zeros(2, 2))
        assert split.modulus.abs_max_coeff() < 1e-15
        assert split.phase.abs_max_coeff() < 1e-15

    def test_real_constant(self):
        eps = 1e-3
        a = AnnulusFunction.from_terms(2, 1, {(0, 0): eps})
        split = modulus_phase_split(a)
        assert abs(split.modulus.mean() - eps) < 1e-14
        assert split.phase.abs_max_coeff() < 1e-14

    def test_imaginary_constant(self):
        eps = 1e-3
        a = AnnulusFunction.from_terms(2, 1, {(0, 0): 1j * eps})
        split = modulus_phase_split(a)
        assert abs(split.phase.mean() - np.arctan(eps)) < 1e-14
        assert abs(split.modulus.mean() - (np.hypot(1, eps) - 1.0)) < 1e-14

    def test_reconstruction(self):
        rng = np.random.default_rng(82)
        a = AnnulusFunction(3e-4 * random_series(rng, 2, 4, real=False))
        split = modulus_phase_split(a)
        assert split.residual < 1e-10
        assert split.modulus.real and split.phase.real

    def test_branch_guard(self):
        a = AnnulusFunction.from_terms(2, 1, {(0, 0): 0.7})
        with pytest.raises(HypothesisViolation) as err:
            modulus_phase_split(a)
        assert err.value.bound == "(branch)"


class TestNormalFormCurve:
    def test_flat_profile_gives_circle(self):
        g, defect = normal_form_curve(PeriodicSeries.zeros(1, 2), 1.0)
        assert defect < 1e-15
        assert abs(g.series.coeff((1,)) + 1j) < 1e-14
        assert gauss_degree(g) == 1

    def test_pure_sine_refused_with_bessel_defect(self):
        delta = 0.05
        k = delta * sin_series(1, 2, 0)
        with pytest.raises(HypothesisViolation) as err:
            normal_form_curve(k, 1.0)
        assert err.value.bound == "(exact)"
        expected = 2.0 * np.pi * abs(bessel_j1_quadrature(delta))
        assert closure_defect(k) == pytest.approx(expected, rel=1e-9)

    def test_pure_sine_correction_collapses(self):
        # closure forces the first harmonic of an exact profile to second
        # order, so correcting a pure sine removes it almost entirely
        delta = 1e-3
        k = exactness_correct(delta * sin_series(1, 2, 0))
        assert k.abs_max_coeff() < 1e-12
        assert closure_defect(k) < 1e-12

    def test_rich_profile_correction_keeps_higher_harmonics(self):
        delta = 1e-3
        seed = rich_profile(delta)
        k = exactness_correct(seed)
        g, defect = normal_form_curve(k, 1.0)
        assert defect < 1e-12
        assert gauss_degree(g) == 1
        assert abs(k.coeff((2,)) - seed.coeff((2,))) < 2 * delta ** 2
        assert abs(k.coeff((1,))) < 2 * delta ** 2

    def test_curve_from_profile_closes_any_seed(self):
        delta = 1e-3
        g = curve_from_profile(delta * sin_series(1, 2, 0), 1.0)
        assert gauss_degree(g) == 1


class TestNormalFormEmbedding:
    def test_flat_profile_gives_identity(self):
        g, _ = normal_form_curve(PeriodicSeries.zeros(1, 2), 1.0)
        emb = normal_form_embedding(g, 2)
        ident = identity_embedding(2)
        for c, i in zip(emb.components, ident.components):
            assert coeff_distance(c.series, i.series) < 1e-13

    def test_needs_two_angles(self):
        g, _ = normal_form_curve(PeriodicSeries.zeros(1, 2), 1.0)
        with pytest.raises(ValueError):
            normal_form_embedding(g, 1)

    def test_closeness_small_for_small_profiles(self):
        emb, _ = seeded_embedding(1e-3)
        assert emb.closeness() <= 0.2 * 0.5 ** 4


class TestNormalizeEmbedding:
    def test_identity(self):
        rep = normalize_embedding(identity_embedding(2))
        assert rep.rho0 == pytest.approx(1.0, abs=1e-12)
        assert rep.k.coeff_norm(0.25) < 1e-12
        assert rep.phase_residual < 1e-10

    def test_round_trip(self):
        emb, k_seed = seeded_embedding(1e-3)
        rep = normalize_embedding(emb)
        assert rep.rho0 == pytest.approx(1.0, abs=1e-9)
        assert phase_profile_distance(
            k_seed, rep.k, allow_half_turn=True) <= 1e-6
        assert rep.phase_residual <= 1e-8
        assert rep.volume_residual <= 1e-8
        assert rep.exactness_defect <= 1e-8

    def test_round_trip_with_amplitude(self):
        emb, k_seed = seeded_embedding(5e-4, rho0=1.0005)
        rep = normalize_embedding(emb)
        assert rep.rho0 == pytest.approx(1.0005, abs=1e-9)
        assert rep.total_volume == pytest.approx(
            (2 * np.pi) ** 2 * 1.0005, rel=1e-9)
        assert phase_profile_distance(
            k_seed, rep.k, allow_half_turn=True) <= 1e-6

    def test_half_turn_construction(self):
        emb, k_seed = seeded_embedding(1e-3)
        rep = normalize_embedding(emb)
        k_hat = half_turn_profile(rep.k)
        g_hat, _ = normal_form_curve(k_hat, rep.rho0)
        emb_hat = normal_form_embedding(g_hat, 2)
        rep_hat = normalize_embedding(emb_hat)
        # the half-turned profile is recovered on the nose...
        assert coeff_distance(rep_hat.k, k_hat) <= 1e-8
        # ...and matches the original only through the half-turn family
        assert phase_profile_distance(rep.k, rep_hat.k) > 1e-4
        assert phase_profile_distance(rep.k, rep_hat.k,
                                      allow_half_turn=True) <= 1e-8

    def test_reparametrization_invariance_volume_preserving(self):
        rng = np.random.default_rng(83)
        emb, _ = seeded_embedding(1e-3)
        rep = normalize_embedding(emb)
        psi = flow(stream_field(rng, N=2, norm=3e-5), 1.0, 0.5, 0.2,
                   N_out=8).map
        emb2 = precompose_torus_map(emb, psi)
        rep2 = normalize_embedding(emb2)
        assert abs(rep2.rho0 - rep.rho0) <= 1e-8
        assert phase_profile_distance(rep.k, rep2.k) <= 1e-6

    def test_reparametrization_invariance_generic(self):
        # a non-volume-preserving parameter change exercises the volume
        # normalization stage nontrivially
        from torusnf.flows import TorusMapLift
        rng = np.random.default_rng(84)
        emb, _ = seeded_embedding(1e-3)
        rep = normalize_embedding(emb)
        parts = [2e-5 * random_series(rng, 2, 3), 2e-5 * random_series(rng, 2, 3)]
        psi = TorusMapLift(np.eye(2, dtype=int), parts)
        emb2 = precompose_torus_map(emb, psi)
        rep2 = normalize_embedding(emb2)
        assert abs(rep2.rho0 - rep.rho0) <= 1e-7
        assert phase_profile_distance(rep.k, rep2.k) <= 1e-6

    def test_ambient_shear_leaves_density_and_invariants(self):
        emb, _ = seeded_embedding(1e-3)
        rep = normalize_embedding(emb)
        emb2 = postcompose_monomial_shear(emb, 0, {1: 2}, 2e-4)
        a1 = jacobian_density(emb)
        a2 = jacobian_density(emb2)
        assert coeff_distance(a1.series.pad_to(a2.N),
                              a2.series.pad_to(a1.N)) < 1e-12
        rep2 = normalize_embedding(emb2)
        assert phase_profile_distance(rep.k, rep2.k) <= 1e-8

    def test_refuses_far_from_identity(self):
        comps = (AnnulusFunction.from_terms(2, 1, {(1, 0): 1.0, (0, 0): 0.4}),
                 AnnulusFunction.from_terms(2, 1, {(0, 1): 1.0}))
        with pytest.raises(HypothesisViolation) as err:
            normalize_embedding(TorusEmbedding(comps, 0.5))
        assert err.value.bound == "(f-id)"

    def test_complex_constant_consistency(self):
        emb, _ = seeded_embedding(1e-3)
        rep = normalize_embedding(emb)
        # the complex mean of the density has modulus close to rho0 at
        # second order in the profile
        assert abs(abs(rep.complex_constant) - rep.rho0) < 1e-5
