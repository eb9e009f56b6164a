import numpy as np
import pytest

from z2chain import MeasurementRecord, SimParams
from z2chain.dense import enumerate_trajectories, run_trajectory_with_record
from z2chain.errors import RequiresPureDynamics, SingularCoupling, WrongLimit
from z2chain.kernels import x_site_kernel
from z2chain.statmech import (
    CouplingSet,
    DisorderRealization,
    SingleSpeciesRbim,
    brute_force_traced,
    couplings_from_params,
    couplings_with_unitaries,
    gauge_transform,
    kw_dual_couplings,
    loop_expansion_partition,
    nishimori_residual,
    potts_bond_weights,
    random_record,
    rbim_reduction,
    record_duality_residual,
    self_duality_residuals,
    single_copy_brute_force,
    transfer_matrix_partition,
    x_transfer_from_couplings,
)


class TestCouplings:
    def test_j_zz_closed_form(self):
        c = couplings_from_params(0.5, 0.5, 0.0, 0.0)
        assert c.j_zz == pytest.approx(np.arctanh(0.5), abs=1e-12)
        assert c.j_zz == pytest.approx(0.549306, abs=1e-6)

    def test_k_x_vanishes_without_dephasing(self):
        c = couplings_from_params(0.5, 0.3, 0.0, 0.1)
        assert c.k_x == pytest.approx(0.0, abs=1e-12)
        assert c.j_x == pytest.approx(0.5 * np.log(2.0), abs=1e-12)

    def test_k_zz_vanishes_without_dephasing(self):
        c = couplings_from_params(0.5, 0.3, 0.2, 0.0)
        assert c.k_zz == pytest.approx(0.0, abs=1e-12)

    def test_singular_limits(self):
        with pytest.raises(SingularCoupling):
            couplings_from_params(0.0, 0.5)
        with pytest.raises(SingularCoupling):
            couplings_from_params(1.0, 0.5)
        with pytest.raises(SingularCoupling):
            couplings_from_params(0.5, 1.0)

    def test_transfer_matches_exact_kernel(self):
        for lam, q in ((0.5, 0.0), (0.3, 0.2), (0.8, 0.45)):
            c = couplings_from_params(lam, 0.5, q, 0.0)
            for m in (+1, -1):
                statmech_side = x_transfer_from_couplings(c, m)
                quantum_side = x_site_kernel(lam, q, m)
                assert np.allclose(statmech_side, quantum_side, atol=1e-12)

    def test_unitary_couplings_reduce_at_theta_zero(self):
        a = couplings_with_unitaries(0.5, 0.2, 0.0)
        b = couplings_from_params(0.5, 0.5, 0.2, 0.0)
        assert a.j_x == pytest.approx(b.j_x, abs=1e-12)
        assert a.k_x == pytest.approx(b.k_x, abs=1e-12)
        assert a.phi_plus == pytest.approx(0.0, abs=1e-12)

    def test_unitary_transfer_matches_exact_kernel(self):
        for lam, q, th in ((0.5, 0.0, 0.2), (0.3, 0.15, 0.4), (0.7, 0.3, -0.3)):
            c = couplings_with_unitaries(lam, q, th)
            for m in (+1, -1):
                statmech_side = x_transfer_from_couplings(c, m)
                quantum_side = x_site_kernel(lam, q, m, th)
                assert np.allclose(statmech_side, quantum_side, atol=1e-10)

    def test_phase_shifts_by_pi_between_outcomes(self):
        # at theta = 0 the outcome flip is a pure pi shift of the phase
        c0 = couplings_from_params(0.5, 0.5, 0.1, 0.0)
        assert abs(c0.phi(-1) - c0.phi(+1)) == pytest.approx(np.pi, abs=1e-12)
        # with rotations the flip negates w and conjugates: phases sum to pi
        c = couplings_with_unitaries(0.5, 0.1, 0.2)
        assert c.phi(-1) + c.phi(+1) == pytest.approx(np.pi, abs=1e-12)
        assert abs(c.j_x_tilde(-1).real - c.j_x_tilde(+1).real) < 1e-12


def _disorder(params, seed, n_bonds=None):
    rec = random_record(params, seed, n_bonds)
    return DisorderRealization(record=rec, bonds=tuple(params.bonds))


class TestPartitionValues:
    def test_brute_force_equals_transfer(self):
        params = SimParams(lambda_x=0.45, lambda_zz=0.3, q_x=0.12, q_zz=0.07, L=2, T=2)
        c = couplings_from_params(0.45, 0.3, 0.12, 0.07)
        for seed in range(4):
            d = _disorder(params, seed)
            bf = brute_force_traced(d, c, "ghz_plus")
            tm = transfer_matrix_partition(d, c, "ghz_plus")
            assert bf == pytest.approx(tm, abs=1e-12)

    def test_traced_value_is_trajectory_weight(self):
        params = SimParams(lambda_x=0.45, lambda_zz=0.3, q_x=0.12, q_zz=0.07, L=2, T=2)
        c = couplings_from_params(0.45, 0.3, 0.12, 0.07)
        for seed in range(4):
            d = _disorder(params, seed)
            dense = run_trajectory_with_record(params, d.record)
            tm = transfer_matrix_partition(d, c, "ghz_plus")
            assert np.exp(dense.log_weight) == pytest.approx(tm.real, abs=1e-12)
            assert abs(tm.imag) < 1e-12

    def test_unitary_case_traced_real(self):
        params = SimParams(
            lambda_x=0.4, lambda_zz=0.35, q_x=0.1, q_zz=0.05,
            theta_x=0.3, theta_zz=0.25, L=2, T=2,
        )
        c = couplings_with_unitaries(0.4, 0.1, 0.3, lambda_zz=0.35, q_zz=0.05, theta_zz=0.25)
        for seed in range(3):
            d = _disorder(params, seed)
            dense = run_trajectory_with_record(params, d.record)
            tm = transfer_matrix_partition(d, c, "ghz_plus")
            assert abs(tm.imag) < 1e-11
            assert np.exp(dense.log_weight) == pytest.approx(tm.real, abs=1e-11)

    def test_pure_case_factorizes_into_two_species(self):
        # q = 0 decouples ket and bra: Z equals |single copy|^2 structure,
        # checked via positivity and the single-copy brute force
        params = SimParams(lambda_x=0.45, lambda_zz=0.3, q_x=0.0, q_zz=0.0, L=2, T=2)
        c = couplings_from_params(0.45, 0.3)
        for seed in range(3):
            d = _disorder(params, seed)
            tm = transfer_matrix_partition(d, c, "all_up", final="traced")
            assert tm.real >= -1e-15

    def test_nishimori_residual_generic(self):
        params = SimParams(lambda_x=0.5, lambda_zz=0.5, q_x=0.0, q_zz=0.0, L=2, T=1)
        assert nishimori_residual(params) < 1e-9

    def test_nishimori_residual_with_dephasing(self):
        params = SimParams(lambda_x=0.45, lambda_zz=0.3, q_x=0.12, q_zz=0.07, L=2, T=2)
        assert nishimori_residual(params) < 1e-9

    def test_nishimori_residual_lambda_zero(self):
        params = SimParams(
            lambda_x=0.0, lambda_zz=0.6, q_x=0.2, q_zz=0.1, L=2, T=2,
            initial_state="all_up",
        )
        assert nishimori_residual(params) < 1e-9


class TestDuality:
    def test_self_dual_identities_hold_on_grid(self):
        # the grid keeps |2 J_zz - 2 K_zz| bounded away from zero: on the
        # singular curve q = lambda/(1+lambda) the bond weight w vanishes
        # and t diverges, so the absolute residual loses meaning there
        for lam in np.linspace(0.5, 0.95, 10):
            for q in np.linspace(0.0, 0.225, 10):
                rw, rt = self_duality_residuals(float(lam), float(q))
                assert rw < 1e-10
                assert rt < 1e-10

    def test_broken_self_duality(self):
        c = couplings_from_params(0.3, 0.6, 0.1, 0.1)
        w0, t0 = potts_bond_weights(c, +1, "spatial")
        w1, t1 = potts_bond_weights(c, +1, "temporal")
        _, _, (rw, rt) = kw_dual_couplings(w0, t0, w1, t1)
        assert rw > 1e-3 or rt > 1e-3

    def test_dual_of_dual_identity(self):
        c = couplings_from_params(0.4, 0.4, 0.2, 0.2)
        w0, t0 = potts_bond_weights(c, +1, "spatial")
        d0, d1, _ = kw_dual_couplings(w0, t0, *potts_bond_weights(c, +1, "temporal"))
        assert d0.t_bar == t0

    def test_record_level_duality(self):
        assert record_duality_residual(0.3, 0.6, L=2, T=2) < 1e-9
        assert record_duality_residual(0.5, 0.5, L=2, T=2) < 1e-9

    def test_record_level_duality_l3(self):
        assert record_duality_residual(0.35, 0.55, L=3, T=2) < 1e-9


class TestRbimReduction:
    def test_lambda_x_zero_ratio_constant(self):
        params = SimParams(
            lambda_x=0.0, lambda_zz=0.6, q_x=0.2, q_zz=0.1, L=2, T=2,
            initial_state="all_up",
        )
        ratios = []
        for t, _ in enumerate_trajectories(params):
            full, reduced = rbim_reduction(params, t.record)
            ratios.append(full / reduced)
        ratios = np.array(ratios)
        assert np.max(np.abs(ratios / ratios[0] - 1.0)) < 1e-10

    def test_lambda_zz_zero_ratio_constant(self):
        params = SimParams(
            lambda_x=0.6, lambda_zz=0.0, q_x=0.1, q_zz=0.2, L=2, T=2,
            initial_state="all_up",
        )
        ratios = []
        for t, _ in enumerate_trajectories(params):
            full, reduced = rbim_reduction(params, t.record)
            ratios.append(full / reduced)
        ratios = np.array(ratios)
        assert np.max(np.abs(ratios / ratios[0] - 1.0)) < 1e-10

    def test_classical_readout_limit(self):
        # lambda_x = 0 and q_x = 0: commuting dynamics, all <ZZ>^2 = 1
        params = SimParams(
            lambda_x=0.0, lambda_zz=0.6, q_x=0.0, q_zz=0.1, L=3, T=4,
            initial_state="all_up",
        )
        from z2chain.dense import run_trajectory_dense

        st, _ = run_trajectory_dense(params, seed=4)
        m = st.zz_strong_matrix()
        assert np.allclose(np.abs(m), 1.0, atol=1e-10)

    def test_wrong_limit(self):
        params = SimParams(lambda_x=0.3, lambda_zz=0.3, L=2, T=2)
        with pytest.raises(WrongLimit):
            rbim_reduction(params, random_record(params, 0))


class TestGauge:
    def _realization(self, seed):
        rng = np.random.default_rng(seed)
        spatial = rng.choice([1.0, -1.0], size=(3, 2)) * 0.7
        temporal = np.full((3, 3), 0.45)
        return SingleSpeciesRbim(spatial, temporal, bonds=((0, 1), (1, 2)))

    def test_partition_invariant(self):
        r = self._realization(0)
        z0 = r.partition()
        for site in ((1, 1), (2, 0), (3, 2)):
            z1 = gauge_transform(r, site).partition()
            assert abs(z1 - z0) < 1e-12 * abs(z0)

    def test_frustration_invariant(self):
        r = self._realization(1)
        f0 = r.frustration()
        for site in ((1, 0), (2, 2)):
            assert np.array_equal(gauge_transform(r, site).frustration(), f0)

    def test_boundary_site_rejected(self):
        r = self._realization(2)
        with pytest.raises(WrongLimit):
            gauge_transform(r, (0, 0))


class TestLoops:
    def test_high_equals_low_equals_brute(self):
        params = SimParams(lambda_x=0.5, lambda_zz=0.5, L=3, T=3)
        for seed in range(4):
            d = _disorder(params, seed)
            zb = single_copy_brute_force(d, 0.5, 0.5)
            zh = loop_expansion_partition(d, 0.5, 0.5, "high")
            zl = loop_expansion_partition(d, 0.5, 0.5, "low")
            assert zh == pytest.approx(zb, abs=1e-10 * abs(zb))
            assert zl == pytest.approx(zb, abs=1e-10 * abs(zb))

    def test_asymmetric_strengths(self):
        params = SimParams(lambda_x=0.35, lambda_zz=0.6, L=3, T=2)
        for seed in range(3):
            d = _disorder(params, seed)
            zb = single_copy_brute_force(d, 0.35, 0.6)
            zh = loop_expansion_partition(d, 0.35, 0.6, "high")
            zl = loop_expansion_partition(d, 0.35, 0.6, "low")
            assert zh == pytest.approx(zb, abs=1e-10 * max(1.0, abs(zb)))
            assert zl == pytest.approx(zb, abs=1e-10 * max(1.0, abs(zb)))

    def test_trivial_limit_prefactors_only(self):
        params = SimParams(lambda_x=1e-12, lambda_zz=1e-12, L=2, T=2)
        d = _disorder(params, 0)
        z = loop_expansion_partition(d, 1e-12, 1e-12, "high")
        # empty loop set: Z = 2^V prod cosh(J) with tiny couplings
        assert z.real > 0

    def test_requires_pure_dynamics(self):
        params = SimParams(lambda_x=0.4, lambda_zz=0.4, L=2, T=2)
        d = _disorder(params, 0)
        with pytest.raises(RequiresPureDynamics):
            loop_expansion_partition(d, 0.4, 0.4, "high", q_x=0.1)
