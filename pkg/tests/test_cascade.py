import math

import numpy as np
import pytest

from biphoton.cascade import (AtomicCascade, BiphotonEnvelope, PhaseMatchSpec,
                              biphoton_g2, check_phase_matching,
                              closed_form_c_alpha, closed_form_c_beta,
                              closed_form_c_gamma_inf, default_detuning_grid,
                              integrate_cascade)
from biphoton.errors import StepSizeError, ValidationError

NOMINAL = dict(lambda_p1_nm=780.0, lambda_p2_nm=776.0,
               lambda_s_nm=762.0, lambda_i_nm=795.0)


class TestPhaseMatching:
    def test_exact_colinear_identity_passes_with_zero_residuals(self):
        # Choose output wavelengths so 1/l_s + 1/l_i = 1/l_p1 + 1/l_p2 exactly.
        lp1, lp2, ls = 780.0, 776.0, 762.0
        li = 1.0 / (1.0 / lp1 + 1.0 / lp2 - 1.0 / ls)
        spec = PhaseMatchSpec.colinear(lp1, lp2, ls, li)
        report = check_phase_matching(spec, rel_tol=1e-9)
        assert report.passes
        assert report.momentum_relative < 1e-12
        assert report.energy_relative < 1e-12

    def test_nominal_wavelengths_pass_loose_fail_tight(self):
        spec = PhaseMatchSpec.colinear(**NOMINAL)
        loose = check_phase_matching(spec, rel_tol=1e-3)
        tight = check_phase_matching(spec, rel_tol=1e-5)
        assert loose.passes
        assert not tight.passes
        # Rounded nominal wavelengths leave a relative residual of a few 1e-4.
        assert 1e-5 < loose.energy_relative < 1e-3

    def test_reversed_idler_fails_with_double_k_residual(self):
        spec = PhaseMatchSpec.colinear(**NOMINAL)
        flipped = PhaseMatchSpec(
            k_p1=spec.k_p1, k_p2=spec.k_p2, k_s=spec.k_s,
            k_i=tuple(-k for k in spec.k_i),
            omega_p1=spec.omega_p1, omega_p2=spec.omega_p2,
            omega_s=spec.omega_s, omega_i=spec.omega_i)
        report = check_phase_matching(flipped, rel_tol=1e-3)
        assert not report.passes
        k_i_norm = np.linalg.norm(spec.k_i)
        assert np.linalg.norm(report.momentum_residual) == pytest.approx(
            2.0 * k_i_norm, rel=1e-3)

    def test_rejects_nonpositive_tolerance(self):
        spec = PhaseMatchSpec.colinear(**NOMINAL)
        with pytest.raises(ValidationError):
            check_phase_matching(spec, rel_tol=0.0)


class TestCascadeIntegration:
    def test_initial_condition(self):
        casc = AtomicCascade()
        traj = integrate_cascade(casc, [0.0], [0.0], t_max=5.0)
        assert traj.c_alpha[0] == 1.0
        assert np.all(traj.c_beta[:, 0] == 0)
        assert np.all(traj.c_gamma[:, :, 0] == 0)

    def test_c_alpha_matches_closed_form(self):
        casc = AtomicCascade(gamma_alpha=0.6, gamma_beta=36.0)
        traj = integrate_cascade(casc, [1.0], [2.0], t_max=100.0)
        expected = closed_form_c_alpha(casc, traj.t_ns)
        assert np.max(np.abs(traj.c_alpha - expected)) < 1e-6

    def test_c_beta_matches_closed_form(self):
        casc = AtomicCascade(gamma_alpha=0.6, gamma_beta=36.0)
        traj = integrate_cascade(casc, [1.0, -3.0, 0.0], [0.0], t_max=100.0,
                                 coupling=0.01)
        for k, dk in enumerate(traj.detunings_k_mhz):
            expected = closed_form_c_beta(casc, dk, traj.t_ns, coupling=0.01)
            assert np.max(np.abs(traj.c_beta[k] - expected)) < 1e-9

    def test_c_gamma_asymptote_matches_closed_form_on_5x5_grid(self):
        # A faster upper decay keeps the asymptote reachable in test time.
        casc = AtomicCascade(gamma_alpha=6.0, gamma_beta=36.0)
        dks, dqs = default_detuning_grid(casc, n=5, span=0.5)
        traj = integrate_cascade(casc, dks, dqs, t_max=4000.0, coupling=0.01)
        for k, dk in enumerate(dks):
            for q, dq in enumerate(dqs):
                expected = closed_form_c_gamma_inf(casc, dk, dq, coupling=0.01)
                rel = abs(traj.c_gamma[k, q, -1] - expected) / abs(expected)
                assert rel < 1e-4

    def test_population_decays_monotonically_in_weak_coupling(self):
        casc = AtomicCascade(gamma_alpha=6.0, gamma_beta=36.0)
        traj = integrate_cascade(casc, [0.5], [1.0], t_max=500.0, coupling=1e-3)
        population = np.abs(traj.c_alpha) ** 2 + np.sum(np.abs(traj.c_beta) ** 2, axis=0)
        assert np.all(np.diff(population) <= 1e-12)

    def test_coarse_step_rejected(self):
        casc = AtomicCascade(gamma_beta=36.0)
        with pytest.raises(StepSizeError):
            integrate_cascade(casc, [0.0], [0.0], t_max=10.0, dt=5.0)

    def test_export_csv_round_trips_shape(self, tmp_path):
        casc = AtomicCascade()
        traj = integrate_cascade(casc, [0.0, 1.0], [0.0], t_max=2.0)
        out = tmp_path / "traj.csv"
        traj.export_csv(out)
        lines = out.read_text().splitlines()
        assert len(lines) == len(traj.t_ns) + 1
        # time + c_alpha(2) + c_beta(2*2) + c_gamma(2*1*2) columns
        assert len(lines[0].split(",")) == 1 + 2 + 4 + 4


class TestBiphotonEnvelope:
    def test_negative_delay_is_zero(self):
        env = BiphotonEnvelope(amplitude=3.0, tau_c=4.4)
        assert biphoton_g2(env, -1.0) == 0.0

    def test_zero_delay_is_amplitude(self):
        env = BiphotonEnvelope(amplitude=3.0, tau_c=4.4)
        assert biphoton_g2(env, 0.0) == 3.0

    def test_tau_c_delay_is_amplitude_over_e(self):
        env = BiphotonEnvelope(amplitude=3.0, tau_c=4.4)
        assert biphoton_g2(env, 4.4) == pytest.approx(3.0 / math.e, rel=1e-12)

    def test_bandwidth(self):
        env = BiphotonEnvelope(amplitude=1.0, tau_c=4.4)
        assert env.bandwidth_mhz == pytest.approx(36.2, abs=0.05)
