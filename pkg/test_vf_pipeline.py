# -*- coding: utf-8 -*-
"""轨道测度的构造与统计解检验"""

import math
from functools import partial

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import trapezoid

from conftest import wide_family
from dynamics import GridError, constant_forcing, make_forcing, observed_order
from measure_kit import (
    MeasureError, RadiiLadder, cyl_eval, cyl_grad, expect, initial_measure, make_phase_measure,
    make_trajectory_measure, mean_energy, project_at, weak_star_gap,
)
from solution_checks import LINEAR_PSI, PsiFunction, strengthened_energy_inequality, strong_continuity_diagnostic
from spectral_core import BoxParams, build_lattice, l2_inner, nonlinear_B, stokes_apply
from vf_pipeline import (
    VFBuildConfig, carrier_bound, carrier_check, construct_vf_measure, convex_approx_diagnostic,
    initial_continuity, inject_jump, liouville_defects, liouville_residual, liouville_residuals,
    localization_check, mean_energy_bound, mean_energy_inequality, mean_energy_inequality_sweep,
    mixture_sequence, projection_battery, subsample_sequence, weak_mean_energy_inequality,
)


INTERVAL = (0.0, 0.5)
NU = 0.1


def _build(mu, forcing, dt, worker, **kwargs):
    cfg = VFBuildConfig(interval=INTERVAL, dt=dt, nu=NU, forcing=forcing, **kwargs)
    return construct_vf_measure(mu, cfg, worker)


class TestConstruct:

    def test_initial_projection_is_input_measure(self, rho, mu0):
        back = initial_measure(rho)
        assert back.weights is mu0.weights or np.array_equal(back.weights, mu0.weights)
        for a, b in zip(back.atoms, mu0.atoms):
            assert np.array_equal(a.coeffs, b.coeffs)

    def test_ladder_is_validated(self, mu0, short_forcing, worker):
        ok = _build(mu0, short_forcing, 0.05, worker, ladder=RadiiLadder((1.0, 2.0, 3.0)))
        assert len(ok) == len(mu0)
        with pytest.raises(MeasureError, match="超出最大半径"):
            _build(mu0, short_forcing, 0.05, worker, ladder=RadiiLadder((0.5, 1.0)))

    def test_ladder_build_matches_plain_build(self, rho, mu0, short_forcing, worker):
        layered = _build(mu0, short_forcing, 0.05, worker, ladder=RadiiLadder((1.25, 2.5)))
        assert rho.annuli == ()
        assert [a['atoms'] for a in layered.annuli] == [[0, 1], [2, 3]]
        assert_allclose([a['mass'] for a in layered.annuli], [0.3, 0.7], rtol=1e-14)
        assert_allclose(layered.weights, rho.weights, rtol=1e-14)
        for a, b in zip(layered.atoms, rho.atoms):
            assert np.array_equal(a.states, b.states)

        family = wide_family(rho)
        for t in rho.grid.nodes:
            assert_allclose(mean_energy(project_at(layered, t)), mean_energy(project_at(rho, t)),
                            rtol=0, atol=1e-12)
            for phi in family:
                def functional(u, phi=phi):
                    return cyl_eval(phi, u)
                assert_allclose(expect(project_at(layered, t), functional), expect(project_at(rho, t), functional),
                                rtol=0, atol=1e-12)
        assert_allclose(liouville_residuals(layered, family, *INTERVAL), liouville_residuals(rho, family, *INTERVAL),
                        rtol=0, atol=1e-12)

    def test_layered_initial_projection_is_input_measure(self, mu0, short_forcing, worker):
        layered = _build(mu0, short_forcing, 0.05, worker, ladder=RadiiLadder((1.25, 2.5)))
        back = initial_measure(layered)
        assert_allclose(back.weights, mu0.weights, rtol=1e-14)
        for a, b in zip(back.atoms, mu0.atoms):
            assert np.array_equal(a.coeffs, b.coeffs)

    def test_galerkin_pushforward(self, mu0, short_forcing, worker):
        rho = _build(mu0, short_forcing, 0.05, worker, galerkin_modes=3)
        for traj in rho.atoms:
            assert not np.any(traj.states[0, 3:])

    def test_lattice_mismatch(self, mu0, worker):
        other = build_lattice(BoxParams((1.0, 1.0, 1.0), NU, 1))
        with pytest.raises(ValueError):
            _build(mu0, make_forcing([], other, INTERVAL), 0.05, worker)


class TestLiouville:

    def test_residual_is_second_order(self, mu0, short_forcing, worker):
        measures = [_build(mu0, short_forcing, dt, worker) for dt in (0.05, 0.025, 0.0125)]
        family = wide_family(measures[0])
        assert [phi.arity for phi in family] == [1, 2, 3]
        table = np.array([liouville_residuals(m, family, *INTERVAL) for m in measures])
        for p in range(len(family)):
            if table[0, p] <= 1e-12:
                continue
            for order in observed_order(table[:, p]):
                assert order >= math.log2(3.5)

    def test_single_matches_batch(self, rho):
        family = wide_family(rho)
        batch = liouville_residuals(rho, family, 0.1, 0.4)
        assert liouville_residual(rho, family[1], 0.1, 0.4) == batch[1]

    def test_small_at_reference_step(self, rho):
        assert max(liouville_residuals(rho, wide_family(rho), *INTERVAL)) <= 1e-4


class TestMeanEnergy:

    def test_mean_inequality_passes(self, rho):
        assert mean_energy_inequality(rho, LINEAR_PSI, 0.0, 0.5, tol=1e-4).passed
        assert mean_energy_inequality(rho, PsiFunction('saturating', 2.0), 0.1, 0.5, tol=1e-4).passed

    def test_weak_form_matches_linear_psi(self, rho):
        weak = weak_mean_energy_inequality(rho, 0.0, 0.5)
        strong = mean_energy_inequality(rho, LINEAR_PSI, 0.0, 0.5)
        assert weak.check == 'weak_mean_energy_inequality'
        assert weak.lhs == strong.lhs and weak.rhs == strong.rhs

    def test_sweep_agrees_with_pointwise(self, rho):
        sweep = mean_energy_inequality_sweep(rho, LINEAR_PSI, tol=1e-4)
        assert len(sweep) == 11 * 10 // 2
        assert all(r.passed for r in sweep)
        full = next(r for r in sweep if r.t_prime == 0.0 and r.t == 0.5)
        point = mean_energy_inequality(rho, LINEAR_PSI, 0.0, 0.5)
        assert_allclose(full.defect, point.defect, rtol=1e-9, atol=1e-14)

    def test_mean_energy_bound(self, rho):
        reports = mean_energy_bound(rho)
        assert len(reports) == len(rho.grid.nodes)
        assert all(r.passed for r in reports)
        assert reports[0].defect == 0.0


class TestInitialContinuity:

    @pytest.fixture(scope='class')
    def fine(self, mu0, steady_forcing_field, worker):
        cfg = VFBuildConfig((0.0, 0.1), 0.005, NU, constant_forcing(steady_forcing_field, (0.0, 0.1)))
        return construct_vf_measure(mu0, cfg, worker)

    def test_extrapolated_gap_vanishes(self, fine):
        report = initial_continuity(fine, LINEAR_PSI, 0.04)
        assert len(report.samples) == 4
        assert abs(report.limit) <= 1e-6
        assert report.passed

    def test_saturating_psi(self, fine):
        linear = initial_continuity(fine, LINEAR_PSI, 0.04)
        report = initial_continuity(fine, PsiFunction('saturating', 2.0), 0.04)
        assert [h for h, _ in report.samples] == [h for h, _ in linear.samples]
        assert report.magnitude > 0
        assert report.magnitude != linear.magnitude
        assert abs(report.limit) <= 1e-6
        assert report.passed

    def test_window_too_short(self, rho):
        with pytest.raises(ValueError, match="至少需要 4 个"):
            initial_continuity(rho, LINEAR_PSI, 0.1)


class TestCarrier:

    def test_clean_ensemble_passes(self, rho):
        report = carrier_check(rho)
        assert report.passed
        assert report.synthetic_atoms == []
        assert len(report.weighted_samples) == 4

    def test_injected_jump_is_detected(self, rho):
        jump = 0.5
        bad = inject_jump(rho.atoms[1], 0.4, jump)
        mixed = make_trajectory_measure([rho.atoms[0], bad, rho.atoms[2], rho.atoms[3]], rho.weights)
        report = carrier_check(mixed)
        assert not report.passed
        assert report.synthetic_atoms == [1]
        assert report.to_row()['failing_atoms'] == [1]
        assert abs(report.atom_reports[1].magnitude - jump) <= 0.1 * jump

    def test_inject_jump_arguments(self, rho):
        with pytest.raises(ValueError, match="必须为正"):
            inject_jump(rho.atoms[0], 0.2, 0.0)
        with pytest.raises(GridError, match="小于一个时间步"):
            inject_jump(rho.atoms[0], 0.0, 1.0)

    def test_carrier_bound(self, rho):
        for k in range(4):
            h = 0.05 * 2 ** k
            report = carrier_bound(rho, h, tol=1e-6)
            assert report.passed
            assert_allclose(report.rhs, h * 0.25 / (2 * NU), rtol=1e-12)


class TestLocalization:

    def test_inside_and_outside(self, rho):
        samples = rho.grid.nodes[::2]
        inside = localization_check(rho, 5.0, samples)
        assert inside.passed and inside.full_grid_passed and inside.consistent
        outside = localization_check(rho, 1.0, samples)
        assert not outside.passed
        assert not outside.full_grid_passed
        assert {j for j, _, _ in outside.violations} >= {2, 3}


class TestConvexApprox:

    def test_mixture_and_subsample(self, rho):
        family = wide_family(rho)
        sizes = [1, 2, 3, 4]
        mixture = convex_approx_diagnostic(mixture_sequence(rho, sizes), rho, family, INTERVAL)
        subsample = convex_approx_diagnostic(subsample_sequence(rho, sizes), rho, family, INTERVAL)
        for phi in family:
            assert mixture.gaps(phi.name)[-1] == 0.0
            assert subsample.gaps(phi.name)[-1] == 0.0
            assert mixture.nonincreasing[phi.name]

    def test_bad_sizes(self, rho):
        with pytest.raises(MeasureError):
            subsample_sequence(rho, [0])
        with pytest.raises(MeasureError):
            mixture_sequence(rho, [5])

    def test_empty_family(self, rho):
        with pytest.raises(MeasureError, match="为空"):
            convex_approx_diagnostic([rho], rho, [], INTERVAL)


class TestProjectionBattery:

    def test_all_conditions(self, rho):
        family = wide_family(rho)
        report = projection_battery(rho, family, [LINEAR_PSI, PsiFunction('saturating', 1.0)], tol=1e-4, stride=2)
        checks = {row['check'] for row in report.rows}
        assert checks == {'liouville', 'mean_energy_inequality', 'weak_mean_energy_inequality',
                          'mean_energy_bounded', 'mean_enstrophy_integrable'}
        assert sum(1 for row in report.rows if row['check'] == 'liouville') == 2 * len(family)
        assert report.passed, report.failed_rows()
        assert len(report.series['mean_energy']) == len(rho.grid.nodes)
        assert len(report.test_family) == len(family)


# =========================
# 测度层检验与逐轨道检验的一致性
# =========================

WINDOW = (0.1, 0.4)
SATURATING = PsiFunction('saturating', 2.0)
ENSEMBLE_CHECKS = ['mean_energy_inequality', 'liouville_residual', 'carrier_check', 'weak_star_gap']


def _trajectory_liouville(traj, phi, t_prime, t):
    """Φ(u(t)) - Φ(u(t')) - ∫⟨f - νAu - B(u,u), Φ'(u)⟩ds，外力在窗口内为常值"""
    i0, i1 = traj.grid.index_of(t_prime), traj.grid.index_of(t)
    f = traj.step_forcing(i0)
    integrand = []
    for i in range(i0, i1 + 1):
        u = traj.state(i)
        drift = f - traj.viscosity * stokes_apply(u) - nonlinear_B(u, u)
        integrand.append(l2_inner(drift, cyl_grad(phi, u)))
    flux = trapezoid(integrand, traj.grid.nodes[i0:i1 + 1])
    return cyl_eval(phi, traj.state(i1)) - cyl_eval(phi, traj.state(i0)) - flux


def _on_measure(name, rho, family):
    if name == 'mean_energy_inequality':
        report = mean_energy_inequality(rho, SATURATING, *WINDOW)
        return np.array([report.lhs, report.rhs])
    if name == 'liouville_residual':
        return np.array(liouville_defects(rho, family, *WINDOW))
    if name == 'carrier_check':
        return np.array([v for _, v in carrier_check(rho).weighted_samples])
    # weak_star_gap 比较的是各 Φ 的期望
    mu = project_at(rho, WINDOW[1])
    return np.array([expect(mu, partial(cyl_eval, phi)) for phi in family])


def _on_trajectory(name, traj, family):
    if name == 'mean_energy_inequality':
        report = strengthened_energy_inequality(traj, SATURATING, *WINDOW)
        return np.array([report.lhs, report.rhs])
    if name == 'liouville_residual':
        return np.array([_trajectory_liouville(traj, phi, *WINDOW) for phi in family])
    if name == 'carrier_check':
        return np.array([v for _, v in strong_continuity_diagnostic(traj).samples])
    u = traj.state(traj.grid.index_of(WINDOW[1]))
    return np.array([cyl_eval(phi, u) for phi in family])


class TestEnsembleAgainstTrajectories:

    @pytest.mark.parametrize('name', ENSEMBLE_CHECKS)
    def test_single_atom_matches_trajectory(self, rho, name):
        family = wide_family(rho)
        for traj in rho.atoms:
            dirac = make_trajectory_measure([traj])
            assert_allclose(_on_measure(name, dirac, family), _on_trajectory(name, traj, family),
                            rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize('name', ENSEMBLE_CHECKS)
    def test_two_atoms_are_weighted_sum(self, rho, name):
        family = wide_family(rho)
        a, b = rho.atoms[1], rho.atoms[3]
        pair = make_trajectory_measure([a, b], [0.25, 0.75])
        expected = (0.25 * _on_measure(name, make_trajectory_measure([a]), family)
                    + 0.75 * _on_measure(name, make_trajectory_measure([b]), family))
        assert_allclose(_on_measure(name, pair, family), expected, rtol=1e-12, atol=1e-13)

    def test_single_atom_report_details(self, rho):
        traj = rho.atoms[2]
        dirac = make_trajectory_measure([traj])
        carrier = carrier_check(dirac)
        direct = strong_continuity_diagnostic(traj)
        assert carrier.passed == direct.passed
        assert carrier.atom_reports[0].limit == direct.limit
        mean = mean_energy_inequality(dirac, SATURATING, *WINDOW)
        assert mean.passed == strengthened_energy_inequality(traj, SATURATING, *WINDOW).passed
        family = wide_family(rho)
        assert_allclose(liouville_residuals(dirac, family, *WINDOW),
                        np.abs(_on_trajectory('liouville_residual', traj, family)), rtol=1e-10, atol=1e-13)

    def test_gap_between_diracs(self, rho):
        family = wide_family(rho)
        a, b = rho.atoms[0], rho.atoms[2]
        gap = weak_star_gap(project_at(make_trajectory_measure([a]), WINDOW[1]),
                            project_at(make_trajectory_measure([b]), WINDOW[1]), family)
        expected = np.max(np.abs(_on_trajectory('weak_star_gap', a, family)
                                 - _on_trajectory('weak_star_gap', b, family)))
        assert_allclose(gap, expected, rtol=1e-14)

    @pytest.mark.parametrize('sign', [1.0, -1.0])
    def test_gap_moves_linearly_with_weights(self, rho, sign):
        family = wide_family(rho)
        mu = project_at(rho, WINDOW[1])
        spread = np.max(np.abs(_on_trajectory('weak_star_gap', rho.atoms[0], family)
                               - _on_trajectory('weak_star_gap', rho.atoms[3], family)))
        assert spread > 0
        for eps in (1e-3, 1e-4, 1e-5):
            weights = np.array(mu.weights)
            weights[0] += sign * eps
            weights[3] -= sign * eps
            moved = make_phase_measure(mu.atoms, weights)
            assert_allclose(weak_star_gap(moved, mu, family), eps * spread, rtol=1e-8, atol=1e-15)
