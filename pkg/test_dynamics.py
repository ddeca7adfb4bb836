# -*- coding: utf-8 -*-
"""时间网格、外力、积分因子 RK4 与轨道操作"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dynamics import (
    GridError, IntegrationError, PastingError, TimeGrid, constant_forcing, energy_balance_defect,
    equation_residual, integrate, make_forcing, observed_order, paste, refine, restrict, sample_at,
    steady_state,
)
from spectral_core import VelocityField, abc_field, energy, random_field, unit_mode, zeros


class TestTimeGrid:

    def test_uniform(self):
        grid = TimeGrid.uniform(0.0, 1.0, 0.25)
        assert grid.n_steps == 4
        assert_allclose(grid.dt, 0.25)
        assert grid.index_of(0.5) == 2

    def test_dt_must_divide_interval(self):
        with pytest.raises(GridError, match="不能整除"):
            TimeGrid.uniform(0.0, 1.0, 0.3)

    def test_off_grid_query(self):
        grid = TimeGrid.uniform(0.0, 1.0, 0.25)
        with pytest.raises(GridError, match="不在网格节点上"):
            grid.index_of(0.3)
        with pytest.raises(GridError):
            grid.index_of(1.5)

    def test_rejects_non_uniform_nodes(self):
        with pytest.raises(GridError, match="不均匀"):
            TimeGrid(np.array([0.0, 0.1, 0.3]))


class TestForcing:

    def test_empty_spec_is_zero(self, lattice_k1):
        f = make_forcing([], lattice_k1, (0.0, 2.0))
        assert f.is_zero()
        assert f.ess_sup_norm == 0.0

    def test_piecewise_lookup_and_norms(self, lattice_k1):
        a = unit_mode(lattice_k1, (1, 0, 0), (0, 1, 0), amplitude=1.0)
        b = unit_mode(lattice_k1, (0, 1, 0), (1, 0, 0), amplitude=3.0)
        f = make_forcing([(0.0, 0.5, a), (0.5, 1.0, b)], lattice_k1, (0.0, 1.0))
        assert f.field_at(0.25) is a
        assert f.field_at(0.75) is b
        assert_allclose(f.ess_sup_norm, 3.0)
        assert_allclose(f.norm_on(0.0, 0.4), 1.0)

    def test_gap_and_overlap(self, lattice_k1):
        a = zeros(lattice_k1)
        with pytest.raises(ValueError, match="空隙"):
            make_forcing([(0.0, 0.4, a), (0.5, 1.0, a)], lattice_k1, (0.0, 1.0))
        with pytest.raises(ValueError, match="重叠"):
            make_forcing([(0.0, 0.6, a), (0.5, 1.0, a)], lattice_k1, (0.0, 1.0))
        with pytest.raises(ValueError, match="覆盖"):
            make_forcing([(0.0, 0.5, a)], lattice_k1, (0.0, 1.0))

    def test_compressible_field_rejected(self, lattice_k1):
        bad = VelocityField(lattice_k1, lattice_k1.kappa.astype(np.complex128))
        with pytest.raises(ValueError, match="无散度"):
            make_forcing([(0.0, 1.0, bad)], lattice_k1, (0.0, 1.0))

    def test_boundaries_must_be_nodes(self, lattice_k1):
        a = zeros(lattice_k1)
        grid = TimeGrid.uniform(0.0, 1.0, 0.25)
        with pytest.raises(GridError):
            make_forcing([(0.0, 0.3, a), (0.3, 1.0, a)], lattice_k1, (0.0, 1.0), grid)


class TestIntegrate:

    def test_single_mode_decays_exactly(self, decay_trajectory):
        t = decay_trajectory.grid.nodes
        nu, lam = 0.1, 1.0
        assert_allclose(decay_trajectory.energies, np.exp(-2 * nu * lam * t), rtol=1e-12)
        c0 = decay_trajectory.states[0]
        expected = np.exp(-nu * lam * t)[:, None, None] * c0[None]
        assert_allclose(decay_trajectory.states, expected, rtol=0, atol=1e-12 * np.max(np.abs(c0)))

    def test_steady_state_is_fixed_point(self, lattice_k1, steady_forcing_field):
        nu = 0.1
        s = steady_state(steady_forcing_field, nu)
        f = constant_forcing(steady_forcing_field, (0.0, 1.0))
        traj = integrate(s, (0.0, 1.0), 0.1, nu, f)
        for i in range(len(traj)):
            assert_allclose(traj.states[i], s.coeffs, rtol=0, atol=1e-15)

    def test_abc_decay(self, lattice_k1, zero_forcing):
        nu = 0.1
        u0 = abc_field(lattice_k1)
        traj = integrate(u0, (0.0, 1.0), 0.05, nu, zero_forcing)
        t = traj.grid.nodes
        assert_allclose(traj.energies, energy(u0) * np.exp(-2 * nu * t), rtol=1e-8)

    def test_deterministic(self, lattice_k1, zero_forcing):
        u0 = random_field(lattice_k1, np.random.default_rng(1), amplitude=5.0)
        a = integrate(u0, (0.0, 1.0), 0.05, 0.1, zero_forcing)
        b = integrate(u0, (0.0, 1.0), 0.05, 0.1, zero_forcing)
        assert np.array_equal(a.states, b.states)

    def test_pseudospectral_path_agrees(self, lattice_k1, zero_forcing):
        u0 = random_field(lattice_k1, np.random.default_rng(2), amplitude=5.0)
        a = integrate(u0, (0.0, 0.5), 0.05, 0.1, zero_forcing)
        b = integrate(u0, (0.0, 0.5), 0.05, 0.1, zero_forcing, method='pseudospectral')
        assert b.solver == 'ifrk4/pseudospectral'
        assert_allclose(b.states, a.states, rtol=0, atol=1e-12 * np.max(np.abs(a.states)))

    def test_blow_up_raises_with_time(self, lattice_k1, zero_forcing):
        u0 = random_field(lattice_k1, np.random.default_rng(3), amplitude=1e200)
        with np.errstate(all='ignore'):
            with pytest.raises(IntegrationError) as excinfo:
                integrate(u0, (0.0, 1.0), 0.1, 0.1, zero_forcing)
        assert excinfo.value.time is not None
        assert 0.0 < excinfo.value.time <= 1.0

    @pytest.mark.slow
    def test_fourth_order_convergence(self, lattice_k1, zero_forcing):
        u0 = random_field(lattice_k1, np.random.default_rng(4), slope=0.0, amplitude=20.0)
        interval, dt, nu = (0.0, 0.8), 0.1, 0.05
        runs = refine(u0, interval, dt, nu, zero_forcing, levels=3)
        reference = integrate(u0, interval, dt / 64, nu, zero_forcing).final
        errors = [float(np.max(np.abs(r.final.coeffs - reference.coeffs))) for r in runs]
        orders = observed_order(errors)
        assert min(orders) >= 3.5

    def test_energy_identity_defect_is_second_order(self, lattice_k1, steady_forcing_field):
        u0 = random_field(lattice_k1, np.random.default_rng(5), slope=1.0, amplitude=2.0)
        f = constant_forcing(steady_forcing_field, (0.0, 1.0))
        runs = refine(u0, (0.0, 1.0), 0.05, 0.1, f, levels=3)
        defects = [abs(energy_balance_defect(r, 0.0, 1.0)) for r in runs]
        for order in observed_order(defects):
            assert math.log2(3.5) <= order <= 2.3


class TestObservedOrder:

    def test_log2_ratios(self):
        assert_allclose(observed_order([16.0, 1.0, 1.0 / 16]), [4.0, 4.0])

    def test_zero_errors(self):
        orders = observed_order([1.0, 0.0])
        assert math.isinf(orders[0])


class TestTrajectoryOps:

    def test_restrict_then_paste_restores(self, forced_trajectory):
        first = restrict(forced_trajectory, (0.0, 0.5))
        second = restrict(forced_trajectory, (0.5, 1.0))
        joined = paste(first, second)
        assert np.array_equal(joined.states, forced_trajectory.states)
        assert len(joined) == len(forced_trajectory)

    def test_paste_continues_integration(self, forced_trajectory):
        middle = sample_at(forced_trajectory, 0.5)
        head = restrict(forced_trajectory, (0.0, 0.5))
        tail = integrate(middle, (0.5, 1.0), 0.02, 0.1, forced_trajectory.forcing)
        joined = paste(head, tail)
        scale = np.max(np.abs(forced_trajectory.states))
        assert_allclose(joined.states, forced_trajectory.states, rtol=0, atol=1e-12 * scale)

    def test_paste_rejects_discontinuity(self, forced_trajectory, lattice_k1):
        head = restrict(forced_trajectory, (0.0, 0.5))
        other = integrate(zeros(lattice_k1), (0.5, 1.0), 0.02, 0.1, forced_trajectory.forcing)
        with pytest.raises(PastingError, match="交界处"):
            paste(head, other)

    def test_paste_rejects_viscosity_and_time_gap(self, forced_trajectory):
        head = restrict(forced_trajectory, (0.0, 0.5))
        tail = integrate(forced_trajectory.final, (0.9, 1.0), 0.02, 0.2,
                         forced_trajectory.forcing.restricted(0.9, 1.0))
        with pytest.raises(PastingError, match="粘性"):
            paste(head, tail)
        late = integrate(sample_at(forced_trajectory, 0.6), (0.6, 1.0), 0.02, 0.1,
                         forced_trajectory.forcing.restricted(0.6, 1.0))
        with pytest.raises(PastingError, match="时间不衔接"):
            paste(head, late)

    def test_restrict_empty_interval(self, forced_trajectory):
        with pytest.raises(GridError):
            restrict(forced_trajectory, (0.5, 0.5))

    def test_sample_at_off_grid(self, forced_trajectory):
        with pytest.raises(GridError):
            sample_at(forced_trajectory, 0.011)


class TestResiduals:

    def test_equation_residual_shrinks_with_dt(self, lattice_k1, steady_forcing_field):
        u0 = random_field(lattice_k1, np.random.default_rng(6), amplitude=2.0)
        f = constant_forcing(steady_forcing_field, (0.0, 1.0))
        v = unit_mode(lattice_k1, (1, 1, 0), (1, -1, 0))
        coarse, fine = refine(u0, (0.0, 1.0), 0.05, 0.1, f, levels=2)
        r_coarse = equation_residual(coarse, v, 0.0, 1.0)
        r_fine = equation_residual(fine, v, 0.0, 1.0)
        assert r_fine < r_coarse / 3.0

    def test_energy_defect_vanishes_for_single_mode_fixed_point(self, lattice_k1, steady_forcing_field):
        s = steady_state(steady_forcing_field, 0.1)
        traj = integrate(s, (0.0, 1.0), 0.1, 0.1, constant_forcing(steady_forcing_field, (0.0, 1.0)))
        assert abs(energy_balance_defect(traj, 0.0, 1.0)) <= 1e-14 * energy(s) + 1e-15
