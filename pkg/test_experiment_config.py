# -*- coding: utf-8 -*-
"""实验配置的校验、哈希与初始测度采样"""

import copy
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from experiment_config import (
    ConfigError, GaussianInitial, _polarizations, canonical_json, clamp_to_ball, config_hash,
    gaussian_variances, load_config, make_forcing_signal, make_initial_measure, make_ladder, make_lattice,
    make_psis, parse_config, sample_gaussian_measure,
)
from measure_kit import mean_energy
from spectral_core import h_norm, is_divergence_free, random_field

BASE = {
    'name': 'single-mode',
    'box': {'viscosity': 0.1, 'cutoff': 1},
    'time': {'t1': 1.0, 'dt': 0.05},
    'initial': {'kind': 'explicit', 'atoms': [{'modes': [{'k': [1, 0, 0], 'direction': [0, 1, 0]}]}]},
}


MERGED = ('box', 'time', 'checks', 'solver')


def with_changes(**sections):
    """box/time/checks/solver 合并修改，其它段整段替换"""
    data = copy.deepcopy(BASE)
    for key, value in sections.items():
        if key in MERGED and key in data:
            data[key].update(value)
        else:
            data[key] = value
    return data


def error_path(data) -> str:
    with pytest.raises(ConfigError) as excinfo:
        parse_config(data)
    return excinfo.value.path


class TestParse:

    def test_minimal_config(self):
        cfg = parse_config(BASE)
        assert cfg.box.truncation == 'cube'
        assert cfg.time.t0 == 0.0
        assert cfg.checks.psis[0].kind == 'linear'
        assert make_lattice(cfg).size == 13

    def test_error_paths(self):
        assert error_path(with_changes(time={'dt': -1.0})) == 'time.dt'
        assert error_path(with_changes(time={'dt': 0.3})) == 'time.dt'
        assert error_path(with_changes(time={'t0': 2.0})) == 'time'
        assert error_path(with_changes(box={'viscosity': 0.0})) == 'box.viscosity'
        assert error_path(with_changes(box={'shape': 'torus'})) == 'box.shape'
        assert error_path(with_changes(initial={'kind': 'gaussian', 'count': 4})) == 'initial.seed'
        assert error_path(with_changes(checks={'names': ['energy_inequality', 'navier']})) == 'checks.names'

    def test_mode_errors_point_at_the_mode(self):
        bad_direction = {'kind': 'explicit', 'atoms': [{'modes': [{'k': [1, 0, 0], 'direction': [1, 0, 0]}]}]}
        assert error_path(with_changes(initial=bad_direction)) == 'initial.atoms[0].modes[0]'
        off_lattice = {'kind': 'explicit', 'atoms': [{'modes': [{'k': [3, 0, 0], 'direction': [0, 1, 0]}]}]}
        assert error_path(with_changes(initial=off_lattice)) == 'initial.atoms[0].modes[0]'

    def test_cross_field_errors(self):
        two_atoms = {'kind': 'explicit', 'weights': [0.5, 0.6],
                     'atoms': [{'modes': [{'k': [1, 0, 0], 'direction': [0, 1, 0]}]},
                               {'modes': [{'k': [0, 1, 0], 'direction': [1, 0, 0]}]}]}
        assert error_path(with_changes(initial=two_atoms)) == 'initial.weights'
        assert error_path(with_changes(solver={'galerkin_modes': 100})) == 'solver.galerkin_modes'
        assert error_path(with_changes(solver={'ladder': [2.0, 1.0]})) == 'solver.ladder'
        jump = {'jump': {'atom': 3, 'delta': 0.4, 'magnitude': 1.0}}
        assert error_path(with_changes(checks=jump)) == 'checks.jump.atom'
        short = {'jump': {'atom': 0, 'delta': 0.01, 'magnitude': 1.0}}
        assert error_path(with_changes(checks=short)) == 'checks.jump.delta'

    def test_forcing_must_tile_interval(self):
        gap = {'segments': [{'start': 0.0, 'end': 0.5, 'modes': []}, {'start': 0.6, 'end': 1.0, 'modes': []}]}
        assert error_path(with_changes(forcing=gap)) == 'forcing.segments'

    def test_abc_needs_2pi_box(self):
        abc = {'kind': 'explicit', 'atoms': [{'modes': [{'kind': 'abc'}]}]}
        assert parse_config(with_changes(initial=abc)).initial.atoms[0].modes[0].kind == 'abc'
        path = error_path(with_changes(initial=abc, box={'lengths': [1.0, 1.0, 1.0]}))
        assert path == 'initial.atoms[0].modes[0]'

    def test_message_carries_path(self):
        with pytest.raises(ConfigError, match=r"^time\.dt: "):
            parse_config(with_changes(time={'dt': 0.3}))


class TestBuild:

    def test_forcing_signal(self):
        forced = {'segments': [{'start': 0.0, 'end': 1.0,
                                'modes': [{'k': [1, 0, 0], 'direction': [0, 0, 1], 'amplitude': 0.5}]}]}
        cfg = parse_config(with_changes(forcing=forced))
        f = make_forcing_signal(cfg, make_lattice(cfg))
        assert_allclose(f.ess_sup_norm, 0.5)
        assert make_forcing_signal(parse_config(BASE), make_lattice(cfg)).is_zero()

    def test_psis_and_ladder(self):
        cfg = parse_config(with_changes(checks={'psis': [{'kind': 'linear'}, {'kind': 'saturating', 'a': 2.0}]},
                                        solver={'ladder': [1.0, 2.0]}))
        assert [p.name for p in make_psis(cfg)] == ['linear', 'saturating(a=2)']
        assert make_ladder(cfg).radii == (1.0, 2.0)
        assert make_ladder(parse_config(BASE)) is None

    def test_explicit_initial_measure(self):
        cfg = parse_config(BASE)
        mu = make_initial_measure(cfg, make_lattice(cfg))
        assert len(mu) == 1
        assert_allclose(mean_energy(mu), 1.0, rtol=1e-14)


class TestHash:

    def test_independent_of_key_order_and_defaults(self):
        reordered = json.loads(json.dumps(BASE, sort_keys=True))
        reordered = dict(reversed(list(reordered.items())))
        explicit_defaults = with_changes(box={'truncation': 'cube'}, time={'t0': 0.0})
        h = config_hash(parse_config(BASE))
        assert config_hash(parse_config(reordered)) == h
        assert config_hash(parse_config(explicit_defaults)) == h
        assert config_hash(parse_config(with_changes(box={'viscosity': 0.2}))) != h

    def test_canonical_json_is_compact(self):
        text = canonical_json(parse_config(BASE))
        assert ': ' not in text and ', ' not in text
        assert text.startswith('{"box":')


class TestLoad:

    def test_round_trip_from_file(self, tmp_path):
        path = tmp_path / 'exp.json'
        path.write_text(json.dumps(BASE), encoding='utf-8')
        assert config_hash(load_config(path)) == config_hash(parse_config(BASE))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / 'nope.json')

    def test_broken_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"box": ', encoding='utf-8')
        with pytest.raises(ConfigError) as excinfo:
            load_config(path)
        assert excinfo.value.path == '<root>'
        path.write_text('[1, 2]', encoding='utf-8')
        with pytest.raises(ConfigError, match="JSON 对象"):
            load_config(path)


class TestGaussianSampler:

    def test_variances_give_requested_energy(self, lattice_k2):
        sigma2 = gaussian_variances(lattice_k2, 1.5, 3.0)
        assert_allclose(4.0 * lattice_k2.volume * np.sum(sigma2), 3.0, rtol=1e-14)
        assert np.all(np.diff(sigma2) <= 0)

    def test_polarizations_are_orthonormal(self, lattice_k2):
        e1, e2 = _polarizations(lattice_k2.kappa)
        assert_allclose(np.einsum('ka,ka->k', e1, lattice_k2.kappa), 0.0, atol=1e-14)
        assert_allclose(np.einsum('ka,ka->k', e2, lattice_k2.kappa), 0.0, atol=1e-14)
        assert_allclose(np.einsum('ka,ka->k', e1, e2), 0.0, atol=1e-15)
        assert_allclose(np.linalg.norm(e2, axis=1), 1.0, rtol=1e-14)

    def test_deterministic_and_divergence_free(self, lattice_k1):
        spec = GaussianInitial(seed=3, count=8)
        a = sample_gaussian_measure(lattice_k1, spec)
        b = sample_gaussian_measure(lattice_k1, spec)
        for u, v in zip(a.atoms, b.atoms):
            assert np.array_equal(u.coeffs, v.coeffs)
            assert is_divergence_free(u)
        assert_allclose(a.weights, 1 / 8)

    def test_mean_energy_matches_prescription(self, lattice_k1):
        spec = GaussianInitial(seed=7, count=256, slope=1.0, energy=1.0)
        mu = sample_gaussian_measure(lattice_k1, spec)
        sigma2 = gaussian_variances(lattice_k1, 1.0, 1.0)
        # |u|² 是 2·size 个指数变量之和
        std = math.sqrt(8.0 * lattice_k1.volume ** 2 * float(np.sum(sigma2 ** 2)))
        assert abs(mean_energy(mu) - 1.0) <= 4.0 * std / math.sqrt(spec.count)

    def test_radius_clamps(self, lattice_k1):
        mu = sample_gaussian_measure(lattice_k1, GaussianInitial(seed=1, count=32, energy=4.0, radius=1.0))
        assert all(h_norm(u) <= 1.0 for u in mu.atoms)

    def test_on_sphere(self, lattice_k1):
        mu = sample_gaussian_measure(lattice_k1, GaussianInitial(seed=2, count=16, radius=2.0, on_sphere=True))
        norms = [h_norm(u) for u in mu.atoms]
        assert all(2.0 * (1 - 1e-12) <= r <= 2.0 for r in norms)

    def test_on_sphere_needs_radius(self):
        with pytest.raises(ValueError):
            GaussianInitial(seed=2, count=4, on_sphere=True)

    def test_clamp_to_ball(self, lattice_k1, rng):
        u = random_field(lattice_k1, rng, amplitude=10.0)
        clamped = clamp_to_ball(u, 3.0)
        assert 3.0 * (1 - 1e-12) <= h_norm(clamped) <= 3.0
        small = random_field(lattice_k1, rng, amplitude=1.0)
        assert clamp_to_ball(small, 3.0) is small
