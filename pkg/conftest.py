# -*- coding: utf-8 -*-
"""测试共用的格点、随机场和短轨道"""

import math

import numpy as np
import pytest

import ensemble_processor
import log_manager
from dynamics import constant_forcing, integrate, make_forcing
from ensemble_processor import EnsembleConfig, EnsembleProcessor
from measure_kit import CylindricalTestFunction, make_phase_measure
from spectral_core import BoxParams, build_lattice, random_field, unit_mode
from vf_pipeline import VFBuildConfig, construct_vf_measure

TWO_PI_BOX = (2 * math.pi, 2 * math.pi, 2 * math.pi)


@pytest.fixture(autouse=True)
def isolated_session_logs(tmp_path, monkeypatch):
    """会话日志写到临时目录，全局处理器每个测试重新创建"""
    monkeypatch.setattr(log_manager.log_manager, 'log_dir', tmp_path / 'session_logs')
    ensemble_processor.reset_global_processor()
    yield
    log_manager.log_manager.session = None
    ensemble_processor.reset_global_processor()


@pytest.fixture(scope='session')
def lattice_k1():
    return build_lattice(BoxParams(TWO_PI_BOX, 0.1, 1))


@pytest.fixture(scope='session')
def lattice_k2():
    return build_lattice(BoxParams(TWO_PI_BOX, 0.1, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def processor():
    return EnsembleProcessor(EnsembleConfig(max_workers=2, max_concurrent=2))


@pytest.fixture(scope='session')
def steady_forcing_field(lattice_k1):
    return unit_mode(lattice_k1, (1, 0, 0), (0, 0, 1), amplitude=0.5)


@pytest.fixture(scope='session')
def zero_forcing(lattice_k1):
    return make_forcing([], lattice_k1, (0.0, 1.0))


@pytest.fixture(scope='session')
def forced_trajectory(lattice_k1, steady_forcing_field):
    """K=1、常值外力下的一条随机初值轨道，t ∈ [0, 1]，dt = 0.02"""
    u0 = random_field(lattice_k1, np.random.default_rng(7), slope=1.0, amplitude=1.5)
    f = constant_forcing(steady_forcing_field, (0.0, 1.0))
    return integrate(u0, (0.0, 1.0), 0.02, 0.1, f)


@pytest.fixture(scope='session')
def decay_trajectory(lattice_k1, zero_forcing):
    """零外力下单模态 k=(1,0,0) 的精确指数衰减"""
    u0 = unit_mode(lattice_k1, (1, 0, 0), (0, 1, 0))
    return integrate(u0, (0.0, 1.0), 0.05, 0.1, zero_forcing)


def wide_family(rho, count=3, seed=5):
    """支撑远大于原子坐标范围的光滑检验函数，避免轨道穿过支撑边界"""
    rng = np.random.default_rng(seed)
    top = max(float(np.sqrt(np.max(traj.energies))) for traj in rho.atoms)
    family = []
    for i in range(count):
        k = 1 + i % 3
        fields = tuple(random_field(rho.lattice, rng, slope=1.0) for _ in range(k))
        family.append(CylindricalTestFunction(fields, radii=[4.0 * top] * k, center=np.zeros(k), c0=1.0,
                                              linear=rng.normal(size=k) / top,
                                              quadratic=np.diag(rng.normal(size=k)) / top ** 2,
                                              name=f'wide{i}'))
    return family


@pytest.fixture(scope='session')
def worker():
    return EnsembleProcessor(EnsembleConfig(max_workers=2, max_concurrent=2))


@pytest.fixture(scope='session')
def mu0(lattice_k1):
    """四个原子，|u| = 0.5, 1, 1.5, 2，权重 0.1..0.4"""
    atoms = [random_field(lattice_k1, np.random.default_rng(100 + j), slope=1.0, amplitude=a)
             for j, a in enumerate((0.5, 1.0, 1.5, 2.0))]
    return make_phase_measure(atoms, [0.1, 0.2, 0.3, 0.4])


@pytest.fixture(scope='session')
def short_forcing(steady_forcing_field):
    return constant_forcing(steady_forcing_field, (0.0, 0.5))


@pytest.fixture(scope='session')
def rho(mu0, short_forcing, worker):
    """t ∈ [0, 0.5]，dt = 0.05，ν = 0.1"""
    cfg = VFBuildConfig(interval=(0.0, 0.5), dt=0.05, nu=0.1, forcing=short_forcing)
    return construct_vf_measure(mu0, cfg, worker)
