# -*- coding: utf-8 -*-
"""
vf_pipeline.py - 由初始测度构造轨道测度，并对其做统计解检验

构造流程：(可选) Galerkin 推前 → (可选) 按半径分层 → 每个原子积分一条轨道 → 权重沿用。
检验：Liouville 残差、平均能量不等式（加强 / 普通）、初始时刻连续性、平均能量界、
载体检验（Ψ 泛函）、球内局部化、凸组合逼近诊断。

所有对原子的求和都按原子存储顺序进行。
"""

import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from config import Config
from dynamics import (
    ForcingSignal, GridError, Interval, Trajectory, cumulative, integrate,
    node_window, with_forcing,
)
from ensemble_processor import EnsembleProcessor, get_global_processor
from measure_kit import (
    CylindricalTestFunction, MeasureError, PhaseMeasure, RadiiLadder, TrajectoryMeasure,
    annuli_split, cyl_eval, cyl_grad, galerkin_pushforward, make_trajectory_measure,
    combine, weighted_sum,
)
from solution_checks import (
    LINEAR_PSI, ContinuityReport, InequalityReport, PsiFunction, fit_limit, psi_profile,
    strengthened_energy_inequality, strong_continuity_diagnostic,
)
from spectral_core import LatticeMismatchError, VelocityField, l2_inner

logger = logging.getLogger(__name__)


# =========================
# 数据结构
# =========================

@dataclass
class VFBuildConfig:
    """构造参数"""
    interval: Interval
    dt: float
    nu: float
    forcing: ForcingSignal
    ladder: Optional[RadiiLadder] = None
    galerkin_modes: Optional[int] = None
    method: str = 'convolution'


@dataclass
class StatReport:
    """检验报告：每一行都带检验名"""
    rows: List[Dict[str, Any]] = field(default_factory=list)
    series: Dict[str, List[float]] = field(default_factory=dict)
    psi_samples: List[Dict[str, Any]] = field(default_factory=list)
    refinement: List[Dict[str, Any]] = field(default_factory=list)
    test_family: List[Dict[str, Any]] = field(default_factory=list)
    annuli: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, report) -> None:
        self.rows.append(report.to_row() if hasattr(report, 'to_row') else dict(report))

    def extend(self, reports) -> None:
        for report in reports:
            self.add(report)

    @property
    def passed(self) -> bool:
        return all(bool(row.get('passed', True)) for row in self.rows)

    def failed_rows(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if not row.get('passed', True)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rows': self.rows,
            'series': self.series,
            'psi_samples': self.psi_samples,
            'refinement': self.refinement,
            'test_family': self.test_family,
            'annuli': self.annuli,
        }


@dataclass
class CarrierReport:
    passed: bool
    atom_reports: List[ContinuityReport]
    weighted_samples: List[Tuple[float, float]]
    weighted_magnitude: float
    synthetic_atoms: List[int]

    def to_row(self) -> Dict[str, Any]:
        failing = [j for j, r in enumerate(self.atom_reports) if not r.passed]
        return {'check': 'carrier_check', 'passed': self.passed, 'weighted_magnitude': self.weighted_magnitude,
                'failing_atoms': failing, 'synthetic_atoms': self.synthetic_atoms}


@dataclass
class LocalizationReport:
    passed: bool
    full_grid_passed: bool
    radius: float
    violations: List[Tuple[int, float, float]]   # (原子, t, |u|)

    @property
    def consistent(self) -> bool:
        return self.passed == self.full_grid_passed

    def to_row(self) -> Dict[str, Any]:
        return {'check': 'localization', 'R': self.radius, 'passed': self.passed,
                'full_grid_passed': self.full_grid_passed, 'violations': len(self.violations)}


@dataclass
class ConvergenceTable:
    rows: List[Dict[str, Any]]
    nonincreasing: Dict[str, bool]

    def gaps(self, phi_name: str) -> List[float]:
        return [row['sup_gap'] for row in self.rows if row['phi'] == phi_name]


# =========================
# 构造
# =========================

def construct_vf_measure(mu0: PhaseMeasure, cfg: VFBuildConfig,
                         processor: Optional[EnsembleProcessor] = None,
                         progress_callback: Optional[Callable[[int, str], None]] = None) -> TrajectoryMeasure:
    """
    每个原子积分一条轨道，权重沿用。
    给出 ladder 时按半径分层：每层单独积分成一个轨道测度，再以层质量做凸组合，
    原子放回输入顺序，各层质量记在 rho.annuli 里。分层时权重是 mass·(θ/mass)，
    与输入只差舍入误差。
    """
    if not mu0.lattice.same_as(cfg.forcing.lattice):
        raise LatticeMismatchError("初始测度与外力不在同一格点上")
    mu = mu0 if cfg.galerkin_modes is None else galerkin_pushforward(mu0, cfg.galerkin_modes)

    processor = processor or get_global_processor()
    task = partial(_integrate_atom, interval=cfg.interval, dt=cfg.dt, nu=cfg.nu,
                   forcing=cfg.forcing, method=cfg.method)
    if cfg.ladder is None:
        trajectories = processor.integrate_all(list(mu.atoms), task, progress_callback)
        return make_trajectory_measure(trajectories, mu.weights)

    parts = annuli_split(mu, cfg.ladder)
    logger.info("按半径分层: " + ', '.join(f"A{p.index + 1}({p.inner:g},{p.outer:g}] 质量 {p.mass:.6g}"
                                          for p in parts))
    pieces = []
    for part in parts:
        trajectories = processor.integrate_all(list(part.measure.atoms), task, progress_callback,
                                               indices=part.atom_indices)
        pieces.append((part.mass, make_trajectory_measure(trajectories, part.measure.weights)))
    mixed = combine(pieces)

    # combine 按层拼接原子，这里放回输入顺序
    order = [j for part in parts for j in part.atom_indices]
    atoms: List[Optional[Trajectory]] = [None] * len(order)
    weights = np.empty(len(order))
    for pos, j in enumerate(order):
        atoms[j] = mixed.atoms[pos]
        weights[j] = mixed.weights[pos]
    rho = make_trajectory_measure(atoms, weights)
    return replace(rho, annuli=tuple(part.describe() for part in parts))


def _integrate_atom(u0: VelocityField, interval: Interval, dt: float, nu: float,
                    forcing: ForcingSignal, method: str) -> Trajectory:
    return integrate(u0, interval, dt, nu, forcing, method=method)


def inject_jump(traj: Trajectory, delta: float, jump: float) -> Trajectory:
    """
    人造反例：把 (t₀, t₀+δ] 上每个状态放大到 |u|² = |u(t₀)|² + jump，标记为 synthetic。
    """
    if not jump > 0:
        raise ValueError(f"跳跃幅度必须为正: {jump}")
    last = traj.grid.index_of(traj.grid.t0 + delta)
    if last == 0:
        raise GridError(f"δ={delta} 小于一个时间步")
    target = traj.energies[0] + jump
    states = np.array(traj.states)
    for i in range(1, last + 1):
        e = traj.energies[i]
        if e == 0.0:
            raise ValueError(f"节点 {i} 处状态为零，无法放大")
        states[i] = states[i] * np.sqrt(target / e)
    return Trajectory(grid=traj.grid, states=states, lattice=traj.lattice, viscosity=traj.viscosity,
                      forcing=traj.forcing, solver=traj.solver, synthetic=True)


# =========================
# Liouville 方程
# =========================

def _resolve(rho: TrajectoryMeasure, nu: Optional[float], f: Optional[ForcingSignal]):
    atoms = rho.atoms
    if f is not None:
        atoms = tuple(traj if traj.forcing is f else with_forcing(traj, f) for traj in atoms)
    return atoms, (rho.viscosity if nu is None else nu)


def _drift(traj: Trajectory, nu: float) -> np.ndarray:
    """G(u) = -νAu - B(u,u) 逐节点系数，依赖 traj.advection 的缓存"""
    return -nu * traj.lattice.eigenvalues[None, :, None] * traj.states - traj.advection


def _atom_liouville(traj: Trajectory, phi: CylindricalTestFunction, i0: int, i1: int,
                    drift: np.ndarray) -> Tuple[float, float, float]:
    """(Φ(u(t')), Φ(u(t)), ∫⟨F(u),Φ'(u)⟩ds)"""
    lat = traj.lattice
    grads = [cyl_grad(phi, traj.state(i)) for i in range(i0, i1 + 1)]
    inner = np.array([l2_inner(VelocityField(lat, drift[i]), g) for i, g in zip(range(i0, i1 + 1), grads)])
    nodes = traj.grid.nodes
    integral = float(trapezoid(inner, nodes[i0:i1 + 1]))
    for i in range(i0, i1):
        f = traj.step_forcing(i)
        integral += 0.5 * (nodes[i + 1] - nodes[i]) * (l2_inner(f, grads[i - i0]) + l2_inner(f, grads[i + 1 - i0]))
    return cyl_eval(phi, traj.state(i0)), cyl_eval(phi, traj.state(i1)), integral


def liouville_defects(rho: TrajectoryMeasure, family: Sequence[CylindricalTestFunction],
                      t_prime: float, t: float, nu: Optional[float] = None,
                      f: Optional[ForcingSignal] = None) -> List[float]:
    """
    ∫Φdρ_t - ∫Φdρ_{t'} - ∫_{t'}^{t}∫⟨F(u),Φ'(u)⟩dρ_s ds，带符号，对函数族中每个 Φ。
    ⟨F(u),Φ'⟩ = (f,Φ') - ν((u,Φ')) - b(u,u,Φ')，漂移项按原子缓存后在函数族间共享。
    """
    atoms, nu = _resolve(rho, nu, f)
    i0, i1 = node_window(atoms[0], t_prime, t)
    drifts = [_drift(traj, nu) for traj in atoms]
    defects = []
    for phi in family:
        parts = [_atom_liouville(traj, phi, i0, i1, drift) for traj, drift in zip(atoms, drifts)]
        start = weighted_sum(rho.weights, [p[0] for p in parts])
        end = weighted_sum(rho.weights, [p[1] for p in parts])
        flux = weighted_sum(rho.weights, [p[2] for p in parts])
        defects.append(end - start - flux)
    return defects


def liouville_residuals(rho: TrajectoryMeasure, family: Sequence[CylindricalTestFunction],
                        t_prime: float, t: float, nu: Optional[float] = None,
                        f: Optional[ForcingSignal] = None) -> List[float]:
    return [abs(d) for d in liouville_defects(rho, family, t_prime, t, nu, f)]


def liouville_residual(rho: TrajectoryMeasure, phi: CylindricalTestFunction, t_prime: float, t: float,
                       nu: Optional[float] = None, f: Optional[ForcingSignal] = None) -> float:
    return liouville_residuals(rho, [phi], t_prime, t, nu, f)[0]


# =========================
# 平均能量不等式
# =========================

def mean_energy_inequality(rho: TrajectoryMeasure, psi: PsiFunction, t_prime: float, t: float,
                           nu: Optional[float] = None, f: Optional[ForcingSignal] = None,
                           tol: float = 0.0) -> InequalityReport:
    """½∫ψ(|u(t)|²)dρ + ν∫∫ψ'(|u|²)‖u‖² ≤ ½∫ψ(|u(t')|²)dρ + ∫∫ψ'(|u|²)(f,u)"""
    atoms, nu = _resolve(rho, nu, f)
    reports = [strengthened_energy_inequality(traj, psi, t_prime, t, tol, nu) for traj in atoms]
    lhs = weighted_sum(rho.weights, [r.lhs for r in reports])
    rhs = weighted_sum(rho.weights, [r.rhs for r in reports])
    return InequalityReport('mean_energy_inequality', lhs, rhs, tol, reports[0].t_prime, reports[0].t,
                            {'psi': psi.name})


def weak_mean_energy_inequality(rho: TrajectoryMeasure, t_prime: float, t: float,
                                nu: Optional[float] = None, f: Optional[ForcingSignal] = None,
                                tol: float = 0.0) -> InequalityReport:
    """不带 ψ 的平均能量不等式；与加强形式并列报告，不断言两者等价"""
    report = mean_energy_inequality(rho, LINEAR_PSI, t_prime, t, nu, f, tol)
    report.check = 'weak_mean_energy_inequality'
    return report


def mean_energy_inequality_sweep(rho: TrajectoryMeasure, psi: PsiFunction, tol: float = 0.0,
                                 stride: int = 1) -> List[InequalityReport]:
    """所有节点对上的加强平均能量不等式（累计积分查表）"""
    nodes = rho.grid.nodes
    n = len(rho.atoms[0])
    half_psi = np.zeros(n)
    D = np.zeros(n)
    W = np.zeros(n)
    for w, traj in zip(rho.weights, rho.atoms):
        weights = psi.derivative(traj.energies)
        half_psi = half_psi + w * 0.5 * psi.value(traj.energies)
        D = D + w * traj.viscosity * cumulative(traj.dissipation_steps(weights))
        W = W + w * cumulative(traj.weighted_work(weights))

    reports = []
    index = range(0, n, stride)
    for i0 in index:
        for i1 in index:
            if i1 <= i0:
                continue
            reports.append(InequalityReport('mean_energy_inequality', float(half_psi[i1] + D[i1] - D[i0]),
                                            float(half_psi[i0] + W[i1] - W[i0]), tol,
                                            float(nodes[i0]), float(nodes[i1]), {'psi': psi.name}))
    return reports


def mean_energy_series(rho: TrajectoryMeasure) -> Tuple[np.ndarray, np.ndarray]:
    """逐节点的 ∫|u|²dρ_t 与 ∫‖u‖²dρ_t"""
    n = len(rho.atoms[0])
    energy = np.array([weighted_sum(rho.weights, [traj.energies[i] for traj in rho.atoms]) for i in range(n)])
    enstrophy = np.array([weighted_sum(rho.weights, [traj.enstrophies[i] for traj in rho.atoms]) for i in range(n)])
    return energy, enstrophy


def mean_energy_bound(rho: TrajectoryMeasure, nu: Optional[float] = None, lambda1: Optional[float] = None,
                      f: Optional[ForcingSignal] = None, tol: float = 0.0) -> List[InequalityReport]:
    """每个节点 t：∫|u(t)|²dρ ≤ ∫|u(t₀)|²dρ + (1/νλ₁)‖f‖²_{L∞}(t - t₀)"""
    atoms, nu = _resolve(rho, nu, f)
    lambda1 = rho.lattice.lambda1 if lambda1 is None else lambda1
    f_norm = atoms[0].forcing.ess_sup_norm
    energy, _ = mean_energy_series(rho)
    nodes = rho.grid.nodes
    return [InequalityReport('mean_energy_bound', float(energy[i]),
                             float(energy[0] + f_norm ** 2 * (nodes[i] - nodes[0]) / (nu * lambda1)),
                             tol, float(nodes[0]), float(nodes[i]))
            for i in range(len(nodes))]


# =========================
# 初始时刻连续性与载体
# =========================

def initial_continuity(rho: TrajectoryMeasure, psi: PsiFunction, delta: float,
                       tol: float = 1e-6) -> ContinuityReport:
    """
    t_n = t₀ + 2^j·dt ≤ t₀ + δ 上的 ∫ψ(|u(t_n)|²)dρ - ∫ψ(|u(t₀)|²)dρ，
    二次拟合外推到 h → 0，|极限| ≤ tol 为通过。
    """
    grid = rho.grid
    last = int(np.floor((delta + Config.SNAP_RTOL * grid.dt) / grid.dt))
    if last < 4:
        raise ValueError(f"δ={delta} 内只有 {max(last, 0)} 个节点，至少需要 4 个")
    steps = []
    s = 1
    while s <= min(last, grid.n_steps):
        steps.append(s)
        s *= 2
    if len(steps) < 3:
        raise ValueError("二进采样点不足 3 个")
    base = weighted_sum(rho.weights, [float(psi.value(traj.energies[0])) for traj in rho.atoms])
    gaps = np.array([weighted_sum(rho.weights, [float(psi.value(traj.energies[i])) for traj in rho.atoms]) - base
                     for i in steps])
    h = np.array([grid.nodes[i] - grid.t0 for i in steps])
    limit, slope = fit_limit(h, gaps)
    return ContinuityReport(samples=[(float(a), float(abs(b))) for a, b in zip(h, gaps)],
                            minimum=float(np.min(np.abs(gaps))), slope=slope, limit=limit,
                            magnitude=float(np.max(np.abs(gaps))), tol=tol, passed=bool(abs(limit) <= tol),
                            check='initial_continuity')


def carrier_check(rho: TrajectoryMeasure, times: Optional[Sequence[float]] = None) -> CarrierReport:
    """逐原子做 Ψ 诊断；全部通过才判定为由强连续轨道承载"""
    reports = [strong_continuity_diagnostic(traj, times) for traj in rho.atoms]
    hs = [h for h, _ in reports[0].samples]
    weighted = [(h, weighted_sum(rho.weights, [r.samples[k][1] for r in reports])) for k, h in enumerate(hs)]
    largest = int(np.argmax(hs))
    synthetic = [j for j, traj in enumerate(rho.atoms) if traj.synthetic]
    passed = all(r.passed for r in reports)
    if not passed:
        logger.warning(f"载体检验未通过: 原子 {[j for j, r in enumerate(reports) if not r.passed]}")
    return CarrierReport(passed=passed, atom_reports=reports, weighted_samples=weighted,
                         weighted_magnitude=weighted[largest][1], synthetic_atoms=synthetic)


def carrier_bound(rho: TrajectoryMeasure, delta: float, tol: float = 0.0) -> InequalityReport:
    """∫Ψ(u, t₀+δ)dρ ≤ δ‖f‖²_{L∞}/(2νλ₁)"""
    i = rho.grid.index_of(rho.grid.t0 + delta)
    if i == 0:
        raise GridError(f"δ={delta} 小于一个时间步")
    weighted = weighted_sum(rho.weights, [psi_profile(traj)[i] for traj in rho.atoms])
    h = float(rho.grid.nodes[i] - rho.grid.t0)
    f_norm = rho.forcing.ess_sup_norm
    bound = h * f_norm ** 2 / (2.0 * rho.viscosity * rho.lattice.lambda1)
    return InequalityReport('carrier_bound', float(weighted), float(bound), tol, rho.grid.t0,
                            float(rho.grid.nodes[i]), {'delta': h})


def localization_check(rho: TrajectoryMeasure, R: float, time_samples: Sequence[float],
                       rtol: float = Config.LOCALIZATION_RTOL) -> LocalizationReport:
    """采样时刻上 |u(t)| ≤ R(1+rtol)；同时与全部节点的结论对照"""
    limit = R * (1.0 + rtol)
    indices = sorted({rho.grid.index_of(t) for t in time_samples})
    nodes = rho.grid.nodes
    violations = []
    full_ok = True
    for j, traj in enumerate(rho.atoms):
        norms = np.sqrt(traj.energies)
        if np.any(norms > limit):
            full_ok = False
        for i in indices:
            if norms[i] > limit:
                violations.append((j, float(nodes[i]), float(norms[i])))
    return LocalizationReport(passed=not violations, full_grid_passed=full_ok, radius=R, violations=violations)


# =========================
# 凸组合逼近
# =========================

def subsample_sequence(target: TrajectoryMeasure, sizes: Sequence[int]) -> List[TrajectoryMeasure]:
    """前 n 个原子，权重重新归一化；n = 原子总数时与目标相同"""
    out = []
    for n in sizes:
        if not 1 <= n <= len(target):
            raise MeasureError(f"子样本大小 {n} 超出 [1, {len(target)}]")
        if n == len(target):
            out.append(target)
            continue
        w = np.array(target.weights[:n])
        total = weighted_sum(np.ones(n), w)
        out.append(make_trajectory_measure(target.atoms[:n], w / total))
    return out


def mixture_sequence(target: TrajectoryMeasure, sizes: Sequence[int],
                     seed: Optional[TrajectoryMeasure] = None) -> List[TrajectoryMeasure]:
    """ρ_n = (n/N)·target + (1 - n/N)·seed，seed 缺省为目标第一个原子上的 Dirac 测度"""
    seed = seed or make_trajectory_measure([target.atoms[0]], [1.0])
    N = len(target)
    out = []
    for n in sizes:
        if not 0 <= n <= N:
            raise MeasureError(f"混合序号 {n} 超出 [0, {N}]")
        c = n / N
        out.append(combine([(c, target), (1.0 - c, seed)]))
    return out


def convex_approx_diagnostic(sequence: Sequence[TrajectoryMeasure], target: TrajectoryMeasure,
                             family: Sequence[CylindricalTestFunction], J: Interval,
                             atol: float = 1e-14) -> ConvergenceTable:
    """对每个 ρ_n 与每个 Φ：sup_{t∈J} |∫Φdρ_t^{(n)} - ∫Φdρ_t|"""
    if not family:
        raise MeasureError("检验函数族为空")
    i0, i1 = node_window(target.atoms[0], J[0], J[1])
    for k, rho in enumerate(sequence):
        if not rho.grid.compatible(target.grid):
            raise GridError(f"序列第 {k} 项的时间网格与目标不一致")

    cache: Dict[Tuple[int, int], np.ndarray] = {}

    def values(traj: Trajectory, p: int) -> np.ndarray:
        key = (id(traj), p)
        if key not in cache:
            cache[key] = np.array([cyl_eval(family[p], traj.state(i)) for i in range(i0, i1 + 1)])
        return cache[key]

    def expectation(rho: TrajectoryMeasure, p: int) -> np.ndarray:
        per_atom = [values(traj, p) for traj in rho.atoms]
        return np.array([weighted_sum(rho.weights, [v[i] for v in per_atom]) for i in range(i1 - i0 + 1)])

    nodes = target.grid.nodes
    rows = []
    nonincreasing = {}
    for p, phi in enumerate(family):
        name = phi.name or f'phi{p}'
        reference = expectation(target, p)
        previous = None
        monotone = True
        for k, rho in enumerate(sequence):
            gaps = np.abs(expectation(rho, p) - reference)
            j = int(np.argmax(gaps))
            sup_gap = float(gaps[j])
            if previous is not None and sup_gap > previous + atol:
                monotone = False
            previous = sup_gap
            rows.append({'n': k, 'atoms': len(rho), 'phi': name, 'sup_gap': sup_gap,
                         't_max': float(nodes[i0 + j])})
        nonincreasing[name] = monotone
    return ConvergenceTable(rows=rows, nonincreasing=nonincreasing)


# =========================
# 投影族的统计解检验
# =========================

def projection_battery(rho: TrajectoryMeasure, family: Sequence[CylindricalTestFunction],
                       psis: Sequence[PsiFunction], tol: float = 0.0, stride: int = 1) -> StatReport:
    """
    {Π_t ρ} 上的统计解条件：Liouville 方程、平均能量不等式、
    平均能量有界、平均拟能可积。
    """
    report = StatReport(test_family=[phi.describe() for phi in family])
    grid = rho.grid
    windows = [(grid.t0, grid.t1)]
    if grid.n_steps >= 2:
        windows.append((float(grid.nodes[grid.n_steps // 2]), grid.t1))
    for a, b in windows:
        for phi, residual in zip(family, liouville_residuals(rho, family, a, b)):
            report.add({'check': 'liouville', 'phi': phi.name, 't_prime': a, 't': b,
                        'residual': residual, 'tol': tol, 'passed': residual <= tol})

    for psi in psis:
        report.extend(mean_energy_inequality_sweep(rho, psi, tol, stride))
    report.add(weak_mean_energy_inequality(rho, grid.t0, grid.t1, tol=tol))

    energy, enstrophy = mean_energy_series(rho)
    enstrophy_integral = float(trapezoid(enstrophy, grid.nodes))
    report.add({'check': 'mean_energy_bounded', 'sup': float(np.max(energy)),
                'passed': bool(np.all(np.isfinite(energy)))})
    report.add({'check': 'mean_enstrophy_integrable', 'integral': enstrophy_integral,
                'passed': bool(np.isfinite(enstrophy_integral))})
    report.series.update({'t': grid.nodes.tolist(), 'mean_energy': energy.tolist(),
                          'mean_enstrophy': enstrophy.tolist()})
    return report
