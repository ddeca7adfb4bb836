# -*- coding: utf-8 -*-
"""
solution_checks.py - 单条轨道的检验

能量不等式（普通 / 加强 ψ 形式）、先验估计、衰减包络、R₀ 球不变性、
Ψ 泛函与右强连续性诊断。所有时间积分都是网格节点上的梯形公式。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from dynamics import (
    ForcingSignal, GridError, Trajectory, cumulative, node_integral, node_window, with_forcing,
)

logger = logging.getLogger(__name__)


class MisuseError(ValueError):
    """检验的前提条件不成立（例如 R < R₀ 时做球不变性检验）"""


# =========================
# 数据结构
# =========================

@dataclass
class InequalityReport:
    """不等式两端；passed ⇔ defect ≥ -tol"""
    check: str
    lhs: float
    rhs: float
    tol: float = 0.0
    t_prime: Optional[float] = None
    t: Optional[float] = None
    context: Dict[str, Any] = field(default_factory=dict)

    @property
    def defect(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.defect >= -self.tol)

    def to_row(self) -> Dict[str, Any]:
        row = {
            'check': self.check,
            't_prime': self.t_prime,
            't': self.t,
            'lhs': self.lhs,
            'rhs': self.rhs,
            'defect': self.defect,
            'tol': self.tol,
            'passed': self.passed,
        }
        row.update(self.context)
        return row


@dataclass(frozen=True)
class PsiFunction:
    """
    ψ 函数族：
    - linear: ψ(r) = r
    - saturating: ψ(r) = a(1 - e^{-r/a})，ψ' = e^{-r/a} ≤ 1
    """
    kind: str = 'linear'
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in ('linear', 'saturating'):
            raise ValueError(f"不支持的 ψ 类型: {self.kind}")
        if self.kind == 'saturating' and not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"saturating ψ 需要 a > 0: {self.a}")

    @property
    def name(self) -> str:
        return 'linear' if self.kind == 'linear' else f'saturating(a={self.a:g})'

    def value(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == 'linear':
            return r
        return -self.a * np.expm1(-r / self.a)

    def derivative(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == 'linear':
            return np.ones_like(r)
        return np.exp(-r / self.a)


LINEAR_PSI = PsiFunction('linear')


@dataclass
class BallReport:
    passed: bool
    radius: float
    max_norm: float
    first_violation: Optional[Tuple[int, float, float]] = None   # (节点, t, |u|)

    def to_row(self) -> Dict[str, Any]:
        row = {'check': 'ball_invariance', 'R': self.radius, 'max_norm': self.max_norm, 'passed': self.passed}
        if self.first_violation is not None:
            row.update({'violation_node': self.first_violation[0], 'violation_t': self.first_violation[1],
                        'violation_norm': self.first_violation[2]})
        return row


@dataclass
class ContinuityReport:
    """右强连续性诊断：h = t_n - t₀ 上的采样与外推"""
    samples: List[Tuple[float, float]]
    minimum: float
    slope: float
    limit: float
    magnitude: float
    tol: float
    passed: bool
    check: str = 'strong_continuity'

    def to_row(self) -> Dict[str, Any]:
        return {'check': self.check, 'minimum': self.minimum, 'slope': self.slope, 'limit': self.limit,
                'magnitude': self.magnitude, 'tol': self.tol, 'passed': self.passed}


# =========================
# 辅助
# =========================

def _resolve(traj: Trajectory, nu: Optional[float], f: Optional[ForcingSignal]) -> Tuple[Trajectory, float]:
    if f is not None and f is not traj.forcing:
        traj = with_forcing(traj, f)
    return traj, (traj.viscosity if nu is None else nu)


def calibrate_tolerance(defect_dt: float, defect_half: float, dt: float,
                        safety: float = Config.TOL_SAFETY, floor: float = Config.TOL_FLOOR) -> float:
    """
    Richardson 标定：d(dt) ≈ C·dt²，d(dt/2) ≈ C·dt²/4，
    C = |d₁ - d₂| / (¾dt²)，tol = safety·C·dt²
    """
    C = abs(defect_dt - defect_half) / (0.75 * dt * dt)
    return max(safety * C * dt * dt, floor)


def fit_limit(h: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    """对 (h, 值) 做二次拟合，返回 (h→0 的外推值, 线性拟合斜率)"""
    h = np.asarray(h, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    degree = min(2, h.size - 1)
    limit = float(np.polyfit(h, values, degree)[-1])
    slope = float(np.polyfit(h, values, 1)[0])
    return limit, slope


# =========================
# 能量不等式
# =========================

def strengthened_energy_inequality(traj: Trajectory, psi: PsiFunction, t_prime: float, t: float,
                                   tol: float = 0.0, nu: Optional[float] = None,
                                   f: Optional[ForcingSignal] = None) -> InequalityReport:
    """½ψ(|u(t)|²) + ν∫ψ'(|u|²)‖u‖² ≤ ½ψ(|u(t')|²) + ∫ψ'(|u|²)(f,u)"""
    traj, nu = _resolve(traj, nu, f)
    i0, i1 = node_window(traj, t_prime, t)
    energies = traj.energies
    weights = psi.derivative(energies)
    dissipation = node_integral(traj, i0, i1, weights * traj.enstrophies)
    work = float(np.sum(traj.weighted_work(weights)[i0:i1]))
    lhs = 0.5 * float(psi.value(energies[i1])) + nu * dissipation
    rhs = 0.5 * float(psi.value(energies[i0])) + work
    return InequalityReport('strengthened_energy_inequality', lhs, rhs, tol,
                            float(traj.grid.nodes[i0]), float(traj.grid.nodes[i1]), {'psi': psi.name})


def energy_inequality(traj: Trajectory, t_prime: float, t: float, nu: Optional[float] = None,
                      f: Optional[ForcingSignal] = None, tol: float = 0.0) -> InequalityReport:
    """½|u(t)|² + ν∫‖u‖² ≤ ½|u(t')|² + ∫(f,u)"""
    report = strengthened_energy_inequality(traj, LINEAR_PSI, t_prime, t, tol, nu, f)
    report.check = 'energy_inequality'
    return report


def energy_inequality_sweep(traj: Trajectory, psi: PsiFunction = LINEAR_PSI, tol: float = 0.0,
                            stride: int = 1) -> List[InequalityReport]:
    """对所有节点对 t' < t 做加强能量不等式（累计积分，O(n²) 次查表）"""
    nodes = traj.grid.nodes
    energies = traj.energies
    weights = psi.derivative(energies)
    D = cumulative(traj.dissipation_steps(weights))
    W = cumulative(traj.weighted_work(weights))
    half_psi = 0.5 * psi.value(energies)
    check = 'energy_inequality' if psi.kind == 'linear' else 'strengthened_energy_inequality'

    reports = []
    index = range(0, len(traj), stride)
    for i0 in index:
        for i1 in index:
            if i1 <= i0:
                continue
            lhs = float(half_psi[i1] + traj.viscosity * (D[i1] - D[i0]))
            rhs = float(half_psi[i0] + (W[i1] - W[i0]))
            reports.append(InequalityReport(check, lhs, rhs, tol, float(nodes[i0]), float(nodes[i1]),
                                            {'psi': psi.name}))
    return reports


def apriori_bound(traj: Trajectory, t_prime: float, t: float, nu: Optional[float] = None,
                  f: Optional[ForcingSignal] = None, lambda1: Optional[float] = None,
                  tol: float = 0.0) -> InequalityReport:
    """|u(t)|² + ν∫‖u‖² ≤ |u(t')|² + (1/νλ₁)‖f‖²_{L∞(t',t;H)}(t − t')"""
    traj, nu = _resolve(traj, nu, f)
    lambda1 = traj.lattice.lambda1 if lambda1 is None else lambda1
    i0, i1 = node_window(traj, t_prime, t)
    a, b = float(traj.grid.nodes[i0]), float(traj.grid.nodes[i1])
    f_norm = traj.forcing.norm_on(a, b)
    lhs = traj.energies[i1] + nu * node_integral(traj, i0, i1, traj.enstrophies)
    rhs = traj.energies[i0] + f_norm ** 2 * (b - a) / (nu * lambda1)
    return InequalityReport('apriori_bound', float(lhs), float(rhs), tol, a, b)


def decay_envelope(traj: Trajectory, t_prime: float, t: float, nu: Optional[float] = None,
                   f: Optional[ForcingSignal] = None, lambda1: Optional[float] = None,
                   tol: float = 0.0) -> InequalityReport:
    """|u(t)|² ≤ |u(t')|²e^{-νλ₁(t-t')} + ‖f‖²/(ν²λ₁²)·(1 - e^{-νλ₁(t-t')})"""
    traj, nu = _resolve(traj, nu, f)
    lambda1 = traj.lattice.lambda1 if lambda1 is None else lambda1
    i0, i1 = node_window(traj, t_prime, t)
    a, b = float(traj.grid.nodes[i0]), float(traj.grid.nodes[i1])
    rate = nu * lambda1 * (b - a)
    f_norm = traj.forcing.norm_on(a, b)
    rhs = traj.energies[i0] * np.exp(-rate) - f_norm ** 2 / (nu * lambda1) ** 2 * np.expm1(-rate)
    return InequalityReport('decay_envelope', float(traj.energies[i1]), float(rhs), tol, a, b)


def energy_monotonicity(traj: Trajectory, rtol: float = 1e-12) -> InequalityReport:
    """零外力下 |u(t)|² 逐节点不增"""
    if not traj.forcing.is_zero():
        raise MisuseError("能量单调性只在零外力下成立")
    energies = traj.energies
    rise = float(np.max(np.diff(energies))) if energies.size > 1 else 0.0
    return InequalityReport('energy_monotonicity', rise, 0.0, rtol * max(float(energies[0]), 1e-300),
                            traj.grid.t0, traj.grid.t1)


# =========================
# R₀ 与球不变性
# =========================

def compute_R0(f: ForcingSignal, nu: float, lambda1: float) -> float:
    """R₀ = ‖f‖_{L∞(I;H)} / (νλ₁)"""
    return f.ess_sup_norm / (nu * lambda1)


def ball_invariance(traj: Trajectory, R: float, tol: float = Config.BALL_RTOL) -> BallReport:
    """|u(t₀)| ≤ R 且 R ≥ R₀ 时，检查每个节点 |u(t)| ≤ R(1+tol)"""
    R0 = compute_R0(traj.forcing, traj.viscosity, traj.lattice.lambda1)
    if R < R0 * (1.0 - 1e-12):
        raise MisuseError(f"球不变性只对 R ≥ R₀ 成立: R={R:.6g}, R₀={R0:.6g}")
    norms = np.sqrt(traj.energies)
    if norms[0] > R * (1.0 + tol):
        raise MisuseError(f"初值不在球内: |u(t₀)|={norms[0]:.6g} > R={R:.6g}")

    bad = np.nonzero(norms > R * (1.0 + tol))[0]
    violation = None
    if bad.size:
        j = int(bad[0])
        violation = (j, float(traj.grid.nodes[j]), float(norms[j]))
        logger.warning(f"球不变性被破坏: 节点 {j}, t={violation[1]:.6g}, |u|={violation[2]:.6g} > R={R:.6g}")
    return BallReport(passed=violation is None, radius=R, max_norm=float(np.max(norms)), first_violation=violation)


# =========================
# Ψ 泛函与右强连续性
# =========================

def _projected_energies(traj: Trajectory, m: int) -> np.ndarray:
    if not 1 <= m <= traj.lattice.size:
        raise ValueError(f"Galerkin 截断 m={m} 超出范围 [1, {traj.lattice.size}]")
    head = traj.states[:, :m, :]
    return 2.0 * traj.lattice.volume * np.sum(np.abs(head) ** 2, axis=(1, 2))


def psi_profile(traj: Trajectory, m: Optional[int] = None) -> np.ndarray:
    """所有节点上的 Ψ(u, t_i)，i ≥ 1（第 0 个位置为 nan）"""
    energies = traj.energies if m is None else _projected_energies(traj, m)
    excess = energies - energies[0]
    integral = cumulative(0.5 * np.diff(traj.grid.nodes) * (excess[:-1] + excess[1:]))
    out = np.full(len(traj), np.nan)
    out[1:] = integral[1:] / (traj.grid.nodes[1:] - traj.grid.t0)
    return out


def psi_functional(traj: Trajectory, t: float, m: Optional[int] = None) -> float:
    """
    Ψ(u,t) = (t - t₀)⁻¹ ∫_{t₀}^{t} (|u(s)|² - |u(t₀)|²) ds

    给出 m 时换成 P_m u 的能量。
    """
    i = traj.grid.index_of(t)
    if i == 0:
        raise GridError(f"Ψ 需要 t > t₀: t={t}")
    energies = traj.energies if m is None else _projected_energies(traj, m)
    excess = energies - energies[0]
    return node_integral(traj, 0, i, excess) / (traj.grid.nodes[i] - traj.grid.t0)


def dyadic_times(traj: Trajectory, levels: int = Config.DYADIC_LEVELS, base: Optional[float] = None) -> List[float]:
    """t₀ + 2^j·base（j = levels-1, ..., 0），base 缺省为 dt；超出网格的点被丢弃"""
    base = traj.grid.dt if base is None else base
    times = [traj.grid.t0 + base * 2 ** j for j in range(levels - 1, -1, -1)]
    return [t for t in times if t <= traj.grid.t1 + Config.SNAP_RTOL * traj.grid.dt]


def strong_continuity_diagnostic(traj: Trajectory, times: Optional[Sequence[float]] = None,
                                 rtol: float = Config.CONTINUITY_RTOL,
                                 atol: Optional[float] = None) -> ContinuityReport:
    """
    在 t_n → t₀⁺ 上采样 Ψ，二次拟合外推 h → 0 的极限。
    判定：|极限| ≤ atol + rtol·max|Ψ_n|。

    不要求 min Ψ_n ≥ -tol：光滑衰减的轨道上 Ψ_n 是 O(h) 的带符号量，最小值与 -max|Ψ_n|
    同量级，按最小值判定会让每条正常衰减的轨道都失败。连续与跳跃只由外推极限区分，
    最小值照常记在 minimum 里。
    """
    times = dyadic_times(traj) if times is None else list(times)
    if len(times) < 3:
        raise ValueError(f"至少需要 3 个采样点，实际 {len(times)} 个")
    values = np.array([psi_functional(traj, t) for t in times])
    h = np.array([traj.grid.nodes[traj.grid.index_of(t)] - traj.grid.t0 for t in times])
    limit, slope = fit_limit(h, values)

    atol = Config.CONTINUITY_ATOL * max(1.0, float(traj.energies[0])) if atol is None else atol
    tol = atol + rtol * float(np.max(np.abs(values)))
    magnitude = float(values[int(np.argmax(h))])
    return ContinuityReport(samples=[(float(a), float(b)) for a, b in zip(h, values)],
                            minimum=float(np.min(values)), slope=slope, limit=limit,
                            magnitude=magnitude, tol=tol, passed=bool(abs(limit) <= tol))


def right_continuity_profile(traj: Trajectory, t_prime: float, count: int = Config.DYADIC_LEVELS,
                             rtol: float = Config.CONTINUITY_RTOL,
                             atol: Optional[float] = None) -> ContinuityReport:
    """
    t' 右侧节点上 |u(t)|² - |u(t')|² 的剖面，外推到 t → t'⁺。
    外推值为零说明 t' 处右强连续（t' 可以作为能量不等式的起点）。
    """
    i0 = traj.grid.index_of(t_prime)
    steps = [2 ** j for j in range(count - 1, -1, -1) if i0 + 2 ** j <= traj.grid.n_steps]
    if len(steps) < 3:
        raise ValueError(f"t'={t_prime} 右侧节点不足")
    gaps = np.array([traj.energies[i0 + s] - traj.energies[i0] for s in steps])
    h = np.array([traj.grid.nodes[i0 + s] - traj.grid.nodes[i0] for s in steps])
    limit, slope = fit_limit(h, gaps)

    atol = Config.CONTINUITY_ATOL * max(1.0, float(traj.energies[i0])) if atol is None else atol
    tol = atol + rtol * float(np.max(np.abs(gaps)))
    return ContinuityReport(samples=[(float(a), float(b)) for a, b in zip(h, gaps)],
                            minimum=float(np.min(gaps)), slope=slope, limit=limit,
                            magnitude=float(gaps[0]), tol=tol, passed=bool(abs(limit) <= tol),
                            check='right_continuity')
