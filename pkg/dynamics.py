# -*- coding: utf-8 -*-
"""
dynamics.py - Galerkin 方程 du/dt + νAu + B(u,u) = f 的时间积分与轨道操作

积分格式：对偏离稳态 Stokes 解 s = (νA)⁻¹f 的部分 d = u - s 做积分因子 RK4，
粘性半群 e^{-νλΔt} 精确作用，只有非线性项用 RK4 推进。外力在每一步内取步中点所在分段的值。

所有时间查询都吸附到网格节点上，不做节点之间的插值。
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from config import Config
from spectral_core import (
    LatticeMismatchError, VelocityField, WaveLattice, enstrophy, energy, h_norm,
    is_divergence_free, l2_inner, nonlinear_B, stokes_solve, v_inner, zeros,
)

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]


class GridError(ValueError):
    """时间不在网格节点上，或子区间不合法"""


class PastingError(ValueError):
    """两段轨道无法拼接"""


class IntegrationError(RuntimeError):
    """积分过程中出现非有限状态"""

    def __init__(self, message: str, time: Optional[float] = None, atom_index: Optional[int] = None):
        super().__init__(message)
        self.time = time
        self.atom_index = atom_index

    def __str__(self):
        parts = [super().__str__()]
        if self.time is not None:
            parts.append(f"t={self.time:.6g}")
        if self.atom_index is not None:
            parts.append(f"原子 #{self.atom_index}")
        return ' | '.join(parts)


# =========================
# 时间网格
# =========================

@dataclass(frozen=True, eq=False)
class TimeGrid:
    """均匀时间网格，nodes[0] = t0, nodes[-1] = t1"""
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise GridError("时间网格至少需要两个节点")
        steps = np.diff(nodes)
        if np.any(steps <= 0):
            raise GridError("时间网格必须严格递增")
        span = nodes[-1] - nodes[0]
        if np.max(np.abs(steps - span / steps.size)) > Config.GRID_RTOL * span:
            raise GridError("时间网格不均匀")
        nodes.setflags(write=False)
        object.__setattr__(self, 'nodes', nodes)

    @classmethod
    def uniform(cls, t0: float, t1: float, dt: float) -> 'TimeGrid':
        if not t1 > t0:
            raise GridError(f"区间非法: [{t0}, {t1}]")
        if not dt > 0:
            raise GridError(f"时间步长必须为正: {dt}")
        n = int(round((t1 - t0) / dt))
        if n < 1 or abs(n * dt - (t1 - t0)) > Config.GRID_RTOL * (t1 - t0):
            raise GridError(f"dt={dt} 不能整除区间长度 {t1 - t0}")
        return cls(np.linspace(t0, t1, n + 1))

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def t1(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return int(self.nodes.size - 1)

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def index_of(self, t: float) -> int:
        """把 t 吸附到最近的节点；偏离超过 SNAP_RTOL·dt 时报错"""
        j = int(round((t - self.t0) / self.dt))
        if 0 <= j <= self.n_steps and abs(t - self.nodes[j]) <= Config.SNAP_RTOL * self.dt:
            return j
        raise GridError(f"t={t} 不在网格节点上")

    def sub(self, i0: int, i1: int) -> 'TimeGrid':
        return TimeGrid(self.nodes[i0:i1 + 1])

    def compatible(self, other: 'TimeGrid') -> bool:
        return (self.n_steps == other.n_steps
                and abs(self.dt - other.dt) <= Config.GRID_RTOL * self.dt
                and abs(self.t0 - other.t0) <= Config.SNAP_RTOL * self.dt)

    def to_dict(self) -> Dict:
        return {'t0': self.t0, 't1': self.t1, 'n_steps': self.n_steps}


# =========================
# 外力
# =========================

@dataclass(frozen=True, eq=False)
class ForcingSegment:
    start: float
    end: float
    field: VelocityField


@dataclass(frozen=True, eq=False)
class ForcingSignal:
    """时间上分段常值的外力"""
    lattice: WaveLattice
    segments: Tuple[ForcingSegment, ...]

    @property
    def interval(self) -> Interval:
        return self.segments[0].start, self.segments[-1].end

    @cached_property
    def ess_sup_norm(self) -> float:
        """‖f‖_{L∞(I;H)}"""
        return max(h_norm(seg.field) for seg in self.segments)

    @cached_property
    def _starts(self) -> np.ndarray:
        return np.array([seg.start for seg in self.segments])

    def segment_index(self, t: float) -> int:
        j = int(np.searchsorted(self._starts, t, side='right')) - 1
        return min(max(j, 0), len(self.segments) - 1)

    def field_at(self, t: float) -> VelocityField:
        return self.segments[self.segment_index(t)].field

    def norm_on(self, a: float, b: float) -> float:
        """‖f‖_{L∞(a,b;H)}"""
        norms = [h_norm(seg.field) for seg in self.segments if seg.end > a and seg.start < b]
        return max(norms) if norms else 0.0

    def restricted(self, a: float, b: float) -> 'ForcingSignal':
        kept = [ForcingSegment(max(seg.start, a), min(seg.end, b), seg.field)
                for seg in self.segments if seg.end > a and seg.start < b]
        return ForcingSignal(self.lattice, tuple(kept))

    def is_zero(self) -> bool:
        return all(not np.any(seg.field.coeffs) for seg in self.segments)


def make_forcing(spec: Sequence[Tuple[float, float, VelocityField]], lattice: WaveLattice,
                 interval: Interval, grid: Optional[TimeGrid] = None) -> ForcingSignal:
    """
    由分段数据 [(start, end, field), ...] 构造外力。

    空列表表示零外力。分段必须恰好铺满区间、互不重叠，每段场必须无散度。
    给出 grid 时还要求分段端点落在网格节点上。
    """
    t0, t1 = float(interval[0]), float(interval[1])
    if not t1 > t0:
        raise ValueError(f"区间非法: [{t0}, {t1}]")
    if not spec:
        return ForcingSignal(lattice, (ForcingSegment(t0, t1, zeros(lattice)),))

    span_tol = Config.SNAP_RTOL * (t1 - t0)
    ordered = sorted(spec, key=lambda seg: seg[0])
    segments = []
    cursor = t0
    for start, end, fld in ordered:
        start, end = float(start), float(end)
        if not end > start:
            raise ValueError(f"外力分段非法: [{start}, {end}]")
        if start < cursor - span_tol:
            raise ValueError(f"外力分段重叠: [{start}, {end}] 与前一段")
        if start > cursor + span_tol:
            raise ValueError(f"外力分段之间有空隙: {cursor} → {start}")
        if not fld.lattice.same_as(lattice):
            raise LatticeMismatchError("外力场不在目标格点上")
        if not is_divergence_free(fld):
            raise ValueError(f"外力分段 [{start}, {end}] 的场不是无散度的")
        if grid is not None:
            grid.index_of(start)
            grid.index_of(end)
        segments.append(ForcingSegment(cursor, end, fld))
        cursor = end
    if abs(cursor - t1) > span_tol:
        raise ValueError(f"外力分段没有覆盖整个区间，终点 {cursor} ≠ {t1}")
    last = segments[-1]
    segments[-1] = ForcingSegment(last.start, t1, last.field)
    return ForcingSignal(lattice, tuple(segments))


def constant_forcing(fld: VelocityField, interval: Interval) -> ForcingSignal:
    return make_forcing([(interval[0], interval[1], fld)], fld.lattice, interval)


def steady_state(f_field: VelocityField, nu: float) -> VelocityField:
    """稳态 Stokes 解 (νA)⁻¹f；单模态外力下它也是完整方程的不动点"""
    return stokes_solve(f_field) * (1.0 / nu)


# =========================
# 轨道
# =========================

@dataclass(frozen=True, eq=False)
class Trajectory:
    """网格上的 Galerkin 解，states[i] 是 nodes[i] 时刻的系数"""
    grid: TimeGrid
    states: np.ndarray
    lattice: WaveLattice
    viscosity: float
    forcing: ForcingSignal
    solver: str = 'ifrk4'
    synthetic: bool = False

    def __post_init__(self):
        states = np.array(self.states, dtype=np.complex128)
        if states.shape != (self.grid.nodes.size, self.lattice.size, 3):
            raise ValueError(f"状态数组形状 {states.shape} 与网格/格点不一致")
        states.setflags(write=False)
        object.__setattr__(self, 'states', states)

    def __len__(self) -> int:
        return int(self.grid.nodes.size)

    def state(self, i: int) -> VelocityField:
        return VelocityField(self.lattice, self.states[i])

    @property
    def initial(self) -> VelocityField:
        return self.state(0)

    @property
    def final(self) -> VelocityField:
        return self.state(len(self) - 1)

    def step_forcing(self, i: int) -> VelocityField:
        nodes = self.grid.nodes
        return self.forcing.field_at(0.5 * (nodes[i] + nodes[i + 1]))

    @cached_property
    def energies(self) -> np.ndarray:
        """|u(t_i)|² 逐节点"""
        return np.array([energy(self.state(i)) for i in range(len(self))])

    @cached_property
    def enstrophies(self) -> np.ndarray:
        """‖u(t_i)‖² 逐节点"""
        return np.array([enstrophy(self.state(i)) for i in range(len(self))])

    @cached_property
    def advection(self) -> np.ndarray:
        """B(u(t_i), u(t_i)) 逐节点的系数"""
        return np.stack([nonlinear_B(self.state(i), self.state(i)).coeffs for i in range(len(self))])

    @cached_property
    def forcing_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """每一步的 (f_i, u_i) 与 (f_i, u_{i+1})"""
        n = self.grid.n_steps
        left, right = np.empty(n), np.empty(n)
        for i in range(n):
            f = self.step_forcing(i)
            left[i] = l2_inner(f, self.state(i))
            right[i] = l2_inner(f, self.state(i + 1))
        return left, right

    def weighted_work(self, weights: Optional[np.ndarray] = None) -> np.ndarray:
        """∫w(t)(f,u)dt 的逐步梯形贡献，w 为节点权重（缺省为 1）"""
        left, right = self.forcing_pairs
        dt = np.diff(self.grid.nodes)
        if weights is None:
            return 0.5 * dt * (left + right)
        return 0.5 * dt * (weights[:-1] * left + weights[1:] * right)

    @cached_property
    def work_steps(self) -> np.ndarray:
        """外力功 ∫(f,u) 的逐步梯形贡献"""
        return self.weighted_work()

    def dissipation_steps(self, weights: Optional[np.ndarray] = None) -> np.ndarray:
        """∫w(t)‖u‖²dt 的逐步梯形贡献"""
        g = self.enstrophies if weights is None else weights * self.enstrophies
        return 0.5 * np.diff(self.grid.nodes) * (g[:-1] + g[1:])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.states)))

    def meta(self) -> Dict:
        return {
            'solver': self.solver,
            'nu': self.viscosity,
            'lattice': self.lattice.descriptor(),
            'grid': self.grid.to_dict(),
            'synthetic': self.synthetic,
        }


# =========================
# 积分
# =========================

def integrate(u0: VelocityField, interval: Interval, dt: float, nu: float, f: ForcingSignal,
              method: str = 'convolution') -> Trajectory:
    """积分因子 RK4；同样的输入逐位产生同样的轨道"""
    lat = u0.lattice
    if not f.lattice.same_as(lat):
        raise LatticeMismatchError("外力与初值不在同一格点上")
    grid = TimeGrid.uniform(interval[0], interval[1], dt)
    nodes = grid.nodes
    h = grid.dt
    decay = np.exp(-nu * lat.eigenvalues * h)[:, None]
    half_decay = np.exp(-0.5 * nu * lat.eigenvalues * h)[:, None]

    steady_cache: Dict[int, np.ndarray] = {}

    def drift(s: np.ndarray, d: np.ndarray) -> np.ndarray:
        w = VelocityField(lat, s + d)
        return -nonlinear_B(w, w, method=method).coeffs

    states = np.empty((nodes.size, lat.size, 3), dtype=np.complex128)
    states[0] = u0.coeffs
    c = np.array(u0.coeffs)
    for i in range(grid.n_steps):
        seg = f.segment_index(0.5 * (nodes[i] + nodes[i + 1]))
        if seg not in steady_cache:
            steady_cache[seg] = steady_state(f.segments[seg].field, nu).coeffs
        s = steady_cache[seg]

        d = c - s
        k1 = drift(s, d)
        k2 = drift(s, half_decay * (d + 0.5 * h * k1))
        k3 = drift(s, half_decay * d + 0.5 * h * k2)
        k4 = drift(s, decay * d + h * half_decay * k3)
        d = decay * d + (h / 6.0) * (decay * k1 + 2.0 * half_decay * (k2 + k3) + k4)
        c = s + d

        if not np.all(np.isfinite(c)):
            logger.error(f"积分在 t={nodes[i + 1]:.6g} 处出现非有限状态")
            raise IntegrationError("积分出现非有限状态（离散格式发散）", time=float(nodes[i + 1]))
        states[i + 1] = c

    logger.debug(f"积分完成: {grid.n_steps} 步, dt={h:.3g}, ν={nu}")
    return Trajectory(grid=grid, states=states, lattice=lat, viscosity=nu,
                      forcing=f.restricted(grid.t0, grid.t1), solver=f'ifrk4/{method}')


def refine(u0: VelocityField, interval: Interval, dt: float, nu: float, f: ForcingSignal,
           levels: int, method: str = 'convolution') -> List[Trajectory]:
    """dt, dt/2, ..., dt/2^(levels-1) 下各积分一次"""
    if levels < 1:
        raise ValueError(f"加密层数必须 ≥ 1: {levels}")
    return [integrate(u0, interval, dt / 2 ** j, nu, f, method=method) for j in range(levels)]


def observed_order(errors: Sequence[float]) -> List[float]:
    """相邻误差比的 log₂"""
    orders = []
    for coarse, fine in zip(errors[:-1], errors[1:]):
        if fine == 0.0:
            orders.append(math.inf if coarse > 0.0 else math.nan)
        elif coarse == 0.0:
            orders.append(-math.inf)
        else:
            orders.append(math.log2(abs(coarse) / abs(fine)))
    return orders


# =========================
# 轨道操作
# =========================

def restrict(traj: Trajectory, J: Interval) -> Trajectory:
    """Π_J u"""
    i0 = traj.grid.index_of(J[0])
    i1 = traj.grid.index_of(J[1])
    if i1 <= i0:
        raise GridError(f"子区间 [{J[0]}, {J[1]}] 内部为空")
    grid = traj.grid.sub(i0, i1)
    return Trajectory(grid=grid, states=traj.states[i0:i1 + 1], lattice=traj.lattice,
                      viscosity=traj.viscosity, forcing=traj.forcing.restricted(grid.t0, grid.t1),
                      solver=traj.solver, synthetic=traj.synthetic)


def sample_at(traj: Trajectory, t: float) -> VelocityField:
    """Π_t u，只在节点上取值"""
    return traj.state(traj.grid.index_of(t))


def paste(first: Trajectory, second: Trajectory) -> Trajectory:
    """在 first 的终点拼接 second，交界处状态取 first 的终态"""
    if not first.lattice.same_as(second.lattice):
        raise LatticeMismatchError("拼接的两段轨道不在同一格点上")
    if first.viscosity != second.viscosity:
        raise PastingError(f"粘性不一致: {first.viscosity} vs {second.viscosity}")
    dt = first.grid.dt
    if abs(dt - second.grid.dt) > Config.GRID_RTOL * dt:
        raise PastingError(f"步长不一致: {dt} vs {second.grid.dt}")
    if abs(first.grid.t1 - second.grid.t0) > Config.SNAP_RTOL * dt:
        raise PastingError(f"时间不衔接: {first.grid.t1} vs {second.grid.t0}")

    end, start = first.final, second.initial
    scale = max(h_norm(end), h_norm(start))
    gap = h_norm(end - start)
    if gap > Config.PASTE_RTOL * scale:
        raise PastingError(f"交界处状态不一致: |Δu| = {gap:.3e}, 容差 {Config.PASTE_RTOL * scale:.3e}")

    nodes = np.concatenate([first.grid.nodes, second.grid.nodes[1:]])
    states = np.concatenate([first.states, second.states[1:]])
    segments = list(first.forcing.segments)
    tail = list(second.forcing.segments)
    tail[0] = ForcingSegment(first.grid.t1, tail[0].end, tail[0].field)
    forcing = ForcingSignal(first.lattice, tuple(segments + tail))
    return Trajectory(grid=TimeGrid(nodes), states=states, lattice=first.lattice,
                      viscosity=first.viscosity, forcing=forcing, solver=first.solver,
                      synthetic=first.synthetic or second.synthetic)


# =========================
# 时间积分（梯形公式）
# =========================

StepIntegrand = Callable[[VelocityField, VelocityField], float]


def step_contributions(traj: Trajectory, integrand: StepIntegrand,
                       i0: int = 0, i1: Optional[int] = None) -> np.ndarray:
    """
    第 i0..i1-1 步的梯形贡献 dt/2·(g(f_i, u_i) + g(f_i, u_{i+1}))。
    f_i 是该步使用的外力，分段跳跃处两端用同一段外力。
    """
    i1 = traj.grid.n_steps if i1 is None else i1
    if not 0 <= i0 <= i1 <= traj.grid.n_steps:
        raise GridError(f"节点下标越界: [{i0}, {i1}]")
    nodes = traj.grid.nodes
    out = np.empty(i1 - i0)
    for i in range(i0, i1):
        f = traj.step_forcing(i)
        left = integrand(f, traj.state(i))
        right = integrand(f, traj.state(i + 1))
        out[i - i0] = 0.5 * (nodes[i + 1] - nodes[i]) * (left + right)
    return out


def step_integral(traj: Trajectory, i0: int, i1: int, integrand: StepIntegrand) -> float:
    """∫_{t_{i0}}^{t_{i1}} g(f, u) dτ"""
    return float(np.sum(step_contributions(traj, integrand, i0, i1)))


def node_integral(traj: Trajectory, i0: int, i1: int, values: np.ndarray) -> float:
    """只依赖节点值的积分，直接用梯形公式"""
    if i1 == i0:
        return 0.0
    return float(trapezoid(values[i0:i1 + 1], traj.grid.nodes[i0:i1 + 1]))


def cumulative(contributions: np.ndarray) -> np.ndarray:
    """逐步贡献 → 从起点开始的累计积分（长度为节点数）"""
    out = np.zeros(contributions.size + 1)
    np.cumsum(contributions, out=out[1:])
    return out


def node_window(traj: Trajectory, s: float, t: float) -> Tuple[int, int]:
    i0 = traj.grid.index_of(s)
    i1 = traj.grid.index_of(t)
    if i1 <= i0:
        raise GridError(f"需要 s < t: s={s}, t={t}")
    return i0, i1


def with_forcing(traj: Trajectory, f: ForcingSignal) -> Trajectory:
    """换一个外力看待同一条轨道（只改元数据，不重新积分）"""
    return Trajectory(grid=traj.grid, states=traj.states, lattice=traj.lattice,
                      viscosity=traj.viscosity, forcing=f.restricted(traj.grid.t0, traj.grid.t1),
                      solver=traj.solver, synthetic=traj.synthetic)


def equation_residual(traj: Trajectory, v: VelocityField, s: float, t: float,
                      nu: Optional[float] = None, f: Optional[ForcingSignal] = None) -> float:
    """
    |(u(t),v) − (u(s),v) − ∫ₛᵗ{(f,v) − ν((u,v)) − b(u,u,v)}dτ|
    """
    nu = traj.viscosity if nu is None else nu
    if f is not None and f is not traj.forcing:
        traj = with_forcing(traj, f)
    i0, i1 = node_window(traj, s, t)

    advection = traj.advection
    drift = np.zeros(len(traj))
    for j in range(i0, i1 + 1):
        drift[j] = nu * v_inner(traj.state(j), v) + l2_inner(VelocityField(traj.lattice, advection[j]), v)
    forcing_part = step_integral(traj, i0, i1, lambda fld, _u: l2_inner(fld, v))
    integral = forcing_part - node_integral(traj, i0, i1, drift)
    change = l2_inner(traj.state(i1), v) - l2_inner(traj.state(i0), v)
    return abs(change - integral)


def energy_balance_defect(traj: Trajectory, s: float, t: float) -> float:
    """½|u(t)|² − ½|u(s)|² + ν∫‖u‖² − ∫(f,u)，Galerkin 方程下恒为零，只剩离散误差"""
    i0, i1 = node_window(traj, s, t)
    dissipation = traj.viscosity * node_integral(traj, i0, i1, traj.enstrophies)
    work = float(np.sum(traj.work_steps[i0:i1]))
    return 0.5 * traj.energies[i1] - 0.5 * traj.energies[i0] + dissipation - work
