# -*- coding: utf-8 -*-
"""
measure_kit.py - 离散测度与柱状检验函数

- PhaseMeasure：相空间 H 上的加权原子 Σθ_j δ_{u_j}
- TrajectoryMeasure：轨道空间上的加权原子 Σθ_j δ_{u_j(·)}
- CylindricalTestFunction：Φ(u) = φ((u,v_1),…,(u,v_k))，φ 为多项式乘以紧支鼓包

加权求和一律按原子存储顺序顺序累加，保证期望值逐位可复现。
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from dynamics import Trajectory, sample_at
from solution_checks import PsiFunction
from spectral_core import (
    VelocityField, WaveLattice, enstrophy, energy, galerkin_project, l2_inner, random_field,
)

logger = logging.getLogger(__name__)


class MeasureError(ValueError):
    """测度构造或操作的参数不合法"""


# =========================
# 测度
# =========================

@dataclass(frozen=True, eq=False)
class PhaseMeasure:
    atoms: Tuple[VelocityField, ...]
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def lattice(self) -> WaveLattice:
        return self.atoms[0].lattice


@dataclass(frozen=True, eq=False)
class TrajectoryMeasure:
    atoms: Tuple[Trajectory, ...]
    weights: np.ndarray
    annuli: Tuple[Dict[str, Any], ...] = ()   # 按半径分层构造时各层的质量记录

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def lattice(self) -> WaveLattice:
        return self.atoms[0].lattice

    @property
    def grid(self):
        return self.atoms[0].grid

    @property
    def viscosity(self) -> float:
        return self.atoms[0].viscosity

    @property
    def forcing(self):
        return self.atoms[0].forcing


Measure = Union[PhaseMeasure, TrajectoryMeasure]


def _normalize_weights(weights: Optional[Sequence[float]], count: int) -> np.ndarray:
    if count == 0:
        raise MeasureError("测度至少需要一个原子")
    if weights is None:
        w = np.full(count, 1.0 / count)
        w.setflags(write=False)
        return w
    w = np.array(weights, dtype=np.float64)
    if w.shape != (count,):
        raise MeasureError(f"权重个数 {w.size} 与原子个数 {count} 不一致")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise MeasureError(f"权重必须为正: {w.tolist()}")
    total = 0.0
    for x in w:
        total += x
    if abs(total - 1.0) > Config.WEIGHT_RENORM_WINDOW:
        raise MeasureError(f"权重之和 {total!r} 偏离 1 太多")
    if abs(total - 1.0) > Config.WEIGHT_SUM_TOL:
        logger.debug(f"权重之和 {total!r}，重新归一化")
        w = w / total
    w.setflags(write=False)
    return w


def _divergence_defect_states(states: np.ndarray, lattice: WaveLattice) -> float:
    scale = float(np.max(np.abs(states))) if states.size else 0.0
    if scale == 0.0:
        return 0.0
    dots = np.abs(np.einsum('...ka,ka->...k', states, lattice.kappa)) / np.sqrt(lattice.eigenvalues)
    return float(np.max(dots) / scale)


def make_phase_measure(atoms: Sequence[VelocityField], weights: Optional[Sequence[float]] = None) -> PhaseMeasure:
    """权重缺省为等权；Σθ 与 1 的偏差在 WEIGHT_RENORM_WINDOW 内时重新归一化"""
    atoms = tuple(atoms)
    w = _normalize_weights(weights, len(atoms))
    lattice = atoms[0].lattice
    for u in atoms[1:]:
        if not u.lattice.same_as(lattice):
            raise MeasureError("原子不在同一格点上")
    return PhaseMeasure(atoms, w)


def make_trajectory_measure(atoms: Sequence[Trajectory], weights: Optional[Sequence[float]] = None) -> TrajectoryMeasure:
    atoms = tuple(atoms)
    w = _normalize_weights(weights, len(atoms))
    first = atoms[0]
    for j, traj in enumerate(atoms):
        if not traj.lattice.same_as(first.lattice):
            raise MeasureError(f"原子 #{j} 不在同一格点上")
        if not traj.grid.compatible(first.grid):
            raise MeasureError(f"原子 #{j} 的时间网格与其它原子不一致")
        if traj.viscosity != first.viscosity:
            raise MeasureError(f"原子 #{j} 的粘性不一致")
        if _divergence_defect_states(traj.states, traj.lattice) > Config.DIVFREE_TOL:
            raise MeasureError(f"原子 #{j} 不是无散度的")
    return TrajectoryMeasure(atoms, w)


def combine(parts: Sequence[Tuple[float, Measure]]) -> Measure:
    """凸组合 Σ c_i μ_i，原子按部分顺序拼接；系数为零的部分跳过"""
    parts = [(float(c), m) for c, m in parts if c != 0.0]
    if not parts:
        raise MeasureError("凸组合至少需要一个非零系数")
    atoms, weights = [], []
    for c, m in parts:
        if c < 0:
            raise MeasureError(f"凸组合系数必须非负: {c}")
        atoms.extend(m.atoms)
        weights.extend(c * w for w in m.weights)
    if isinstance(parts[0][1], TrajectoryMeasure):
        return make_trajectory_measure(atoms, weights)
    return make_phase_measure(atoms, weights)


def project_at(rho: TrajectoryMeasure, t: float) -> PhaseMeasure:
    """Π_t ρ：原子取 t 时刻状态，权重不变"""
    return PhaseMeasure(tuple(sample_at(traj, t) for traj in rho.atoms), rho.weights)


def initial_measure(rho: TrajectoryMeasure) -> PhaseMeasure:
    return PhaseMeasure(tuple(traj.initial for traj in rho.atoms), rho.weights)


# =========================
# 期望
# =========================

def weighted_sum(weights: np.ndarray, values: Sequence[float]) -> float:
    """按原子顺序顺序累加"""
    total = 0.0
    for w, x in zip(weights, values):
        total += float(w) * float(x)
    return total


def expect(mu: PhaseMeasure, functional: Callable[[VelocityField], float]) -> float:
    """∫ functional dμ = Σθ_j functional(u_j)"""
    return weighted_sum(mu.weights, [functional(u) for u in mu.atoms])


def mean_energy(mu: PhaseMeasure) -> float:
    return expect(mu, energy)


def mean_enstrophy(mu: PhaseMeasure) -> float:
    return expect(mu, enstrophy)


def galerkin_pushforward(mu: PhaseMeasure, m: int) -> PhaseMeasure:
    """P_m μ：原子投影，权重不变"""
    return PhaseMeasure(tuple(galerkin_project(u, m) for u in mu.atoms), mu.weights)


def galerkin_energy_profile(mu: PhaseMeasure, psi: PsiFunction, ms: Sequence[int]) -> List[Tuple[int, float]]:
    """∫ψ(|P_m u|²)dμ 随 m 的变化，关于 m 不减且以 ∫ψ(|u|²)dμ 为上界"""
    return [(int(m), expect(mu, lambda u, m=m: float(psi.value(energy(galerkin_project(u, m))))))
            for m in ms]


# =========================
# ψ 函数族
# =========================

def psi_family(kind: str, a: float = 1.0) -> PsiFunction:
    """构造 ψ 并在对数网格上抽查：ψ ≥ 0，ψ 不减，0 ≤ ψ' ≤ 1"""
    psi = PsiFunction(kind, float(a))
    r = np.concatenate([[0.0], np.logspace(-8, 8, 321)])
    values = psi.value(r)
    slopes = psi.derivative(r)
    if np.any(values < 0) or np.any(np.diff(values) < 0):
        raise ValueError(f"ψ={psi.name} 不是非负不减函数")
    if np.any(slopes < 0) or np.any(slopes > 1.0 + 1e-12):
        raise ValueError(f"ψ'={psi.name} 超出 [0, 1]")
    return psi


# =========================
# 柱状检验函数
# =========================

def _bump(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """η(s) = (1 - s²)²，η'(s) = -4s(1 - s²)，|s| ≥ 1 时为 0"""
    inside = np.abs(s) < 1.0
    one_minus = np.where(inside, 1.0 - s * s, 0.0)
    return one_minus ** 2, -4.0 * s * one_minus


@dataclass(frozen=True, eq=False)
class CylindricalTestFunction:
    """
    Φ(u) = φ(x)，x_j = (u, v_j)，
    φ(x) = q(x - c)·Π_j η((x_j - c_j)/ρ_j)，q(y) = c0 + g·y + yᵀHy
    """
    fields: Tuple[VelocityField, ...]
    radii: np.ndarray
    center: np.ndarray
    c0: float = 1.0
    linear: Optional[np.ndarray] = None
    quadratic: Optional[np.ndarray] = None
    name: str = ''

    def __post_init__(self):
        k = len(self.fields)
        if k == 0:
            raise ValueError("柱状函数至少需要一个检验场")
        radii = np.array(self.radii, dtype=np.float64).reshape(k)
        if np.any(radii <= 0) or not np.all(np.isfinite(radii)):
            raise ValueError(f"支撑半径必须为正: {radii.tolist()}")
        center = np.array(self.center, dtype=np.float64).reshape(k)
        linear = np.zeros(k) if self.linear is None else np.array(self.linear, dtype=np.float64).reshape(k)
        quadratic = (np.zeros((k, k)) if self.quadratic is None
                     else np.array(self.quadratic, dtype=np.float64).reshape(k, k))
        lattice = self.fields[0].lattice
        for v in self.fields[1:]:
            if not v.lattice.same_as(lattice):
                raise ValueError("检验场不在同一格点上")
        object.__setattr__(self, 'fields', tuple(self.fields))
        object.__setattr__(self, 'radii', radii)
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'linear', linear)
        object.__setattr__(self, 'quadratic', quadratic)

    @property
    def arity(self) -> int:
        return len(self.fields)

    def coordinates(self, u: VelocityField) -> np.ndarray:
        return np.array([l2_inner(u, v) for v in self.fields])

    def profile(self, x: np.ndarray) -> float:
        y = np.asarray(x, dtype=np.float64) - self.center
        eta, _ = _bump(y / self.radii)
        bump = float(np.prod(eta))
        if bump == 0.0:
            return 0.0
        q = self.c0 + float(self.linear @ y) + float(y @ self.quadratic @ y)
        return q * bump

    def profile_grad(self, x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=np.float64) - self.center
        s = y / self.radii
        eta, deta = _bump(s)
        if not np.all(np.abs(s) < 1.0):
            return np.zeros(self.arity)
        q = self.c0 + float(self.linear @ y) + float(y @ self.quadratic @ y)
        dq = self.linear + (self.quadratic + self.quadratic.T) @ y
        grad = np.empty(self.arity)
        for j in range(self.arity):
            others = float(np.prod(np.delete(eta, j)))
            grad[j] = dq[j] * eta[j] * others + q * deta[j] / self.radii[j] * others
        return grad

    def describe(self) -> dict:
        return {
            'name': self.name,
            'arity': self.arity,
            'radii': self.radii.tolist(),
            'center': self.center.tolist(),
            'c0': self.c0,
            'linear': self.linear.tolist(),
            'quadratic': self.quadratic.tolist(),
        }


def cyl_eval(phi: CylindricalTestFunction, u: VelocityField) -> float:
    return phi.profile(phi.coordinates(u))


def cyl_grad(phi: CylindricalTestFunction, u: VelocityField) -> VelocityField:
    """Φ'(u) = Σ_j ∂_jφ(x)·v_j"""
    grad = phi.profile_grad(phi.coordinates(u))
    coeffs = np.zeros_like(phi.fields[0].coeffs)
    for g, v in zip(grad, phi.fields):
        coeffs = coeffs + g * v.coeffs
    return VelocityField(phi.fields[0].lattice, coeffs)


def default_test_family(lattice: WaveLattice, atoms: Sequence[VelocityField], count: int = 5,
                        seed: int = 0, max_arity: int = 3) -> List[CylindricalTestFunction]:
    """
    随机检验场 + 覆盖原子坐标范围的支撑，arity 在 1..max_arity 间轮换。
    同样的 seed 给出同样的函数族。
    """
    if count < 1:
        raise ValueError(f"检验函数个数必须 ≥ 1: {count}")
    rng = np.random.default_rng(seed)
    atoms = list(atoms)
    scale = max([np.sqrt(energy(u)) for u in atoms] + [1e-12])
    family = []
    for i in range(count):
        k = 1 + i % max_arity
        fields = tuple(random_field(lattice, rng, slope=1.0) for _ in range(k))
        coords = np.array([[l2_inner(u, v) for v in fields] for u in atoms]).reshape(-1, k)
        center = coords.mean(axis=0) if coords.size else np.zeros(k)
        spread = np.max(np.abs(coords - center), axis=0) if coords.size else np.zeros(k)
        radii = np.maximum(2.0 * spread, 0.5 * scale)
        linear = rng.normal(size=k) * 0.5 / radii
        quadratic = np.diag(rng.normal(size=k) * 0.25 / radii ** 2)
        family.append(CylindricalTestFunction(fields, radii, center, 1.0, linear, quadratic, name=f'phi{i}'))
    return family


def separates(family: Sequence[CylindricalTestFunction], u: VelocityField, v: VelocityField) -> bool:
    """函数族中是否存在 Φ 使 Φ(u) ≠ Φ(v)"""
    return any(cyl_eval(phi, u) != cyl_eval(phi, v) for phi in family)


def weak_star_gap(mu: PhaseMeasure, nu: PhaseMeasure, family: Sequence[CylindricalTestFunction]) -> float:
    """max_Φ |∫Φdμ - ∫Φdν|，只对给定的有限函数族"""
    if not family:
        raise MeasureError("检验函数族为空")
    if not mu.lattice.same_as(nu.lattice):
        raise MeasureError("两个测度不在同一格点上")
    gap = 0.0
    for phi in family:
        def functional(u, phi=phi):
            return cyl_eval(phi, u)
        gap = max(gap, abs(expect(mu, functional) - expect(nu, functional)))
    return gap


# =========================
# 按半径分层
# =========================

@dataclass(frozen=True)
class RadiiLadder:
    radii: Tuple[float, ...]
    R0: Optional[float] = None

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise MeasureError(f"半径必须为正: {radii}")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise MeasureError(f"半径必须严格递增: {radii}")
        if self.R0 is not None and radii[0] < self.R0:
            raise MeasureError(f"R₁={radii[0]} 小于 R₀={self.R0}")
        object.__setattr__(self, 'radii', radii)

    @property
    def top(self) -> float:
        return self.radii[-1]


@dataclass
class AnnulusPart:
    index: int
    inner: float
    outer: float
    mass: float
    measure: PhaseMeasure
    atom_indices: List[int] = field(default_factory=list)

    def describe(self) -> Dict[str, Any]:
        return {'annulus': self.index + 1, 'inner': self.inner, 'outer': self.outer,
                'mass': self.mass, 'atoms': list(self.atom_indices)}


def annuli_split(mu: PhaseMeasure, ladder: RadiiLadder) -> List[AnnulusPart]:
    """
    按 |u_j| 把原子分到 A_k = B(R_k) \\ B(R_{k-1})，每部分归一化为概率测度。
    空的层被跳过。
    """
    norms = [float(np.sqrt(energy(u))) for u in mu.atoms]
    buckets = {}
    for j, r in enumerate(norms):
        k = next((i for i, R in enumerate(ladder.radii) if r <= R), None)
        if k is None:
            raise MeasureError(f"原子 #{j} 的范数 {r:.6g} 超出最大半径 {ladder.top:.6g}")
        buckets.setdefault(k, []).append(j)

    parts = []
    for k in sorted(buckets):
        indices = buckets[k]
        mass = weighted_sum(np.ones(len(indices)), [mu.weights[j] for j in indices])
        weights = np.array([mu.weights[j] / mass for j in indices])
        part = make_phase_measure([mu.atoms[j] for j in indices], weights)
        inner = 0.0 if k == 0 else ladder.radii[k - 1]
        parts.append(AnnulusPart(k, inner, ladder.radii[k], mass, part, list(indices)))
    logger.debug(f"按半径分层: {len(parts)} 层, 质量 {[round(p.mass, 6) for p in parts]}")
    return parts


def recombine(parts: Sequence[AnnulusPart]) -> PhaseMeasure:
    """annuli_split 的逆：Σ mass_k·μ_k"""
    return combine([(p.mass, p.measure) for p in parts])
