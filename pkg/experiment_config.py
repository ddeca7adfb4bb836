# -*- coding: utf-8 -*-
"""
实验配置模块
一个实验 = 一个 JSON 文件，用 pydantic 模型校验；出错时报告带点号的字段路径（如 time.dt）。
这里同时负责把配置变成格点、时间网格、外力和初始测度。
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from check_processor import ALL_CHECKS
from dynamics import ForcingSignal, GridError, TimeGrid, make_forcing
from measure_kit import MeasureError, PhaseMeasure, RadiiLadder, make_phase_measure, psi_family
from solution_checks import PsiFunction
from spectral_core import (
    BoxParams, LatticeMismatchError, VelocityField, WaveLattice, abc_field, build_lattice, h_norm,
    unit_mode, zeros,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """配置不合法；path 是出错字段的点号路径"""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


# =========================
# 配置模型
# =========================

class _Spec(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class BoxSpec(_Spec):
    lengths: Tuple[float, float, float] = Field(default=(TWO_PI, TWO_PI, TWO_PI), description="周期 L1, L2, L3")
    viscosity: float = Field(gt=0.0, description="粘性 ν")
    cutoff: int = Field(ge=1, le=8, description="截断 K")
    truncation: Literal['cube', 'sphere'] = 'cube'

    @field_validator('lengths')
    @classmethod
    def _positive_lengths(cls, v):
        if any(not math.isfinite(x) or x <= 0 for x in v):
            raise ValueError("盒子周期必须为正")
        return v


class TimeSpec(_Spec):
    t0: float = 0.0
    t1: float
    dt: float = Field(gt=0.0)

    @model_validator(mode='after')
    def _ordered(self):
        if not self.t1 > self.t0:
            raise ValueError(f"需要 t1 > t0: t0={self.t0}, t1={self.t1}")
        return self


class ModeSpec(_Spec):
    """一个场分量：单对模态 (unit) 或 ABC 流 (abc)"""
    kind: Literal['unit', 'abc'] = 'unit'
    k: Optional[Tuple[int, int, int]] = None
    direction: Optional[Tuple[float, float, float]] = None
    amplitude: float = 1.0
    phase: float = 0.0
    A: float = 1.0
    B: float = 1.0
    C: float = 1.0

    @model_validator(mode='after')
    def _unit_needs_k(self):
        if self.kind == 'unit' and (self.k is None or self.direction is None):
            raise ValueError("unit 模态需要 k 和 direction")
        return self


class FieldSpec(_Spec):
    modes: List[ModeSpec] = Field(default_factory=list)


class SegmentSpec(FieldSpec):
    start: float
    end: float


class ForcingSpec(_Spec):
    segments: List[SegmentSpec] = Field(default_factory=list)   # 空 = 零外力


class ExplicitInitial(_Spec):
    kind: Literal['explicit'] = 'explicit'
    atoms: List[FieldSpec] = Field(min_length=1)
    weights: Optional[List[float]] = None


class GaussianInitial(_Spec):
    """截断高斯采样：每对模态方差 ∝ λ^{-slope}，期望能量 energy"""
    kind: Literal['gaussian'] = 'gaussian'
    seed: int
    count: int = Field(ge=1, le=4096)
    slope: float = 1.0
    energy: float = Field(default=1.0, gt=0.0)
    radius: Optional[float] = Field(default=None, gt=0.0)
    on_sphere: bool = False

    @model_validator(mode='after')
    def _sphere_needs_radius(self):
        if self.on_sphere and self.radius is None:
            raise ValueError("on_sphere 需要给出 radius")
        return self


InitialSpec = Annotated[Union[ExplicitInitial, GaussianInitial], Field(discriminator='kind')]


class PsiSpec(_Spec):
    kind: Literal['linear', 'saturating'] = 'linear'
    a: float = Field(default=1.0, gt=0.0)


class JumpSpec(_Spec):
    """负对照：把某个原子在 (t0, t0+delta] 上的能量人为抬高 magnitude"""
    atom: int = Field(ge=0)
    delta: float = Field(gt=0.0)
    magnitude: float = Field(gt=0.0)


class ChecksSpec(_Spec):
    names: List[str] = Field(default_factory=list)
    tol: Optional[float] = Field(default=None, ge=0.0)
    liouville_tol: float = Field(default=1e-6, gt=0.0)
    continuity_tol: float = Field(default=1e-6, gt=0.0)
    psis: List[PsiSpec] = Field(default_factory=lambda: [PsiSpec()])
    family_size: int = Field(default=5, ge=1)
    family_seed: int = 0
    max_arity: int = Field(default=3, ge=1)
    refine: int = Field(default=0, ge=0, le=6)
    delta: Optional[float] = Field(default=None, gt=0.0)
    ball_radius: Optional[float] = Field(default=None, gt=0.0)
    localization_radius: Optional[float] = Field(default=None, gt=0.0)
    stride: Optional[int] = Field(default=None, ge=1)
    jump: Optional[JumpSpec] = None

    @field_validator('names')
    @classmethod
    def _known_checks(cls, v):
        unknown = [name for name in v if name not in ALL_CHECKS]
        if unknown:
            raise ValueError(f"不支持的检验: {unknown}")
        return v


class SolverSpec(_Spec):
    method: Literal['convolution', 'pseudospectral'] = 'convolution'
    galerkin_modes: Optional[int] = Field(default=None, ge=1)
    ladder: Optional[List[float]] = None
    max_workers: Optional[int] = Field(default=None, ge=1)


class OutputSpec(_Spec):
    directory: str = 'output'


class ExperimentConfig(_Spec):
    name: str = 'experiment'
    box: BoxSpec
    time: TimeSpec
    forcing: ForcingSpec = Field(default_factory=ForcingSpec)
    initial: InitialSpec
    checks: ChecksSpec = Field(default_factory=ChecksSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)


# =========================
# 读取与哈希
# =========================

def _error_path(loc) -> str:
    path = ''
    for item in loc:
        if isinstance(item, int):
            path += f'[{item}]'
        elif item in ('explicit', 'gaussian'):
            continue   # 判别联合的标签不算字段
        else:
            path = f'{path}.{item}' if path else str(item)
    return path or '<root>'


def parse_config(data: dict) -> ExperimentConfig:
    """dict → ExperimentConfig，并做跨字段的语义检查"""
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_error_path(first['loc']), first['msg']) from e
    validate_experiment(cfg)
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"配置文件不存在: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigError('<root>', f"JSON 解析失败: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError('<root>', "配置必须是 JSON 对象")
    cfg = parse_config(data)
    logger.info(f"读取配置: {path} (哈希 {config_hash(cfg)[:12]})")
    return cfg


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode='json'), sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def config_hash(cfg: ExperimentConfig) -> str:
    """规范化 JSON 的 sha256，同一哈希的两次运行产出逐字节相同"""
    return hashlib.sha256(canonical_json(cfg).encode('utf-8')).hexdigest()


# =========================
# 由配置构建对象
# =========================

def make_lattice(cfg: ExperimentConfig) -> WaveLattice:
    box = cfg.box
    try:
        params = BoxParams(box.lengths, box.viscosity, box.cutoff, box.truncation)
    except ValueError as e:
        raise ConfigError('box', str(e)) from e
    return build_lattice(params)


def make_grid(cfg: ExperimentConfig) -> TimeGrid:
    try:
        return TimeGrid.uniform(cfg.time.t0, cfg.time.t1, cfg.time.dt)
    except GridError as e:
        raise ConfigError('time.dt', str(e)) from e


def make_field(spec: FieldSpec, lattice: WaveLattice, path: str) -> VelocityField:
    """各分量相加；unit 模态的 k 必须在格点上、direction 必须与 κ(k) 正交"""
    total = zeros(lattice)
    for j, mode in enumerate(spec.modes):
        where = f"{path}.modes[{j}]"
        try:
            if mode.kind == 'unit':
                part = unit_mode(lattice, mode.k, mode.direction, mode.amplitude, mode.phase)
            else:
                part = abc_field(lattice, mode.A, mode.B, mode.C) * mode.amplitude
        except ValueError as e:
            raise ConfigError(where, str(e)) from e
        total = total + part
    return total


def make_forcing_signal(cfg: ExperimentConfig, lattice: WaveLattice,
                        grid: Optional[TimeGrid] = None) -> ForcingSignal:
    grid = grid or make_grid(cfg)
    segments = [(seg.start, seg.end, make_field(seg, lattice, f"forcing.segments[{i}]"))
                for i, seg in enumerate(cfg.forcing.segments)]
    try:
        return make_forcing(segments, lattice, (cfg.time.t0, cfg.time.t1), grid)
    except (ValueError, LatticeMismatchError) as e:
        raise ConfigError('forcing.segments', str(e)) from e


def gaussian_variances(lattice: WaveLattice, slope: float, energy: float) -> np.ndarray:
    """
    每对模态每个极化方向的复方差 σ_k²，使 E|u|² = energy：
    σ_k² = energy·λ_k^{-s} / (4|Ω|·Σλ^{-s})
    """
    profile = lattice.eigenvalues ** (-slope)
    return energy * profile / (4.0 * lattice.volume * float(np.sum(profile)))


def _polarizations(kappa: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """每个 κ 的一对与 κ 正交的单位向量 (e1, e2)"""
    unit = kappa / np.linalg.norm(kappa, axis=1, keepdims=True)
    axis = np.zeros_like(unit)
    smallest = np.argmin(np.abs(unit), axis=1)
    axis[np.arange(len(unit)), smallest] = 1.0
    e1 = np.cross(unit, axis)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(unit, e1)
    return e1, e2


def clamp_to_ball(u: VelocityField, R: float) -> VelocityField:
    """|u| > R 时缩放到球面；浮点舍入后仍超出就逐次向内退一个 ulp，保证 |u| ≤ R"""
    norm = h_norm(u)
    if norm <= R:
        return u
    u = u * (R / norm)
    factor = 1.0
    while h_norm(u) > R:
        factor = float(np.nextafter(factor, 0.0))
        u = u * factor
    return u


def sample_gaussian_measure(lattice: WaveLattice, spec: GaussianInitial) -> PhaseMeasure:
    """
    截断高斯初始测度：固定 seed，原子按抽样顺序排列，等权。
    给出 radius 时超出球的原子缩放到球面；on_sphere 时每个原子都缩放到 |u| = R（再做一次上界修正）。
    """
    rng = np.random.default_rng(spec.seed)
    sigma = np.sqrt(gaussian_variances(lattice, spec.slope, spec.energy))
    e1, e2 = _polarizations(lattice.kappa)
    atoms = []
    for _ in range(spec.count):
        draws = rng.standard_normal((lattice.size, 2, 2)) / np.sqrt(2.0)
        a1 = sigma * (draws[:, 0, 0] + 1j * draws[:, 0, 1])
        a2 = sigma * (draws[:, 1, 0] + 1j * draws[:, 1, 1])
        u = VelocityField(lattice, a1[:, None] * e1 + a2[:, None] * e2)
        if spec.on_sphere:
            norm = h_norm(u)
            if norm > 0.0:
                u = u * (spec.radius / norm)
        if spec.radius is not None:
            u = clamp_to_ball(u, spec.radius)
        atoms.append(u)
    logger.info(f"高斯采样: {spec.count} 个原子, seed={spec.seed}, 斜率={spec.slope}")
    return make_phase_measure(atoms)


def make_initial_measure(cfg: ExperimentConfig, lattice: WaveLattice) -> PhaseMeasure:
    initial = cfg.initial
    if isinstance(initial, GaussianInitial):
        return sample_gaussian_measure(lattice, initial)
    atoms = [make_field(spec, lattice, f"initial.atoms[{j}]") for j, spec in enumerate(initial.atoms)]
    try:
        return make_phase_measure(atoms, initial.weights)
    except MeasureError as e:
        raise ConfigError('initial.weights', str(e)) from e


def make_psis(cfg: ExperimentConfig) -> List[PsiFunction]:
    try:
        return [psi_family(p.kind, p.a) for p in cfg.checks.psis]
    except ValueError as e:
        raise ConfigError('checks.psis', str(e)) from e


def make_ladder(cfg: ExperimentConfig) -> Optional[RadiiLadder]:
    if cfg.solver.ladder is None:
        return None
    try:
        return RadiiLadder(tuple(cfg.solver.ladder))
    except MeasureError as e:
        raise ConfigError('solver.ladder', str(e)) from e


def validate_experiment(cfg: ExperimentConfig) -> None:
    """构建一遍格点、网格、外力和 ψ，问题都在运行前以 ConfigError 报出"""
    lattice = make_lattice(cfg)
    grid = make_grid(cfg)
    make_forcing_signal(cfg, lattice, grid)
    make_psis(cfg)
    make_ladder(cfg)
    if isinstance(cfg.initial, ExplicitInitial):
        make_initial_measure(cfg, lattice)
    if cfg.solver.galerkin_modes is not None and cfg.solver.galerkin_modes > lattice.size:
        raise ConfigError('solver.galerkin_modes', f"超出格点模态数 {lattice.size}")
    jump = cfg.checks.jump
    if jump is not None:
        count = len(cfg.initial.atoms) if isinstance(cfg.initial, ExplicitInitial) else cfg.initial.count
        if jump.atom >= count:
            raise ConfigError('checks.jump.atom', f"原子下标 {jump.atom} 超出 [0, {count})")
        if jump.delta < grid.dt:
            raise ConfigError('checks.jump.delta', f"δ={jump.delta} 小于一个时间步")
