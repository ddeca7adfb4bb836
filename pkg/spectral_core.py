# -*- coding: utf-8 -*-
"""
spectral_core.py - 周期盒子上无散度速度场的 Fourier 表示

约定：
1) 只存半格点（每对 ±k 存一个代表元，首个非零分量为正），c(-k) = conj(c(k)) 由结构保证，场恒为实场。
2) 物理波矢 κ(k) = 2π(k1/L1, k2/L2, k3/L3)，Stokes 特征值 λ(k) = |κ(k)|²。
3) 格点按 (λ, k 字典序) 排好序存储，Galerkin 投影 P_m 就是保留前 m 对。
4) L² 内积带盒子体积 |Ω| = L1·L2·L3：(u,v) = 2|Ω|·Re Σ_half c_u·conj(c_v)。

对外接口：
- build_lattice(params) → WaveLattice
- l2_inner / v_inner / h_norm / h1_norm / dual_norm_vprime
- stokes_apply / leray_project / nonlinear_B / trilinear_b / galerkin_project
- unit_mode / abc_field / random_field / to_grid / from_grid
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence]


class LatticeMismatchError(ValueError):
    """两个场不在同一个格点上"""


# =========================
# 数据结构
# =========================

@dataclass(frozen=True)
class BoxParams:
    """盒子参数：周期 L_i、粘性 ν、截断 K"""
    lengths: Tuple[float, float, float]
    viscosity: float
    cutoff: int
    truncation: str = 'cube'   # 'cube': max|k_i| ≤ K；'sphere': |k|² ≤ K²

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        if len(lengths) != 3 or any(not np.isfinite(x) or x <= 0 for x in lengths):
            raise ValueError(f"盒子周期必须是三个正数: {self.lengths}")
        if not (np.isfinite(self.viscosity) and self.viscosity > 0):
            raise ValueError(f"粘性系数必须为正: {self.viscosity}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise ValueError(f"截断 K 必须是正整数: {self.cutoff}")
        if self.truncation not in ('cube', 'sphere'):
            raise ValueError(f"不支持的截断方式: {self.truncation}")
        object.__setattr__(self, 'lengths', lengths)
        object.__setattr__(self, 'viscosity', float(self.viscosity))
        object.__setattr__(self, 'cutoff', int(self.cutoff))

    @property
    def volume(self) -> float:
        return self.lengths[0] * self.lengths[1] * self.lengths[2]

    def to_dict(self) -> Dict:
        return {
            'lengths': list(self.lengths),
            'viscosity': self.viscosity,
            'cutoff': self.cutoff,
            'truncation': self.truncation,
        }


@dataclass(frozen=True, eq=False)
class WaveLattice:
    """
    按模态顺序排好的半格点。

    wavevectors[j] 是第 j 对模态的代表元，eigenvalues 非降，相同特征值按 k 的字典序。
    """
    params: BoxParams
    wavevectors: np.ndarray   # (n, 3) int
    kappa: np.ndarray         # (n, 3) float
    eigenvalues: np.ndarray   # (n,)

    @property
    def size(self) -> int:
        return int(self.wavevectors.shape[0])

    @property
    def mode_order(self) -> np.ndarray:
        # 存储顺序即模态顺序
        return np.arange(self.size)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def volume(self) -> float:
        return self.params.volume

    @cached_property
    def index(self) -> Dict[Tuple[int, int, int], int]:
        return {tuple(int(x) for x in k): j for j, k in enumerate(self.wavevectors)}

    @cached_property
    def full_wavevectors(self) -> np.ndarray:
        """完整格点 [k; -k]，前 n 个是代表元"""
        return np.vstack([self.wavevectors, -self.wavevectors])

    @cached_property
    def full_kappa(self) -> np.ndarray:
        return np.vstack([self.kappa, -self.kappa])

    @cached_property
    def convolution_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        卷积三元组 (i, q, p)：输出代表元 i，完整格点上 q、p 满足 k_p + k_q = k_i。
        """
        K = self.params.cutoff
        span = 4 * K + 1
        offset = 2 * K
        lookup = np.full(span ** 3, -1, dtype=np.int64)
        full = self.full_wavevectors
        lookup[_encode(full, span, offset)] = np.arange(full.shape[0])

        diff = self.wavevectors[:, None, :] - full[None, :, :]   # k_i - k_q
        p = lookup[_encode(diff.reshape(-1, 3), span, offset)].reshape(self.size, full.shape[0])
        out_idx, q_idx = np.nonzero(p >= 0)
        return out_idx, q_idx, p[out_idx, q_idx]

    @cached_property
    def shells(self) -> List[Tuple[float, int, int]]:
        """特征值壳层 [(λ, 起始下标, 结束下标)]"""
        keys = _shell_keys(self.eigenvalues)
        result = []
        start = 0
        for j in range(1, self.size + 1):
            if j == self.size or keys[j] != keys[start]:
                result.append((float(self.eigenvalues[start]), start, j))
                start = j
        return result

    @property
    def dealiased_grid_size(self) -> int:
        # 2/3 规则：保留 |k_i| ≤ N/3，两个场的乘积不会混叠回格点
        return 3 * self.params.cutoff + 1

    def descriptor(self) -> Dict:
        return self.params.to_dict()

    def same_as(self, other: 'WaveLattice') -> bool:
        if self is other:
            return True
        return (self.params == other.params
                and self.wavevectors.shape == other.wavevectors.shape
                and bool(np.array_equal(self.wavevectors, other.wavevectors)))

    def locate(self, k: ArrayLike) -> Tuple[int, bool]:
        """返回 (下标, 是否取共轭)；k 不在格点上时报错"""
        key = tuple(int(x) for x in k)
        if key in self.index:
            return self.index[key], False
        neg = tuple(-x for x in key)
        if neg in self.index:
            return self.index[neg], True
        raise ValueError(f"波矢 {key} 不在截断格点上")


@dataclass(frozen=True, eq=False)
class VelocityField:
    """P_m H 中的速度场：每个代表元一个复三维系数"""
    lattice: WaveLattice
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.complex128)
        if coeffs.shape != (self.lattice.size, 3):
            raise ValueError(f"系数形状 {coeffs.shape} 与格点 ({self.lattice.size}, 3) 不一致")
        coeffs.setflags(write=False)
        object.__setattr__(self, 'coeffs', coeffs)

    def _check(self, other: 'VelocityField'):
        if not self.lattice.same_as(other.lattice):
            raise LatticeMismatchError("场不在同一格点上")

    def __add__(self, other: 'VelocityField') -> 'VelocityField':
        self._check(other)
        return VelocityField(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other: 'VelocityField') -> 'VelocityField':
        self._check(other)
        return VelocityField(self.lattice, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> 'VelocityField':
        return VelocityField(self.lattice, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> 'VelocityField':
        return VelocityField(self.lattice, -self.coeffs)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)))


# 对偶中使用的测试场，布局与速度场相同
TestField = VelocityField


# =========================
# 工具
# =========================

def _encode(k: np.ndarray, span: int, offset: int) -> np.ndarray:
    k = np.asarray(k) + offset
    return (k[..., 0] * span + k[..., 1]) * span + k[..., 2]


def _shell_keys(eigenvalues: np.ndarray) -> np.ndarray:
    scale = float(np.min(eigenvalues))
    return np.round(eigenvalues / scale, 10)


def _same_lattice(*fields: VelocityField) -> WaveLattice:
    lattice = fields[0].lattice
    for f in fields[1:]:
        if not lattice.same_as(f.lattice):
            raise LatticeMismatchError("场不在同一格点上")
    return lattice


def zeros(lattice: WaveLattice) -> VelocityField:
    return VelocityField(lattice, np.zeros((lattice.size, 3), dtype=np.complex128))


# =========================
# 格点
# =========================

def build_lattice(params: BoxParams) -> WaveLattice:
    """枚举截断格点，只保留代表元，并按 (λ, k 字典序) 排序"""
    K = params.cutoff
    r = np.arange(-K, K + 1)
    k = np.stack(np.meshgrid(r, r, r, indexing='ij'), axis=-1).reshape(-1, 3)
    if params.truncation == 'sphere':
        k = k[np.sum(k * k, axis=1) <= K * K]

    # 代表元：首个非零分量为正（同时去掉 k = 0）
    first = np.where(k[:, 0] != 0, k[:, 0], np.where(k[:, 1] != 0, k[:, 1], k[:, 2]))
    k = k[first > 0]

    kappa = 2.0 * np.pi * k / np.asarray(params.lengths)
    eigenvalues = np.sum(kappa * kappa, axis=1)
    keys = _shell_keys(eigenvalues)
    order = np.lexsort((k[:, 2], k[:, 1], k[:, 0], keys))

    wavevectors = np.ascontiguousarray(k[order])
    kappa = np.ascontiguousarray(kappa[order])
    eigenvalues = np.ascontiguousarray(eigenvalues[order])
    for arr in (wavevectors, kappa, eigenvalues):
        arr.setflags(write=False)

    lattice = WaveLattice(params=params, wavevectors=wavevectors, kappa=kappa, eigenvalues=eigenvalues)
    logger.debug(f"格点构建完成: K={K}, 截断={params.truncation}, 代表元 {lattice.size} 个, λ1={lattice.lambda1:.6g}")
    return lattice


# =========================
# 内积与范数
# =========================

def l2_inner(u: VelocityField, v: VelocityField, lattice: Optional[WaveLattice] = None) -> float:
    """(u, v)_{L²}，Parseval 加体积因子"""
    lat = _same_lattice(u, v) if lattice is None else _same_lattice(u, v, zeros(lattice))
    return 2.0 * lat.volume * float(np.real(np.vdot(v.coeffs, u.coeffs)))


def v_inner(u: VelocityField, v: VelocityField, lattice: Optional[WaveLattice] = None) -> float:
    """((u, v)) = Σ λ(k)·(谱配对)"""
    lat = _same_lattice(u, v) if lattice is None else _same_lattice(u, v, zeros(lattice))
    weighted = u.coeffs * lat.eigenvalues[:, None]
    return 2.0 * lat.volume * float(np.real(np.vdot(v.coeffs, weighted)))


def energy(u: VelocityField) -> float:
    """|u|²_{L²}"""
    return l2_inner(u, u)


def enstrophy(u: VelocityField) -> float:
    """‖u‖²_{H¹}"""
    return v_inner(u, u)


def h_norm(u: VelocityField) -> float:
    return float(np.sqrt(energy(u)))


def h1_norm(u: VelocityField) -> float:
    return float(np.sqrt(enstrophy(u)))


def dual_norm_vprime(u: VelocityField, lattice: Optional[WaveLattice] = None) -> float:
    """
    ‖u‖_{V'}：截断空间上上确界可以精确求出，等于 (2|Ω| Σ |c|²/λ)^{1/2}。
    与未截断范数的关系见 README。
    """
    lat = u.lattice if lattice is None else _same_lattice(u, zeros(lattice))
    power = np.sum(np.abs(u.coeffs) ** 2, axis=1) / lat.eigenvalues
    return float(np.sqrt(2.0 * lat.volume * np.sum(power)))


def divergence_defect(u: VelocityField) -> float:
    """max_k |κ·c(k)| / (|κ(k)|·max|c|)，零场返回 0"""
    scale = float(np.max(np.abs(u.coeffs))) if u.coeffs.size else 0.0
    if scale == 0.0:
        return 0.0
    lat = u.lattice
    dots = np.abs(np.sum(lat.kappa * u.coeffs, axis=1)) / np.sqrt(lat.eigenvalues)
    return float(np.max(dots) / scale)


def is_divergence_free(u: VelocityField, tol: float = Config.DIVFREE_TOL) -> bool:
    return divergence_defect(u) <= tol


# =========================
# 线性算子
# =========================

def stokes_apply(u: VelocityField, lattice: Optional[WaveLattice] = None) -> VelocityField:
    """(Au)(k) = λ(k)·c(k)"""
    lat = u.lattice if lattice is None else _same_lattice(u, zeros(lattice))
    return VelocityField(lat, u.coeffs * lat.eigenvalues[:, None])


def stokes_solve(u: VelocityField) -> VelocityField:
    """A⁻¹u"""
    return VelocityField(u.lattice, u.coeffs / u.lattice.eigenvalues[:, None])


def leray_project(w: Union[VelocityField, np.ndarray], lattice: Optional[WaveLattice] = None) -> VelocityField:
    """c(k) ← c(k) − (κ·c)κ/|κ|²"""
    if isinstance(w, VelocityField):
        lat = w.lattice if lattice is None else _same_lattice(w, zeros(lattice))
        coeffs = w.coeffs
    else:
        if lattice is None:
            raise ValueError("原始系数数组需要同时给出格点")
        lat = lattice
        coeffs = np.asarray(w, dtype=np.complex128)
        if coeffs.shape != (lat.size, 3):
            raise ValueError(f"系数形状 {coeffs.shape} 与格点 ({lat.size}, 3) 不一致")
    dots = np.sum(lat.kappa * coeffs, axis=1) / lat.eigenvalues
    return VelocityField(lat, coeffs - dots[:, None] * lat.kappa)


def galerkin_project(u: VelocityField, m: int, lattice: Optional[WaveLattice] = None) -> VelocityField:
    """P_m：只保留模态顺序中的前 m 对"""
    lat = u.lattice if lattice is None else _same_lattice(u, zeros(lattice))
    if int(m) != m or not 1 <= m <= lat.size:
        raise ValueError(f"Galerkin 截断 m={m} 超出范围 [1, {lat.size}]")
    coeffs = np.array(u.coeffs)
    coeffs[int(m):] = 0.0
    return VelocityField(lat, coeffs)


def curl(u: VelocityField) -> VelocityField:
    """ω(k) = iκ × c(k)"""
    lat = u.lattice
    return VelocityField(lat, np.cross(1j * lat.kappa, u.coeffs))


# =========================
# 非线性项
# =========================

def _full(coeffs: np.ndarray) -> np.ndarray:
    return np.vstack([coeffs, np.conj(coeffs)])


def _advect_convolution(u: VelocityField, v: VelocityField) -> np.ndarray:
    """((u·∇)v)^(k) = Σ_{p+q=k} (c_u(p)·iκ(q)) c_v(q)，只对格点内三元组求和"""
    lat = u.lattice
    out_idx, q_idx, p_idx = lat.convolution_table
    full_u = _full(u.coeffs)
    full_v = _full(v.coeffs)
    ikq = 1j * lat.full_kappa[q_idx]
    s = np.sum(full_u[p_idx] * ikq, axis=1)
    contrib = s[:, None] * full_v[q_idx]

    result = np.empty((lat.size, 3), dtype=np.complex128)
    for a in range(3):
        re = np.bincount(out_idx, weights=contrib[:, a].real, minlength=lat.size)
        im = np.bincount(out_idx, weights=contrib[:, a].imag, minlength=lat.size)
        result[:, a] = re + 1j * im
    return result


def _scatter(coeffs: np.ndarray, lattice: WaveLattice, n: int) -> np.ndarray:
    """把半格点系数铺到 n³ 的 FFT 数组上（含共轭部分）"""
    grid = np.zeros((coeffs.shape[1], n, n, n), dtype=np.complex128)
    full = lattice.full_wavevectors % n
    values = _full(coeffs)
    grid[:, full[:, 0], full[:, 1], full[:, 2]] = values.T
    return grid


def _gather(grid: np.ndarray, lattice: WaveLattice) -> np.ndarray:
    n = grid.shape[-1]
    k = lattice.wavevectors % n
    return np.ascontiguousarray(grid[:, k[:, 0], k[:, 1], k[:, 2]].T)


def to_grid(u: VelocityField, n: Optional[int] = None) -> np.ndarray:
    """速度场在 n³ 均匀网格 x_j = L·j/n 上的取值，形状 (3, n, n, n)"""
    lat = u.lattice
    n = n or 2 * lat.params.cutoff + 1
    spectral = _scatter(u.coeffs, lat, n)
    return np.real(np.fft.ifftn(spectral, axes=(1, 2, 3))) * n ** 3


def from_grid(values: np.ndarray, lattice: WaveLattice) -> VelocityField:
    """网格取值 → 格点系数；n ≥ 2K+1 时对格点上的三角多项式是精确的"""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    if n < 2 * lattice.params.cutoff + 1:
        raise ValueError(f"网格 n={n} 太粗，至少需要 {2 * lattice.params.cutoff + 1}")
    spectral = np.fft.fftn(values, axes=(1, 2, 3)) / n ** 3
    return VelocityField(lattice, _gather(spectral, lattice))


def _advect_pseudospectral(u: VelocityField, v: VelocityField, n: Optional[int] = None) -> np.ndarray:
    lat = u.lattice
    n = n or lat.dealiased_grid_size
    if n < lat.dealiased_grid_size:
        raise ValueError(f"去混叠网格至少需要 {lat.dealiased_grid_size} 点")
    u_phys = np.real(np.fft.ifftn(_scatter(u.coeffs, lat, n), axes=(1, 2, 3))) * n ** 3

    advected = np.zeros((3, n, n, n))
    for a in range(3):
        grad_a = _scatter(1j * lat.kappa[:, a:a + 1] * v.coeffs, lat, n)
        grad_a_phys = np.real(np.fft.ifftn(grad_a, axes=(1, 2, 3))) * n ** 3
        advected += u_phys[a] * grad_a_phys

    spectral = np.fft.fftn(advected, axes=(1, 2, 3)) / n ** 3
    return _gather(spectral, lat)


NONLINEAR_METHODS = ('convolution', 'pseudospectral')


def nonlinear_B(u: VelocityField, v: VelocityField, lattice: Optional[WaveLattice] = None,
                method: str = 'convolution') -> VelocityField:
    """B(u, v) = P_L[截断((u·∇)v)]"""
    lat = _same_lattice(u, v) if lattice is None else _same_lattice(u, v, zeros(lattice))
    if method == 'convolution':
        raw = _advect_convolution(u, v)
    elif method == 'pseudospectral':
        raw = _advect_pseudospectral(u, v)
    else:
        raise ValueError(f"不支持的非线性项算法: {method}")
    return leray_project(raw, lat)


def trilinear_b(u: VelocityField, v: VelocityField, w: VelocityField,
                lattice: Optional[WaveLattice] = None, method: str = 'convolution') -> float:
    """b(u, v, w) = (B(u, v), w)；w 在格点上，截断不损失与 w 的配对"""
    return l2_inner(nonlinear_B(u, v, lattice, method=method), w)


# =========================
# 构造特定场
# =========================

def unit_mode(lattice: WaveLattice, k: ArrayLike, direction: ArrayLike,
              amplitude: float = 1.0, phase: float = 0.0) -> VelocityField:
    """单对模态 ±k，极化方向 direction，|w|_{L²} = amplitude"""
    j, conj = lattice.locate(k)
    e = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(e))
    if norm == 0.0:
        raise ValueError("极化方向不能为零向量")
    kap = lattice.kappa[j]
    if abs(float(np.dot(kap, e))) > 1e-12 * norm * float(np.linalg.norm(kap)):
        raise ValueError(f"极化方向 {list(e)} 与波矢 {list(k)} 不正交，场不是无散度的")
    c = amplitude * np.exp(1j * phase) * e / norm / np.sqrt(2.0 * lattice.volume)
    coeffs = np.zeros((lattice.size, 3), dtype=np.complex128)
    coeffs[j] = np.conj(c) if conj else c
    return VelocityField(lattice, coeffs)


def abc_field(lattice: WaveLattice, A: float = 1.0, B: float = 1.0, C: float = 1.0) -> VelocityField:
    """
    ABC (Beltrami) 流：u = (A sin z + C cos y, B sin x + A cos z, C sin y + B cos x)，curl u = u。
    只在 2π 立方盒子上有意义。
    """
    if not np.allclose(lattice.params.lengths, 2.0 * np.pi, rtol=1e-12, atol=0.0):
        raise ValueError("ABC 流需要 2π 周期立方盒子")
    n = 2 * lattice.params.cutoff + 1
    x = 2.0 * np.pi * np.arange(n) / n
    X, Y, Z = np.meshgrid(x, x, x, indexing='ij')
    values = np.stack([
        A * np.sin(Z) + C * np.cos(Y),
        B * np.sin(X) + A * np.cos(Z),
        C * np.sin(Y) + B * np.cos(X),
    ])
    return from_grid(values, lattice)


def random_field(lattice: WaveLattice, rng: np.random.Generator, slope: float = 0.0,
                 amplitude: float = 1.0) -> VelocityField:
    """带谱斜率 λ^{-slope} 的随机无散度场，|u|_{L²} = amplitude"""
    raw = rng.standard_normal((lattice.size, 3)) + 1j * rng.standard_normal((lattice.size, 3))
    raw *= lattice.eigenvalues[:, None] ** (-0.5 * slope)
    u = leray_project(raw, lattice)
    norm = h_norm(u)
    if norm == 0.0:
        return u
    return u * (amplitude / norm)
