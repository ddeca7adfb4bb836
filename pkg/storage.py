# -*- coding: utf-8 -*-
"""
存储模块
轨道 / 测度 / 清单 / 报告的文件格式，以及报告的表格导出（CSV、JSON、Excel）

浮点数一律按 repr 写出，读回逐位相同；除清单里的时间戳外，同一配置两次运行的文件逐字节相同。
"""

import hashlib
import json
import logging
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from config import Config
from dynamics import TimeGrid, Trajectory, make_forcing
from measure_kit import TrajectoryMeasure, make_trajectory_measure
from spectral_core import BoxParams, LatticeMismatchError, VelocityField, WaveLattice, build_lattice
from vf_pipeline import StatReport

logger = logging.getLogger(__name__)

TRAJECTORY_FORMAT = 'vf-statsol/trajectory@1'
MEASURE_FORMAT = 'vf-statsol/measure@1'
REPORT_FORMAT = 'vf-statsol/report@1'

EXPORT_FORMATS = ('csv', 'json', 'xlsx')

PathLike = Union[str, Path]


class FormatError(ValueError):
    """文件内容不是预期格式"""


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"无法序列化: {type(obj).__name__}")


def _dumps(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, ensure_ascii=False, separators=(',', ':'), default=_default)


def _write(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(payload) + '\n', encoding='utf-8')
    return path


def _read(path: PathLike, expected: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"文件不存在: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: JSON 解析失败: {e}") from e
    if not isinstance(data, dict) or data.get('format') != expected:
        raise FormatError(f"{path}: 不是 {expected} 文件")
    return data


def sha256_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


# =========================
# 系数编码
# =========================

def _encode(coeffs: np.ndarray) -> List[float]:
    """复系数 → 扁平 [re, im, re, im, ...]"""
    return np.stack([coeffs.real, coeffs.imag], axis=-1).reshape(-1).tolist()


def _decode(flat: List[float], shape) -> np.ndarray:
    arr = np.asarray(flat, dtype=np.float64).reshape(tuple(shape) + (2,))
    return arr[..., 0] + 1j * arr[..., 1]


# =========================
# 轨道
# =========================

def trajectory_to_dict(traj: Trajectory) -> Dict[str, Any]:
    n = traj.lattice.size
    return {
        'format': TRAJECTORY_FORMAT,
        'lattice': traj.lattice.descriptor(),
        'nu': traj.viscosity,
        'solver': traj.solver,
        'synthetic': traj.synthetic,
        'nodes': traj.grid.nodes.tolist(),
        'wavevectors': traj.lattice.wavevectors.tolist(),
        'forcing': [{'start': seg.start, 'end': seg.end, 'coeffs': _encode(seg.field.coeffs)}
                    for seg in traj.forcing.segments],
        'states': [_encode(traj.states[i]) for i in range(len(traj))],
        'shape': [len(traj), n, 3],
    }


def trajectory_from_dict(data: Dict[str, Any], lattice: Optional[WaveLattice] = None) -> Trajectory:
    if lattice is None:
        lattice = build_lattice(BoxParams(**data['lattice']))
    if not np.array_equal(np.asarray(data['wavevectors']), lattice.wavevectors):
        raise LatticeMismatchError("文件中的波矢与重建的格点不一致")
    grid = TimeGrid(np.asarray(data['nodes'], dtype=np.float64))
    segments = [(seg['start'], seg['end'], VelocityField(lattice, _decode(seg['coeffs'], (lattice.size, 3))))
                for seg in data['forcing']]
    forcing = make_forcing(segments, lattice, (grid.t0, grid.t1))
    states = _decode(data['states'], data['shape'])
    return Trajectory(grid=grid, states=states, lattice=lattice, viscosity=float(data['nu']),
                      forcing=forcing, solver=data['solver'], synthetic=bool(data['synthetic']))


def save_trajectory(traj: Trajectory, path: PathLike) -> Path:
    return _write(Path(path), trajectory_to_dict(traj))


def load_trajectory(path: PathLike, lattice: Optional[WaveLattice] = None) -> Trajectory:
    return trajectory_from_dict(_read(path, TRAJECTORY_FORMAT), lattice)


# =========================
# 测度
# =========================

def save_measure(rho: TrajectoryMeasure, directory: PathLike, name: str = 'measure.json') -> List[Path]:
    """原子写到 trajectories/atom_XXXX.json，测度文件只记权重和相对路径"""
    directory = Path(directory)
    written = []
    relative = []
    for j, traj in enumerate(rho.atoms):
        rel = f"trajectories/atom_{j:04d}.json"
        written.append(save_trajectory(traj, directory / rel))
        relative.append(rel)
    payload = {'format': MEASURE_FORMAT, 'weights': [float(w) for w in rho.weights], 'atoms': relative}
    if rho.annuli:
        payload['annuli'] = list(rho.annuli)
    written.append(_write(directory / name, payload))
    logger.info(f"测度已写出: {directory / name} ({len(relative)} 个原子)")
    return written


def load_measure(path: PathLike) -> TrajectoryMeasure:
    path = Path(path)
    data = _read(path, MEASURE_FORMAT)
    lattices: Dict[str, WaveLattice] = {}
    atoms = []
    for rel in data['atoms']:
        raw = _read(path.parent / rel, TRAJECTORY_FORMAT)
        key = json.dumps(raw['lattice'], sort_keys=True)
        if key not in lattices:
            lattices[key] = build_lattice(BoxParams(**raw['lattice']))
        atoms.append(trajectory_from_dict(raw, lattices[key]))
    logger.info(f"读取测度: {path} ({len(atoms)} 个原子)")
    rho = make_trajectory_measure(atoms, data['weights'])
    if data.get('annuli'):
        rho = replace(rho, annuli=tuple(data['annuli']))
    return rho


# =========================
# 清单
# =========================

def write_manifest(directory: PathLike, config_hash: str, files: List[Path], started: datetime,
                   name: str = 'manifest.json') -> Path:
    directory = Path(directory)
    inventory = {p.relative_to(directory).as_posix(): sha256_file(p) for p in sorted(files)}
    payload = {
        'format': 'vf-statsol/manifest@1',
        'config_hash': config_hash,
        'code_version': Config.CODE_VERSION,
        'timestamps': {'started': started.isoformat(timespec='seconds'),
                       'finished': datetime.now().isoformat(timespec='seconds')},
        'files': inventory,
    }
    return _write(directory / name, payload)


def verify_manifest(path: PathLike) -> List[str]:
    """返回哈希不一致或缺失的文件列表"""
    path = Path(path)
    data = _read(path, 'vf-statsol/manifest@1')
    bad = []
    for rel, digest in data['files'].items():
        target = path.parent / rel
        if not target.exists() or sha256_file(target) != digest:
            bad.append(rel)
    return bad


# =========================
# 报告
# =========================

def save_report(report: StatReport, path: PathLike) -> Path:
    payload = {'format': REPORT_FORMAT}
    payload.update(report.to_dict())
    return _write(Path(path), payload)


def load_report(path: PathLike) -> StatReport:
    data = _read(path, REPORT_FORMAT)
    return StatReport(rows=data.get('rows', []), series=data.get('series', {}),
                      psi_samples=data.get('psi_samples', []), refinement=data.get('refinement', []),
                      test_family=data.get('test_family', []), annuli=data.get('annuli', []))


def _flat_rows(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    # 列表值（失败原子下标等）拼成字符串，Excel 单元格只接受标量
    return [{k: ','.join(str(x) for x in v) if isinstance(v, (list, tuple)) else v for k, v in row.items()}
            for row in rows]


def report_tables(report: StatReport) -> Dict[str, pd.DataFrame]:
    """报告 → 表格：series（t 与各量）、checks、psi_samples、refinement、annuli（空表跳过）"""
    tables = {}
    if report.series:
        tables['series'] = pd.DataFrame(report.series)
    if report.rows:
        tables['checks'] = pd.DataFrame(_flat_rows(report.rows))
    if report.psi_samples:
        tables['psi_samples'] = pd.DataFrame(report.psi_samples)
    if report.refinement:
        tables['refinement'] = pd.DataFrame(report.refinement)
    if report.annuli:
        tables['annuli'] = pd.DataFrame(_flat_rows(report.annuli))
    return tables


def export_report(report: StatReport, out_stem: PathLike, fmt: str) -> List[Path]:
    """
    导出报告表格：
    - csv: 每张表一个 <stem>_<表名>.csv
    - json: 一个 <stem>.json，每张表是一组 records
    - xlsx: 一个 <stem>.xlsx，每张表一个工作表
    """
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"不支持的导出格式: {fmt}")
    out_stem = Path(out_stem)
    out_stem.parent.mkdir(parents=True, exist_ok=True)
    tables = report_tables(report)
    if not tables:
        raise ValueError("报告为空，没有可导出的表格")

    written = []
    if fmt == 'csv':
        for name, df in tables.items():
            path = out_stem.parent / f"{out_stem.name}_{name}.csv"
            df.to_csv(path, index=False, float_format=Config.REPORT_FLOAT_FORMAT)
            written.append(path)
    elif fmt == 'json':
        path = out_stem.parent / f"{out_stem.name}.json"
        payload = {name: json.loads(df.to_json(orient='records', double_precision=15)) for name, df in tables.items()}
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding='utf-8')
        written.append(path)
    else:
        path = out_stem.parent / f"{out_stem.name}.xlsx"
        with pd.ExcelWriter(path, engine='openpyxl') as writer:
            for name, df in tables.items():
                df.to_excel(writer, sheet_name=name, index=False)
        written.append(path)
    logger.info(f"报告已导出 ({fmt}): {', '.join(p.name for p in written)}")
    return written
