# -*- coding: utf-8 -*-
"""
检验处理模块
按检验名分派到单轨道检验或测度级检验，结果汇总成 StatReport
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from dynamics import energy_balance_defect, observed_order
from ensemble_processor import EnsembleProcessor
from measure_kit import CylindricalTestFunction, TrajectoryMeasure, initial_measure
from solution_checks import (
    LINEAR_PSI, InequalityReport, MisuseError, PsiFunction, apriori_bound, ball_invariance,
    calibrate_tolerance, compute_R0, decay_envelope, energy_inequality_sweep, energy_monotonicity,
    strong_continuity_diagnostic,
)
from vf_pipeline import (
    StatReport, VFBuildConfig, carrier_bound, carrier_check, construct_vf_measure,
    convex_approx_diagnostic, initial_continuity, liouville_residuals, localization_check,
    mean_energy_bound, mean_energy_inequality_sweep, mean_energy_series, mixture_sequence,
    projection_battery, subsample_sequence, weak_mean_energy_inequality,
)
import log_manager

logger = logging.getLogger(__name__)

TRAJECTORY_CHECKS = (
    'energy_inequality',
    'strengthened_energy_inequality',
    'apriori_bound',
    'decay_envelope',
    'ball_invariance',
    'energy_monotonicity',
    'strong_continuity',
)

ENSEMBLE_CHECKS = (
    'liouville',
    'mean_energy_inequality',
    'weak_mean_energy_inequality',
    'initial_continuity',
    'mean_energy_bound',
    'carrier',
    'carrier_bound',
    'localization',
    'convex_approx',
    'projection',
)

ALL_CHECKS = TRAJECTORY_CHECKS + ENSEMBLE_CHECKS


@dataclass
class CheckContext:
    """一次检验运行的参数"""
    family: List[CylindricalTestFunction]
    psis: List[PsiFunction] = field(default_factory=lambda: [LINEAR_PSI])
    tol: float = Config.DEFAULT_TOL    # 不等式容差（可由加密研究标定）
    liouville_tol: float = 1e-6
    continuity_tol: float = 1e-6
    delta: Optional[float] = None      # 初始连续性的时间窗，缺省 16·dt
    ball_radius: Optional[float] = None
    localization_radius: Optional[float] = None
    sample_stride: int = 4
    stride: Optional[int] = None       # 节点对扫描的步长，缺省让节点数不超过 50


class BaseChecker:
    """检验器基类"""

    def _stride(self, rho: TrajectoryMeasure, ctx: CheckContext) -> int:
        if ctx.stride:
            return ctx.stride
        return max(1, len(rho.grid.nodes) // 50)

    def _worst(self, reports: Sequence[InequalityReport], **context) -> Dict[str, Any]:
        """一组不等式里 defect 最小的那一行，附带统计"""
        worst = min(reports, key=lambda r: r.defect)
        row = worst.to_row()
        row.update(context)
        row['pairs'] = len(reports)
        row['failed_pairs'] = sum(1 for r in reports if not r.passed)
        row['passed'] = row['failed_pairs'] == 0
        return row

    def _pair_sweep(self, traj, fn, stride: int, **kwargs) -> List[InequalityReport]:
        nodes = traj.grid.nodes[::stride]
        return [fn(traj, float(a), float(b), **kwargs)
                for i, a in enumerate(nodes) for b in nodes[i + 1:]]


class TrajectoryChecker(BaseChecker):
    """逐原子的单轨道检验"""

    def run(self, check: str, rho: TrajectoryMeasure, ctx: CheckContext, report: StatReport) -> bool:
        stride = self._stride(rho, ctx)
        passed = True
        for j, traj in enumerate(rho.atoms):
            if check == 'energy_inequality':
                rows = [self._worst(energy_inequality_sweep(traj, LINEAR_PSI, ctx.tol, stride), atom=j)]
            elif check == 'strengthened_energy_inequality':
                rows = [self._worst(energy_inequality_sweep(traj, psi, ctx.tol, stride), atom=j, psi=psi.name)
                        for psi in ctx.psis]
                for row in rows:
                    row['check'] = check
            elif check == 'apriori_bound':
                rows = [self._worst(self._pair_sweep(traj, apriori_bound, stride, tol=ctx.tol), atom=j)]
            elif check == 'decay_envelope':
                rows = [self._worst(self._pair_sweep(traj, decay_envelope, stride, tol=ctx.tol), atom=j)]
            elif check == 'ball_invariance':
                rows = [self._ball(traj, ctx, j)]
            elif check == 'energy_monotonicity':
                rows = [self._monotonicity(traj, j)]
            elif check == 'strong_continuity':
                result = strong_continuity_diagnostic(traj)
                row = result.to_row()
                row['atom'] = j
                rows = [row]
                report.psi_samples.extend({'atom': j, 'h': h, 'psi': v, 'synthetic': traj.synthetic}
                                          for h, v in result.samples)
            else:
                raise ValueError(f"不支持的单轨道检验: {check}")
            for row in rows:
                report.add(row)
                passed = passed and bool(row['passed'])
        return passed

    def _ball(self, traj, ctx: CheckContext, j: int) -> Dict[str, Any]:
        R0 = compute_R0(traj.forcing, traj.viscosity, traj.lattice.lambda1)
        R = ctx.ball_radius if ctx.ball_radius is not None else max(R0, float(np.sqrt(traj.energies[0])))
        try:
            row = ball_invariance(traj, R).to_row()
        except MisuseError as e:
            row = {'check': 'ball_invariance', 'R': R, 'passed': False, 'error': str(e)}
        row.update({'atom': j, 'R0': R0})
        return row

    def _monotonicity(self, traj, j: int) -> Dict[str, Any]:
        try:
            row = energy_monotonicity(traj).to_row()
        except MisuseError as e:
            # 有外力时不适用，不算失败
            row = {'check': 'energy_monotonicity', 'passed': True, 'skipped': str(e)}
        row['atom'] = j
        return row


class EnsembleChecker(BaseChecker):
    """测度级检验"""

    def run(self, check: str, rho: TrajectoryMeasure, ctx: CheckContext, report: StatReport) -> bool:
        grid = rho.grid
        if check == 'liouville':
            residuals = liouville_residuals(rho, ctx.family, grid.t0, grid.t1)
            rows = [{'check': 'liouville', 'phi': phi.name, 't_prime': grid.t0, 't': grid.t1,
                     'residual': r, 'tol': ctx.liouville_tol, 'passed': r <= ctx.liouville_tol}
                    for phi, r in zip(ctx.family, residuals)]
        elif check == 'mean_energy_inequality':
            rows = [self._worst(mean_energy_inequality_sweep(rho, psi, ctx.tol, self._stride(rho, ctx)),
                                psi=psi.name) for psi in ctx.psis]
        elif check == 'weak_mean_energy_inequality':
            rows = [weak_mean_energy_inequality(rho, grid.t0, grid.t1, tol=ctx.tol).to_row()]
        elif check == 'initial_continuity':
            delta = ctx.delta if ctx.delta is not None else min(16 * grid.dt, grid.t1 - grid.t0)
            rows = []
            for psi in ctx.psis:
                row = initial_continuity(rho, psi, delta, ctx.continuity_tol).to_row()
                row['psi'] = psi.name
                rows.append(row)
        elif check == 'mean_energy_bound':
            rows = [self._worst(mean_energy_bound(rho, tol=ctx.tol))]
        elif check == 'carrier':
            result = carrier_check(rho)
            rows = [result.to_row()]
            for j, atom_report in enumerate(result.atom_reports):
                report.psi_samples.extend({'atom': j, 'h': h, 'psi': v, 'synthetic': rho.atoms[j].synthetic}
                                          for h, v in atom_report.samples)
            report.psi_samples.extend({'atom': 'weighted', 'h': h, 'psi': v, 'synthetic': False}
                                      for h, v in result.weighted_samples)
        elif check == 'carrier_bound':
            rows = []
            h = grid.dt
            while h <= 16 * grid.dt and h <= grid.t1 - grid.t0:
                rows.append(carrier_bound(rho, h, ctx.tol).to_row())
                h *= 2
        elif check == 'localization':
            rows = [self._localization(rho, ctx)]
        elif check == 'convex_approx':
            rows = self._convex(rho, ctx)
        elif check == 'projection':
            battery = projection_battery(rho, ctx.family, ctx.psis, ctx.tol, self._stride(rho, ctx))
            rows = [self._worst_projection(battery)]
            report.series.update(battery.series)
            rows.extend(r for r in battery.rows if r['check'] in ('liouville', 'mean_energy_bounded',
                                                                  'mean_enstrophy_integrable'))
            for row in rows:
                if row['check'] == 'liouville':
                    row['check'] = 'projection_liouville'
                    row['tol'] = ctx.liouville_tol
                    row['passed'] = row['residual'] <= ctx.liouville_tol
        else:
            raise ValueError(f"不支持的测度级检验: {check}")

        for row in rows:
            report.add(row)
        return all(bool(row['passed']) for row in rows)

    def _worst_projection(self, battery: StatReport) -> Dict[str, Any]:
        mean_rows = [r for r in battery.rows if r['check'] == 'mean_energy_inequality']
        worst = min(mean_rows, key=lambda r: r['defect'])
        row = dict(worst)
        row['check'] = 'projection_mean_energy_inequality'
        row['pairs'] = len(mean_rows)
        row['failed_pairs'] = sum(1 for r in mean_rows if not r['passed'])
        row['passed'] = row['failed_pairs'] == 0
        return row

    def _localization(self, rho: TrajectoryMeasure, ctx: CheckContext) -> Dict[str, Any]:
        if ctx.localization_radius is not None:
            R = ctx.localization_radius
        else:
            R0 = compute_R0(rho.forcing, rho.viscosity, rho.lattice.lambda1)
            R = max([R0] + [float(np.sqrt(traj.energies[0])) for traj in rho.atoms])
        samples = rho.grid.nodes[::max(1, ctx.sample_stride)]
        result = localization_check(rho, R, samples)
        row = result.to_row()
        row['consistent'] = result.consistent
        row['passed'] = result.passed and result.consistent
        return row

    def _convex(self, rho: TrajectoryMeasure, ctx: CheckContext) -> List[Dict[str, Any]]:
        N = len(rho)
        sizes = [n for n in (4, 8, 16, 32, 64, 128, 256) if n < N] + [N]
        J = (rho.grid.t0, rho.grid.t1)
        rows = []
        # 只有混合序列 (n/N)·ρ + (1-n/N)·seed 保证差距单调不增；前缀子样本的 nonincreasing 只作记录
        for name, sequence in (('mixture', mixture_sequence(rho, sizes)),
                               ('subsample', subsample_sequence(rho, sizes))):
            table = convex_approx_diagnostic(sequence, rho, ctx.family, J)
            for phi in ctx.family:
                gaps = table.gaps(phi.name)
                monotone = table.nonincreasing[phi.name]
                final_zero = gaps[-1] == 0.0
                rows.append({'check': 'convex_approx', 'sequence': name, 'phi': phi.name,
                             'sizes': ','.join(str(n) for n in sizes),
                             'gaps': ','.join(f'{g:.3e}' for g in gaps),
                             'final_gap': gaps[-1], 'nonincreasing': monotone,
                             'monotone_required': name == 'mixture',
                             'passed': final_zero and (monotone or name == 'subsample')})
        return rows


class CheckProcessor:
    """检验处理器 - 统一的入口，根据检验名选择检验器"""

    def __init__(self):
        self.trajectory_checker = TrajectoryChecker()
        self.ensemble_checker = EnsembleChecker()

    def run_check(self, check: str, rho: TrajectoryMeasure, ctx: CheckContext, report: StatReport) -> bool:
        if check in TRAJECTORY_CHECKS:
            passed = self.trajectory_checker.run(check, rho, ctx, report)
        elif check in ENSEMBLE_CHECKS:
            passed = self.ensemble_checker.run(check, rho, ctx, report)
        else:
            raise ValueError(f"不支持的检验: {check}")
        log_manager.log_check(check, passed)
        logger.info(f"检验 {check}: {'通过' if passed else '未通过'}")
        return passed

    def run_all(self, checks: Sequence[str], rho: TrajectoryMeasure, ctx: CheckContext,
                report: Optional[StatReport] = None) -> StatReport:
        if not checks:
            raise ValueError("检验列表为空")
        unknown = [c for c in checks if c not in ALL_CHECKS]
        if unknown:
            raise ValueError(f"不支持的检验: {unknown}")
        report = report or StatReport()
        report.test_family = [phi.describe() for phi in ctx.family]
        report.annuli = [dict(a) for a in rho.annuli]
        if 't' not in report.series:
            energy, enstrophy = mean_energy_series(rho)
            report.series.update({'t': rho.grid.nodes.tolist(), 'mean_energy': energy.tolist(),
                                  'mean_enstrophy': enstrophy.tolist()})
        for check in checks:
            self.run_check(check, rho, ctx, report)
        return report

    def refinement_study(self, rho: TrajectoryMeasure, family: Sequence[CylindricalTestFunction],
                         levels: int, processor: Optional[EnsembleProcessor] = None,
                         method: str = 'convolution') -> Tuple[List[Dict[str, Any]], Optional[float]]:
        """
        dt, dt/2, ... 下从同一初始测度重新积分，记录 Liouville 残差与能量恒等式偏差的收敛阶。
        返回 (表格, 标定出的不等式容差)；只有一层时不标定。
        """
        if levels < 1:
            raise ValueError(f"加密层数必须 ≥ 1: {levels}")
        grid = rho.grid
        mu0 = initial_measure(rho)
        residuals, defects, dts = [], [], []
        for j in range(levels):
            dt = grid.dt / 2 ** j
            if j == 0:
                measure = rho
            else:
                cfg = VFBuildConfig(interval=(grid.t0, grid.t1), dt=dt, nu=rho.viscosity,
                                    forcing=rho.forcing, method=method)
                measure = construct_vf_measure(mu0, cfg, processor)
            residuals.append(max(liouville_residuals(measure, family, grid.t0, grid.t1)))
            defects.append(max(abs(energy_balance_defect(traj, grid.t0, grid.t1)) for traj in measure.atoms))
            dts.append(dt)
            logger.info(f"加密第 {j} 层: dt={dt:.3g}, Liouville 残差 {residuals[-1]:.3e}, 能量偏差 {defects[-1]:.3e}")

        res_orders = [None] + observed_order(residuals)
        def_orders = [None] + observed_order(defects)
        rows = [{'level': j, 'dt': dts[j], 'liouville_max': residuals[j], 'energy_defect': defects[j],
                 'liouville_order': res_orders[j], 'energy_order': def_orders[j]}
                for j in range(levels)]
        tol = calibrate_tolerance(defects[0], defects[1], dts[0]) if levels >= 2 else None
        return rows, tol


# 全局处理器实例
check_processor = CheckProcessor()
