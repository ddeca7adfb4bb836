# -*- coding: utf-8 -*-
"""
命令实现 - run / verify / report
参数解析在 run_cli.py；这里负责把错误映射成退出码并打印摘要

退出码：0 全部通过，1 有检验未通过，2 用法或配置错误，3 运行时失败（积分发散等）
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from colorama import Fore, Style, init as colorama_init

from check_processor import ALL_CHECKS, CheckContext, check_processor
from config import Config
from dynamics import IntegrationError
from ensemble_processor import EnsembleConfig, EnsembleProcessor, get_global_processor
from experiment_config import (
    ConfigError, ExperimentConfig, canonical_json, config_hash, load_config, make_forcing_signal,
    make_grid, make_initial_measure, make_ladder, make_lattice, make_psis,
)
from measure_kit import TrajectoryMeasure, default_test_family, initial_measure, make_trajectory_measure
from solution_checks import LINEAR_PSI, PsiFunction
from storage import FormatError, export_report, load_measure, load_report, save_measure, save_report, \
    sha256_file, write_manifest
from vf_pipeline import StatReport, VFBuildConfig, construct_vf_measure, inject_jump
import log_manager

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

DEFAULT_CHECKS = ('energy_inequality', 'liouville', 'mean_energy_inequality', 'mean_energy_bound', 'carrier')

colorama_init(autoreset=True)


# =========================
# 输出
# =========================

def _fail(message: str) -> None:
    print(f"{Fore.RED}❌ {message}{Style.RESET_ALL}")


def _print_progress(progress: int, message: str) -> None:
    print(f"⏳ [{progress:3d}%] {message}")


def print_processing_stats(processor: EnsembleProcessor) -> None:
    stats = processor.get_processing_stats()
    print(f"⚙️ 原子积分: 完成 {stats['completed']}, 失败 {stats['failed']} "
          f"(线程 {stats['max_workers']}, 并发 {stats['max_concurrent']})")


def print_summary(report: StatReport) -> None:
    """逐项检验的 PASS/FAIL 摘要"""
    by_check = {}
    for row in report.rows:
        ok = bool(row.get('passed', True))
        passed, total = by_check.get(row['check'], (0, 0))
        by_check[row['check']] = (passed + ok, total + 1)
    print("=" * 50)
    for check, (passed, total) in by_check.items():
        colour = Fore.GREEN if passed == total else Fore.RED
        verdict = 'PASS' if passed == total else 'FAIL'
        print(f"{colour}{verdict:4s}{Style.RESET_ALL}  {check:36s} {passed}/{total}")
    print("=" * 50)
    if report.passed:
        print(f"{Fore.GREEN}✅ 全部检验通过{Style.RESET_ALL}")
    else:
        print(f"{Fore.RED}❌ {len(report.failed_rows())} 行未通过{Style.RESET_ALL}")


# =========================
# 检验
# =========================

def run_checks(rho: TrajectoryMeasure, names: Sequence[str], *, tol: Optional[float] = None,
               refine: int = 0, psis: Optional[List[PsiFunction]] = None, family_size: int = 5,
               family_seed: int = 0, max_arity: int = 3, processor: Optional[EnsembleProcessor] = None,
               method: str = 'convolution', **context) -> StatReport:
    """
    在 ρ 上跑一组检验。refine ≥ 1 时先做 dt 减半研究，至少两层才标定容差；tol 缺省取标定值。
    检验函数族由初始时刻的原子和 family_seed 决定，同样的输入给出同样的族。
    """
    family = default_test_family(rho.lattice, initial_measure(rho).atoms, family_size, family_seed, max_arity)
    report = StatReport()
    calibrated = None
    if refine >= 1:
        report.refinement, calibrated = check_processor.refinement_study(rho, family, refine, processor, method)
    if tol is None:
        tol = calibrated if calibrated is not None else Config.DEFAULT_TOL
    ctx = CheckContext(family=family, psis=psis or [LINEAR_PSI], tol=tol,
                       **{k: v for k, v in context.items() if v is not None})
    logger.info(f"运行 {len(names)} 项检验, 容差 {tol:.3e}")
    return check_processor.run_all(list(names), rho, ctx, report)


def _processor_for(cfg: ExperimentConfig) -> EnsembleProcessor:
    if cfg.solver.max_workers is None:
        return get_global_processor()
    return EnsembleProcessor(EnsembleConfig(max_workers=cfg.solver.max_workers,
                                            max_concurrent=cfg.solver.max_workers))


def build_measure(cfg: ExperimentConfig, processor: Optional[EnsembleProcessor] = None,
                  progress_callback: Optional[Callable[[int, str], None]] = None) -> TrajectoryMeasure:
    """配置 → 轨道测度（含可选的跳跃负对照）"""
    lattice = make_lattice(cfg)
    grid = make_grid(cfg)
    forcing = make_forcing_signal(cfg, lattice, grid)
    mu0 = make_initial_measure(cfg, lattice)
    build = VFBuildConfig(interval=(grid.t0, grid.t1), dt=grid.dt, nu=cfg.box.viscosity, forcing=forcing,
                          ladder=make_ladder(cfg), galerkin_modes=cfg.solver.galerkin_modes,
                          method=cfg.solver.method)
    rho = construct_vf_measure(mu0, build, processor, progress_callback)
    jump = cfg.checks.jump
    if jump is not None:
        atoms = list(rho.atoms)
        atoms[jump.atom] = inject_jump(atoms[jump.atom], jump.delta, jump.magnitude)
        rho = make_trajectory_measure(atoms, rho.weights)
        logger.info(f"原子 #{jump.atom} 注入跳跃 {jump.magnitude:g} (δ={jump.delta:g})")
    return rho


# =========================
# 命令
# =========================

def cmd_run(config_path: str, out_dir: Optional[str] = None) -> int:
    """读取配置 → 构造测度 → 写出轨道、测度、（可选）报告与清单"""
    started = datetime.now()
    try:
        cfg = load_config(config_path)
    except (FileNotFoundError, ConfigError) as e:
        _fail(f"配置错误: {e}")
        return EXIT_USAGE

    digest = config_hash(cfg)
    out = Path(out_dir or cfg.output.directory)
    n_atoms = len(cfg.initial.atoms) if cfg.initial.kind == 'explicit' else cfg.initial.count
    log_manager.start_run_session(digest, n_atoms, 'run')
    print(f"🚀 实验 {cfg.name} (配置哈希 {digest[:12]})")
    try:
        processor = _processor_for(cfg)
        rho = build_measure(cfg, processor, _print_progress)
        print_processing_stats(processor)
        files = save_measure(rho, out)
        config_copy = out / 'config.json'
        config_copy.write_text(canonical_json(cfg) + '\n', encoding='utf-8')
        files.append(config_copy)

        exit_code = EXIT_OK
        if cfg.checks.names:
            c = cfg.checks
            report = run_checks(rho, c.names, tol=c.tol, refine=c.refine, psis=make_psis(cfg),
                                family_size=c.family_size, family_seed=c.family_seed, max_arity=c.max_arity,
                                processor=processor, method=cfg.solver.method,
                                liouville_tol=c.liouville_tol, continuity_tol=c.continuity_tol, delta=c.delta,
                                ball_radius=c.ball_radius, localization_radius=c.localization_radius,
                                stride=c.stride)
            files.append(save_report(report, out / 'report.json'))
            print_summary(report)
            exit_code = EXIT_OK if report.passed else EXIT_CHECK_FAILED

        manifest = write_manifest(out, digest, files, started)
        print(f"📁 输出目录: {out} (清单 {manifest.name})")
        return exit_code
    except IntegrationError as e:
        _fail(f"积分失败: {e}")
        return EXIT_RUNTIME
    except ValueError as e:
        _fail(f"参数错误: {e}")
        return EXIT_USAGE
    finally:
        log_manager.end_run_session()


def cmd_verify(measure_path: str, checks: Optional[Sequence[str]] = None, tol: Optional[float] = None,
               refine: int = 0, out: Optional[str] = None, psis: Optional[List[PsiFunction]] = None,
               family_size: int = 5, family_seed: int = 0) -> int:
    """在已写出的测度上跑检验；报告写到测度旁边（或 out），失败时也写"""
    checks = list(DEFAULT_CHECKS) if checks is None else list(checks)
    if not checks:
        _fail("检验列表为空")
        return EXIT_USAGE
    unknown = [c for c in checks if c not in ALL_CHECKS]
    if unknown:
        _fail(f"不支持的检验: {unknown}")
        return EXIT_USAGE

    try:
        rho = load_measure(measure_path)
    except (FileNotFoundError, FormatError) as e:
        _fail(f"读取测度失败: {e}")
        return EXIT_USAGE

    log_manager.start_run_session(sha256_file(measure_path), len(rho), 'verify')
    try:
        report = run_checks(rho, checks, tol=tol, refine=refine, psis=psis,
                            family_size=family_size, family_seed=family_seed)
        report_path = Path(out) if out else Path(measure_path).parent / 'report.json'
        save_report(report, report_path)
        print_summary(report)
        print(f"📄 报告: {report_path}")
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED
    except IntegrationError as e:
        _fail(f"积分失败: {e}")
        return EXIT_RUNTIME
    except ValueError as e:
        _fail(f"检验无法执行: {e}")
        return EXIT_USAGE
    finally:
        log_manager.end_run_session()


def cmd_report(report_path: str, fmt: str, out: Optional[str] = None) -> int:
    """报告 → 作图用的表格文件"""
    try:
        report = load_report(report_path)
        stem = Path(out) if out else Path(report_path).with_suffix('')
        written = export_report(report, stem, fmt)
    except (FileNotFoundError, FormatError, ValueError) as e:
        _fail(f"导出失败: {e}")
        return EXIT_USAGE
    for path in written:
        print(f"📄 {path}")
    return EXIT_OK
