# -*- coding: utf-8 -*-
"""
统计解验证工具命令行入口

    python run_cli.py run experiment.json
    python run_cli.py verify output/measure.json --checks liouville carrier --refine 3
    python run_cli.py report output/report.json --format csv
"""

import argparse
import logging
import sys
from pathlib import Path

from config import get_config


def check_dependencies() -> bool:
    """检查依赖包"""
    required_packages = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'pandas': 'pandas',
        'openpyxl': 'openpyxl',
        'pydantic': 'pydantic',
        'colorama': 'colorama',
    }

    missing_packages = []
    for pip_name, import_name in required_packages.items():
        try:
            __import__(import_name)
        except ImportError:
            missing_packages.append(pip_name)

    if missing_packages:
        print("❌ 缺少以下依赖包:")
        for package in missing_packages:
            print(f"   - {package}")
        print(f"\n请运行: pip install {' '.join(missing_packages)}")
        return False
    return True


def setup_logging(settings, verbose: bool = False) -> None:
    Path(settings.LOG_DIR).mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(Path(settings.LOG_DIR) / settings.LOG_FILE, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Navier-Stokes 统计解验证工具')
    parser.add_argument('-v', '--verbose', action='store_true', help='输出调试日志')
    parser.add_argument('--env', default=None, choices=['development', 'production', 'testing', 'default'],
                        help='配置环境（缺省读 VF_ENV）')
    parser.add_argument('--check-only', action='store_true', help='仅检查环境')
    parser.add_argument('--cleanup-logs', type=int, default=None, metavar='DAYS', help='删除 DAYS 天前的会话日志')
    sub = parser.add_subparsers(dest='command')

    run = sub.add_parser('run', help='按配置构造轨道测度并写出')
    run.add_argument('config', help='实验配置 JSON')
    run.add_argument('--out', default=None, help='输出目录（缺省取配置中的 output.directory）')

    verify = sub.add_parser('verify', help='在已写出的测度上跑检验')
    verify.add_argument('measure', help='measure.json 路径')
    verify.add_argument('--checks', nargs='*', default=None, help='检验名列表（缺省为常用组合）')
    verify.add_argument('--tol', type=float, default=None, help='不等式容差（缺省用加密标定值）')
    verify.add_argument('--refine', type=int, default=0, help='dt 减半层数')
    verify.add_argument('--psi', nargs='*', default=None, help='ψ 列表，如 linear saturating:1 saturating:10')
    verify.add_argument('--family-size', type=int, default=5, help='柱状检验函数个数')
    verify.add_argument('--family-seed', type=int, default=0, help='检验函数族的随机种子')
    verify.add_argument('--out', default=None, help='报告路径')

    report = sub.add_parser('report', help='把报告导出成作图用的表格')
    report.add_argument('report', help='report.json 路径')
    report.add_argument('--format', dest='fmt', default='csv', choices=['csv', 'json', 'xlsx'])
    report.add_argument('--out', default=None, help='输出文件名前缀')
    return parser


def parse_psis(items):
    """'linear' / 'saturating:a' → PsiFunction"""
    from measure_kit import psi_family
    if not items:
        return None
    psis = []
    for item in items:
        kind, _, a = item.partition(':')
        psis.append(psi_family(kind, float(a) if a else 1.0))
    return psis


def main(argv=None) -> int:
    """主函数"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not check_dependencies():
        return 2
    if args.check_only:
        print("✅ 环境检查完成")
        return 0
    if args.cleanup_logs is not None:
        import log_manager
        deleted = log_manager.cleanup_old_logs(args.cleanup_logs)
        print(f"🧹 清理了 {deleted} 个旧会话日志")
        if args.command is None:
            return 0
    if args.command is None:
        parser.print_help()
        return 2

    try:
        settings = get_config(args.env)
    except ValueError as e:
        print(f"❌ {e}")
        return 2
    setup_logging(settings, args.verbose)
    import commands
    from ensemble_processor import get_global_processor
    get_global_processor(settings)

    if args.command == 'run':
        return commands.cmd_run(args.config, args.out)
    if args.command == 'verify':
        try:
            psis = parse_psis(args.psi)
        except ValueError as e:
            print(f"❌ ψ 参数错误: {e}")
            return 2
        return commands.cmd_verify(args.measure, args.checks, args.tol, args.refine, args.out, psis,
                                   args.family_size, args.family_seed)
    return commands.cmd_report(args.report, args.fmt, args.out)


if __name__ == '__main__':
    sys.exit(main())
