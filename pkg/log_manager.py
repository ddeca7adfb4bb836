# -*- coding: utf-8 -*-
"""
日志管理模块
每次命令运行是一个会话，会话结束时把摘要写到 <LOG_DIR>/<配置哈希前12位>_<时间>.log
会话日志不进入输出目录，产物文件保持逐字节可复现
"""

import logging
import threading
import time
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from config import Config

logger = logging.getLogger(__name__)


class LogManager:
    """运行会话日志管理器"""

    def __init__(self, log_dir: Optional[str] = None):
        self.log_dir = Path(log_dir or Config.LOG_DIR)
        self.session: Optional[Dict[str, Any]] = None
        self.lock = threading.Lock()

    def _generate_log_filename(self, config_hash: str, start_time: float) -> str:
        """生成日志文件名：HASH12_YYYYMMDD_HHMMSS.log"""
        timestamp = datetime.fromtimestamp(start_time).strftime("%Y%m%d_%H%M%S")
        return f"{config_hash[:12]}_{timestamp}.log"

    def _get_file_logger(self, filepath: Path) -> logging.Logger:
        session_logger = logging.getLogger(f"session_{filepath.stem}")
        session_logger.setLevel(logging.INFO)
        session_logger.handlers.clear()
        handler = logging.FileHandler(filepath, mode='w', encoding='utf-8')
        handler.setFormatter(logging.Formatter('%(message)s'))
        session_logger.addHandler(handler)
        session_logger.propagate = False
        return session_logger

    def start_run_session(self, config_hash: str, n_atoms: int, command: str) -> str:
        """开始一个运行会话，返回会话 ID"""
        with self.lock:
            session_id = str(uuid.uuid4())[:8]
            self.session = {
                'session_id': session_id,
                'config_hash': config_hash,
                'command': command,
                'start_time': time.time(),
                'n_atoms': n_atoms,
                'atoms': [],
                'checks': [],
                'errors': [],
            }
        logger.info(f"[{command}] 会话开始 | 会话ID: {session_id} | 原子数: {n_atoms}")
        return session_id

    def log_atom_integration(self, index: int, elapsed: float, status: str = 'success', error: str = None):
        """记录单个原子的积分"""
        with self.lock:
            if self.session is None:
                return
            self.session['atoms'].append({'index': index, 'elapsed': elapsed, 'status': status})
            if error:
                self.session['errors'].append({'item': f"原子 #{index}", 'error': error})

    def log_check(self, check: str, passed: bool, detail: str = None):
        """记录一项检验结果"""
        with self.lock:
            if self.session is None:
                return
            self.session['checks'].append({'check': check, 'passed': bool(passed)})
            if not passed:
                self.session['errors'].append({'item': check, 'error': detail or '未通过'})

    def end_run_session(self) -> Optional[Path]:
        """结束会话并写出摘要，返回日志文件路径"""
        with self.lock:
            session, self.session = self.session, None
        if session is None:
            return None

        end_time = time.time()
        total_time = end_time - session['start_time']
        atoms_ok = sum(1 for a in session['atoms'] if a['status'] == 'success')
        atoms_failed = len(session['atoms']) - atoms_ok
        checks_ok = sum(1 for c in session['checks'] if c['passed'])
        checks_failed = len(session['checks']) - checks_ok

        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            filepath = self.log_dir / self._generate_log_filename(session['config_hash'], session['start_time'])
            out = self._get_file_logger(filepath)
        except OSError as e:
            logger.warning(f"会话日志写入失败: {e}")
            return None

        out.info("=== 运行会话日志 ===")
        out.info(f"会话ID: {session['session_id']}")
        out.info(f"命令: {session['command']}")
        out.info(f"配置哈希: {session['config_hash']}")
        out.info(f"开始时间: {datetime.fromtimestamp(session['start_time']).strftime('%Y-%m-%d %H:%M:%S')}")
        out.info(f"结束时间: {datetime.fromtimestamp(end_time).strftime('%Y-%m-%d %H:%M:%S')}")
        out.info(f"总耗时: {total_time:.2f}秒")
        out.info(f"原子数: {session['n_atoms']}")
        out.info(f"积分成功: {atoms_ok}")
        out.info(f"积分失败: {atoms_failed}")
        out.info(f"检验通过: {checks_ok}")
        out.info(f"检验失败: {checks_failed}")

        if session['errors']:
            out.info("")
            out.info("=== 失败列表 ===")
            for i, err in enumerate(session['errors'], 1):
                out.info(f"{i:3d}. {err['item']}: {err['error']}")

        for handler in list(out.handlers):
            handler.close()
            out.removeHandler(handler)
        return filepath

    def cleanup_old_logs(self, days: int = 30) -> int:
        """清理指定天数之前的会话日志"""
        if not self.log_dir.exists():
            return 0
        cutoff_time = time.time() - days * 24 * 60 * 60
        deleted_count = 0
        for log_file in self.log_dir.glob("*.log"):
            try:
                if log_file.stat().st_mtime < cutoff_time:
                    log_file.unlink()
                    deleted_count += 1
            except OSError as e:
                logger.warning(f"清理旧日志失败: {log_file.name} - {e}")
        if deleted_count > 0:
            logger.info(f"清理了 {deleted_count} 个旧日志文件")
        return deleted_count


# 全局日志管理器实例
log_manager = LogManager()


# 便捷函数
def start_run_session(config_hash: str, n_atoms: int, command: str) -> str:
    return log_manager.start_run_session(config_hash, n_atoms, command)


def log_atom_integration(index: int, elapsed: float, status: str = 'success', error: str = None):
    log_manager.log_atom_integration(index, elapsed, status, error)


def log_check(check: str, passed: bool, detail: str = None):
    log_manager.log_check(check, passed, detail)


def end_run_session() -> Optional[Path]:
    return log_manager.end_run_session()


def cleanup_old_logs(days: int = 30) -> int:
    return log_manager.cleanup_old_logs(days)
