# -*- coding: utf-8 -*-
"""运行会话日志"""

import os
import time

import log_manager
from log_manager import LogManager


class TestSession:

    def test_summary_file(self, tmp_path):
        manager = LogManager(str(tmp_path))
        manager.start_run_session('abcdef0123456789' * 4, 2, 'verify')
        manager.log_atom_integration(0, 0.01)
        manager.log_atom_integration(1, 0.02, 'failed', '发散')
        manager.log_check('energy_inequality', True)
        manager.log_check('carrier', False, '原子 [0] 未通过')
        path = manager.end_run_session()

        assert path.parent == tmp_path
        assert path.name.startswith('abcdef012345_')
        text = path.read_text(encoding='utf-8')
        assert "命令: verify" in text
        assert "积分失败: 1" in text
        assert "检验通过: 1" in text
        assert "检验失败: 1" in text
        assert "carrier: 原子 [0] 未通过" in text
        assert manager.session is None

    def test_events_without_session_are_ignored(self, tmp_path):
        manager = LogManager(str(tmp_path))
        manager.log_check('liouville', False)
        manager.log_atom_integration(0, 0.1)
        assert manager.end_run_session() is None
        assert not list(tmp_path.glob('*.log'))

    def test_module_helpers_use_global_manager(self):
        log_manager.start_run_session('0' * 64, 1, 'run')
        log_manager.log_check('liouville', True)
        path = log_manager.end_run_session()
        assert path.exists()
        assert path.parent == log_manager.log_manager.log_dir


class TestCleanup:

    def test_removes_only_old_logs(self, tmp_path):
        manager = LogManager(str(tmp_path))
        old = tmp_path / 'old.log'
        new = tmp_path / 'new.log'
        old.write_text('x', encoding='utf-8')
        new.write_text('y', encoding='utf-8')
        stale = time.time() - 40 * 24 * 3600
        os.utime(old, (stale, stale))

        assert manager.cleanup_old_logs(days=30) == 1
        assert not old.exists()
        assert new.exists()

    def test_missing_directory(self, tmp_path):
        assert LogManager(str(tmp_path / 'nowhere')).cleanup_old_logs() == 0
