# -*- coding: utf-8 -*-
"""
并发积分模块
一个测度的每个原子各积分一条轨道：信号量限制同时在飞的任务数，
纯函数积分放进线程池执行，结果按原子原始顺序重新排序
"""

import asyncio
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

from config import Config
from dynamics import IntegrationError, Trajectory
from spectral_core import LatticeMismatchError, VelocityField
import log_manager

logger = logging.getLogger(__name__)

AtomTask = Callable[[VelocityField], Trajectory]


@dataclass
class EnsembleConfig:
    """并发配置"""
    max_workers: int = Config.MAX_WORKERS         # 线程池大小
    max_concurrent: int = Config.MAX_CONCURRENT   # 同时在飞的原子任务


def _error_category(exc: BaseException) -> str:
    if isinstance(exc, IntegrationError):
        return 'blow_up'
    if isinstance(exc, LatticeMismatchError):
        return 'lattice'
    if isinstance(exc, ValueError):
        return 'invalid_input'
    return 'processing'


class EnsembleProcessor:
    """原子级并发积分器"""

    def __init__(self, config: EnsembleConfig = None):
        self.config = config or EnsembleConfig()
        self.completed = 0
        self.failed = 0

    async def integrate_single_atom(self, index: int, u0: VelocityField, task: AtomTask,
                                    semaphore: asyncio.Semaphore, executor: ThreadPoolExecutor) -> Dict[str, Any]:
        """积分单个原子"""
        async with semaphore:
            loop = asyncio.get_running_loop()
            start_time = time.time()
            try:
                trajectory = await loop.run_in_executor(executor, task, u0)
                elapsed = time.time() - start_time
                self.completed += 1
                log_manager.log_atom_integration(index, elapsed, 'success')
                logger.debug(f"原子 #{index} 积分完成 (耗时: {elapsed:.2f}s)")
                return {
                    'trajectory': trajectory,
                    'status': 'success',
                    'processing_time': round(elapsed, 3),
                    '_original_index': index,
                }
            except Exception as e:
                elapsed = time.time() - start_time
                self.failed += 1
                log_manager.log_atom_integration(index, elapsed, 'failed', str(e))
                logger.warning(f"原子 #{index} 积分失败: {e}")
                return {
                    'atom_index': index,
                    'error': str(e),
                    'status': 'failed',
                    'error_type': type(e).__name__,
                    'error_category': _error_category(e),
                    'time': getattr(e, 'time', None),
                    'processing_time': round(elapsed, 3),
                    '_original_index': index,
                }

    async def process_batch(self, initial_states: Sequence[VelocityField], task: AtomTask,
                            progress_callback: Optional[Callable[[int, str], None]] = None,
                            indices: Optional[Sequence[int]] = None) -> List[Dict[str, Any]]:
        """并发积分全部原子，返回顺序与输入顺序一致；indices 是原子在整个测度里的编号"""
        total = len(initial_states)
        indices = list(range(total)) if indices is None else list(indices)
        logger.info(f"开始并发积分 {total} 个原子 (线程 {self.config.max_workers}, 并发 {self.config.max_concurrent})")
        semaphore = asyncio.Semaphore(self.config.max_concurrent)

        with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            tasks = [self.integrate_single_atom(index, u0, task, semaphore, executor)
                     for index, u0 in zip(indices, initial_states)]
            results = await asyncio.gather(*tasks, return_exceptions=True)

        for i, result in enumerate(results):
            if isinstance(result, BaseException):
                logger.error(f"原子 #{indices[i]} 任务异常: {result}")
                results[i] = {
                    'atom_index': indices[i],
                    'error': str(result),
                    'status': 'failed',
                    'error_type': type(result).__name__,
                    'error_category': _error_category(result),
                    '_original_index': indices[i],
                }

        results = sorted(results, key=lambda r: r['_original_index'])
        successful = sum(1 for r in results if r['status'] == 'success')
        logger.info(f"并发积分完成: 成功 {successful}, 失败 {total - successful}, 总计 {total}")
        if progress_callback:
            progress_callback(100, f"积分完成: 成功 {successful}, 失败 {total - successful}")
        return results

    def run_batch(self, initial_states: Sequence[VelocityField], task: AtomTask,
                  progress_callback: Optional[Callable[[int, str], None]] = None,
                  indices: Optional[Sequence[int]] = None) -> List[Dict[str, Any]]:
        """同步入口"""
        return asyncio.run(self.process_batch(initial_states, task, progress_callback, indices))

    def integrate_all(self, initial_states: Sequence[VelocityField], task: AtomTask,
                      progress_callback: Optional[Callable[[int, str], None]] = None,
                      indices: Optional[Sequence[int]] = None) -> List[Trajectory]:
        """
        全部成功时返回轨道列表。否则按第一个失败原子的类别抛出：
        参数问题抛 ValueError（格点不一致抛 LatticeMismatchError），其余抛 IntegrationError
        """
        results = self.run_batch(initial_states, task, progress_callback, indices)
        failures = [r for r in results if r['status'] == 'failed']
        if failures:
            first = failures[0]
            message = f"{len(failures)} 个原子积分失败，首个 (原子 #{first['atom_index']}): {first['error']}"
            if first['error_category'] == 'lattice':
                raise LatticeMismatchError(message)
            if first['error_category'] == 'invalid_input':
                raise ValueError(message)
            raise IntegrationError(f"{len(failures)} 个原子积分失败，首个: {first['error']}",
                                   time=first.get('time'), atom_index=first['atom_index'])
        return [r['trajectory'] for r in results]

    def get_processing_stats(self) -> Dict[str, Any]:
        """获取处理统计信息"""
        return {
            'completed': self.completed,
            'failed': self.failed,
            'max_workers': self.config.max_workers,
            'max_concurrent': self.config.max_concurrent,
        }


# 全局处理器实例
_global_processor = None


def get_global_processor(settings=None) -> EnsembleProcessor:
    """获取全局处理器实例；首次创建时可按配置类取线程数"""
    global _global_processor
    if _global_processor is None:
        cfg = EnsembleConfig() if settings is None else EnsembleConfig(settings.MAX_WORKERS, settings.MAX_CONCURRENT)
        _global_processor = EnsembleProcessor(cfg)
    return _global_processor


def reset_global_processor():
    """重置全局处理器（用于测试）"""
    global _global_processor
    _global_processor = None
