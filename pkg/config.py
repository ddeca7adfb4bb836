# -*- coding: utf-8 -*-
"""
统计解验证工具配置文件
实验参数走 JSON 配置（见 experiment_config.py），这里只放工具级别的设置
"""

import os


class Config:
    """基础配置"""
    # 版本
    CODE_VERSION = '1.0.0'

    # 日志配置（只有日志允许用环境变量覆盖）
    LOG_DIR = os.environ.get('VF_LOG_DIR') or 'log'
    LOG_LEVEL = os.environ.get('VF_LOG_LEVEL') or 'INFO'
    LOG_FILE = 'vf_statsol.log'

    # 并发配置
    MAX_WORKERS = 4          # 线程池大小
    MAX_CONCURRENT = 8       # 同时在飞的原子积分任务

    # 数值容差
    DIVFREE_TOL = 1e-13      # max|κ·c| ≤ DIVFREE_TOL·max|c|
    PASTE_RTOL = 1e-10       # 拼接点相对误差
    SNAP_RTOL = 1e-9         # 时间查询吸附到节点: |t-node| ≤ SNAP_RTOL·dt
    GRID_RTOL = 1e-12        # 网格均匀性
    WEIGHT_SUM_TOL = 1e-12   # Σθ = 1 的不变量
    WEIGHT_RENORM_WINDOW = 1e-9  # 允许重新归一化的窗口
    LOCALIZATION_RTOL = 1e-9
    BALL_RTOL = 1e-6
    DEFAULT_TOL = 1e-6       # 没有加密标定时不等式的容差
    TOL_SAFETY = 10.0        # Richardson 标定的安全系数
    TOL_FLOOR = 1e-12

    # 强连续性诊断
    CONTINUITY_RTOL = 0.05
    CONTINUITY_ATOL = 1e-10
    DYADIC_LEVELS = 5

    # 报告输出
    REPORT_FLOAT_FORMAT = '%.16e'


class DevelopmentConfig(Config):
    """开发环境配置"""
    LOG_LEVEL = os.environ.get('VF_LOG_LEVEL') or 'DEBUG'


class ProductionConfig(Config):
    """生产环境配置"""
    MAX_WORKERS = 8
    MAX_CONCURRENT = 16


class TestingConfig(Config):
    """测试环境配置"""
    LOG_DIR = 'test_log'
    MAX_WORKERS = 2
    MAX_CONCURRENT = 2


# 配置映射
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': Config
}


def get_config(name=None):
    """按名字（缺省读 VF_ENV）取配置类，未知名字报错"""
    name = name or os.environ.get('VF_ENV') or 'default'
    if name not in config:
        raise ValueError(f"未知的配置环境: {name}")
    return config[name]
