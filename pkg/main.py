#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Krylov 偏最小二乘病态回归审计工具
模拟对比实验、CSV 数据拟合与模型选择、扰动界审计、广义线性模型 IRPLS
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from config import Config
from plsaudit import __version__
from plsaudit.data_io import (
    center_datasets,
    check_compatible,
    parse_dof_range,
    parse_synthetic,
    parse_vector,
    read_dataset,
    read_matrix,
    write_dataset,
)
from plsaudit.errors import DataError, NumericalError, PlsAuditError, UsageError
from plsaudit.estimators import METHODS, evaluate, fit_method, sample_covariances
from plsaudit.glm_irpls import FAMILIES, irpls_fit
from plsaudit.krylov_engine import krylov_dimension
from plsaudit.linalg_core import standardized_condition_number
from plsaudit.model_selection import select_by_conditioning
from plsaudit.perturbation_lab import (
    audit_cgne_stop,
    audit_krylov_basis_bound,
    audit_ls_bound,
    audit_pls_bound,
    audit_population_bias,
    ratio_curve,
)
from plsaudit.report_writer import ReportWriter, RunManifest
from plsaudit.simulation import PRESETS, SimulationConfig, generate_dataset, preset_config, run_experiment

logger = logging.getLogger(__name__)

THEOREMS = ('ls', 'pls', 'krylov', 'cgne')
FIT_COLUMNS = (
    'method', 'dof', 'tuning', 'kappa_reduced', 'in_sample_risk',
    'rel_approx_error', 'rel_prediction_error', 'correlation', 'status', 'error',
)
SIMULATION_FLAGS = ('n', 'p', 'd', 'm', 'sigma0', 'sigma_yperp_max', 'rank_yperp', 'reps', 'seed')


def setup_logging() -> None:
    """配置日志: 文件 + 标准错误 (标准输出留给 CSV)"""
    Config.validate()
    logging.basicConfig(
        level=Config.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(Config.LOG_FILE, encoding='utf-8'),
            logging.StreamHandler(sys.stderr)
        ]
    )


class CliParser(argparse.ArgumentParser):
    """用法错误抛出 UsageError 而不是直接退出"""

    def error(self, message):
        raise UsageError(message)


def _split_methods(text: str) -> List[str]:
    methods = [m.strip() for m in text.split(',') if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise UsageError(f"--methods 必须是 {','.join(METHODS)} 的非空子集, 未知: {unknown}")
    return methods


def build_parser() -> CliParser:
    parser = CliParser(prog='plsaudit', description='Krylov PLS 病态回归审计工具')
    parser.add_argument('--version', action='version', version=f"plsaudit {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    sim = sub.add_parser('simulate', help='潜因子模型蒙特卡洛对比实验')
    sim.add_argument('--preset', choices=sorted(PRESETS), help='已发表实验配置, 其余参数覆盖预设')
    sim.add_argument('--n', type=int)
    sim.add_argument('--p', type=int)
    sim.add_argument('--d', type=int)
    sim.add_argument('--m', type=int)
    sim.add_argument('--sigma0', type=float)
    sim.add_argument('--sigma-yperp', dest='sigma_yperp_max', type=float)
    sim.add_argument('--rank-yperp', type=int)
    sim.add_argument('--sparse', action='store_true')
    sim.add_argument('--reps', type=int)
    sim.add_argument('--seed', type=int)
    sim.add_argument('--methods', default='pls,pcr,lasso')
    sim.add_argument('--dof', type=int)
    sim.add_argument('--population', action='store_true', help='用总体协方差拟合')
    sim.add_argument('--noise-rotation', action='store_true')
    sim.add_argument('--workers', type=int)
    sim.add_argument('--dataset-out', help='把第 0 次重复的数据集写成 CSV')
    sim.add_argument('--audit-bias', action='store_true', help='对第 0 次重复审计总体 PLS 偏差界')
    sim.add_argument('--out')

    fit = sub.add_parser('fit', help='在 CSV 数据上拟合并按条件数选择模型')
    fit.add_argument('--train', required=True)
    fit.add_argument('--test')
    fit.add_argument('--method', choices=METHODS, default='pls')
    fit.add_argument('--dof-range', default=None, help='a..b, a-b 或 a:b')
    fit.add_argument('--kappa0', type=float)
    fit.add_argument('--center', action='store_true')
    fit.add_argument('--out')

    pert = sub.add_parser('perturb', help='扰动界审计')
    source = pert.add_mutually_exclusive_group(required=True)
    source.add_argument('--matrix', help='无表头方阵 CSV')
    source.add_argument('--synthetic', help='diag:v1,v2,... 或 random:p[:rank[:seed]]')
    pert.add_argument('--b', help='逗号分隔向量, 默认全 1')
    pert.add_argument('--m', type=int, help='Krylov 维度, 默认为 Krylov 空间维度')
    pert.add_argument('--theorem', choices=THEOREMS, required=True)
    pert.add_argument('--epsilon', type=float, required=True)
    pert.add_argument('--trials', type=int, default=100)
    pert.add_argument('--seed', type=int, default=0)
    pert.add_argument('--eps-grid', help='逗号分隔的 ε 网格, 额外输出 PLS 比值曲线')
    pert.add_argument('--workers', type=int)
    pert.add_argument('--out')

    irp = sub.add_parser('irpls', help='广义线性模型的迭代重加权 PLS')
    irp.add_argument('--data', required=True)
    irp.add_argument('--family', choices=sorted(FAMILIES), required=True)
    irp.add_argument('--dof', type=int, required=True)
    irp.add_argument('--max-iter', type=int, default=Config.IRPLS_MAX_ITER)
    irp.add_argument('--eps', type=float, default=Config.IRPLS_EPS)
    irp.add_argument('--out')
    return parser


class PlsAuditTool:
    """命令行主类"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.writer = ReportWriter(args.out)
        self.manifest = RunManifest(
            command=args.command,
            config={k: v for k, v in vars(args).items() if k not in ('command', 'out')},
            seed=getattr(args, 'seed', None),
        )

    def run(self) -> int:
        handler = {
            'simulate': self.cmd_simulate,
            'fit': self.cmd_fit,
            'perturb': self.cmd_perturb,
            'irpls': self.cmd_irpls,
        }[self.args.command]
        handler()
        self._finish()
        return 0

    def _finish(self) -> None:
        if self.writer.to_stdout:
            return
        self.writer.write_manifest(self.manifest)

    def _emit(self, table: pd.DataFrame, summary: dict, title: str, markdown: pd.DataFrame,
              tags: List[str]) -> None:
        self.manifest.add_output(self.writer.write_table(table))
        self.manifest.add_output(self.writer.write_summary(summary))
        self.manifest.add_output(self.writer.generate_summary_markdown(title, markdown, tags=tags))

    def _simulation_config(self) -> SimulationConfig:
        args = self.args
        given = {k: getattr(args, k) for k in SIMULATION_FLAGS if getattr(args, k) is not None}
        for flag in ('sparse', 'population', 'noise_rotation'):
            if getattr(args, flag):
                given[flag] = True
        if args.preset:
            return preset_config(args.preset, **given)
        missing = [f"--{k}" for k in ('n', 'p', 'd', 'm') if k not in given]
        if missing:
            raise UsageError(f"未指定 --preset 时必须给出 {' '.join(missing)}")
        return SimulationConfig(**given)

    def cmd_simulate(self) -> None:
        """潜因子模型模拟: 每个 (重复, 方法) 一行"""
        args = self.args
        cfg = self._simulation_config()
        methods = _split_methods(args.methods)
        self.manifest.config['simulation'] = cfg.to_dict()
        self.manifest.seed = cfg.seed

        result = run_experiment(cfg, methods, args.dof, args.workers)

        summary = {
            'config': cfg.to_dict(),
            'methods': methods,
            'dof': cfg.m if args.dof is None else args.dof,
            'summary': result.summary.to_dict(orient='records'),
        }
        if args.dataset_out or args.audit_bias:
            model = generate_dataset(cfg, 0)
            if args.dataset_out:
                self.manifest.add_output(write_dataset(args.dataset_out, model.X, model.y))
                logger.info(f"第 0 次重复的数据集已写出: {args.dataset_out}")
            if args.audit_bias:
                report = audit_population_bias(model, seed=cfg.seed, max_workers=args.workers)
                summary['population_bias'] = {**report.to_row(), 'details': report.details}

        self._emit(result.rows, summary, '模拟实验汇总', result.summary, ['simulate', *methods])

    def _fit_one(self, cov, train, test, dof: int) -> dict:
        method = self.args.method
        row = {'method': method, 'dof': dof, 'status': 'ok', 'error': ''}
        try:
            report = fit_method(method, cov, dof, train.x, train.y)
            report = evaluate(report, train.x, train.y, split='train')
            if test is not None:
                report = evaluate(report, test.x, test.y, split='test')
        except (NumericalError, DataError) as e:
            logger.warning(f"{method} 在自由度 {dof} 处拟合失败: {e}")
            row.update(status='failed', error=str(e))
            return row
        row.update(report.summary())
        row['dof'] = dof if method == 'lasso' else report.dof
        row['_report'] = report
        return row

    def cmd_fit(self) -> None:
        """按自由度范围拟合, 给定 κ₀ 时做条件数选择"""
        args = self.args
        train = read_dataset(args.train)
        self.manifest.add_input(args.train)
        test = None
        if args.test:
            test = read_dataset(args.test)
            self.manifest.add_input(args.test)
            check_compatible(train, test)

        centering = None
        if args.center:
            train, test, centering = center_datasets(train, test)
            logger.info("已用训练集均值中心化特征与响应")

        try:
            kappa_std = standardized_condition_number(train.x)
            logger.info(f"训练集标准化条件数 κ(X) = {kappa_std:.4g}")
        except PlsAuditError as e:
            kappa_std = float('nan')
            logger.warning(f"无法计算标准化条件数: {e}")

        cov = sample_covariances(train.x, train.y)
        if args.method == 'ls':
            dofs = [train.p]
        elif args.dof_range:
            dofs = parse_dof_range(args.dof_range)
        else:
            dofs = range(1, min(train.p, 15) + 1)

        rows = [self._fit_one(cov, train, test, dof) for dof in dofs]
        reports = [row.pop('_report') for row in rows if '_report' in row]
        table = pd.DataFrame(rows).reindex(columns=list(FIT_COLUMNS))
        if not reports:
            raise NumericalError(f"{args.method} 在所有自由度上拟合失败")

        summary = {
            'method': args.method,
            'n_train': train.n,
            'n_test': None if test is None else test.n,
            'standardized_condition_number': kappa_std,
            'centering': centering,
            'selection': None,
        }
        if args.kappa0 is not None:
            outcome = select_by_conditioning(reports, args.kappa0)
            chosen = outcome.chosen_fit
            summary['selection'] = {
                **outcome.to_dict(),
                'chosen': chosen.summary(),
                'beta': chosen.beta,
            }
            logger.info(f"κ₀ = {args.kappa0:g} 下选择自由度 {outcome.chosen_dof}")

        self._emit(table, summary, f"{args.method} 拟合结果", table.drop(columns=['error']),
                   ['fit', args.method])

    def cmd_perturb(self) -> None:
        """扰动界审计: 每次试验 (及每个量) 一行"""
        args = self.args
        if args.matrix:
            a = read_matrix(args.matrix)
            self.manifest.add_input(args.matrix)
        else:
            a = parse_synthetic(args.synthetic)
        b = np.ones(a.dim) if args.b is None else parse_vector(args.b)
        if b.shape[0] != a.dim:
            raise DataError(f"--b 长度 {b.shape[0]} 与矩阵维度 {a.dim} 不一致")
        if args.trials < 1:
            raise UsageError(f"--trials 必须 >= 1, 实际为 {args.trials}")
        if args.epsilon < 0:
            raise UsageError(f"--epsilon 必须非负, 实际为 {args.epsilon}")
        m = krylov_dimension(a, b) if args.m is None else args.m

        common = dict(epsilon=args.epsilon, trials=args.trials, seed=args.seed, max_workers=args.workers)
        if args.theorem == 'ls':
            reports = audit_ls_bound(a, b, **common)
        elif args.theorem == 'pls':
            reports = audit_pls_bound(a, b, m, **common)
        elif args.theorem == 'krylov':
            reports = audit_krylov_basis_bound(a, b, m, **common)
        else:
            reports = audit_cgne_stop(a, b, **common)

        table = pd.DataFrame([r.to_row() for r in reports])
        judged = table[table['verdict'] != '']
        rate = float((judged['verdict'] == 'satisfied').mean()) if len(judged) else None
        logger.info(f"可判定试验 {len(judged)} / {len(table)}, 满足率 {rate}")

        summary = {
            'theorem': args.theorem,
            'dim': a.dim,
            'm': m,
            'epsilon': args.epsilon,
            'trials': args.trials,
            'judged': int(len(judged)),
            'satisfaction_rate': rate,
            'details': [r.details for r in reports],
        }
        if args.eps_grid:
            curve = ratio_curve(a, b, m, parse_vector(args.eps_grid), args.trials, args.seed, args.workers)
            summary['ratio_curve'] = curve.to_dict(orient='records')

        counts = table.groupby(['quantity', 'verdict'], dropna=False).size().reset_index(name='count')
        self._emit(table, summary, f"{args.theorem} 扰动审计", counts, ['perturb', args.theorem])

    def cmd_irpls(self) -> None:
        """IRPLS 迭代轨迹: 每次迭代一行"""
        args = self.args
        data = read_dataset(args.data)
        self.manifest.add_input(args.data)
        trace = irpls_fit(data.x, data.y, args.family, args.dof, args.max_iter, args.eps)
        frame = trace.to_frame()
        summary = {
            'family': trace.family,
            's': trace.s,
            'iterations': trace.iterations,
            'stopped_by': trace.stopped_by,
            'final_deviance': trace.final_deviance,
            'beta': trace.beta,
        }
        self._emit(frame, summary, f"IRPLS ({trace.family})", frame, ['irpls', trace.family])


def run_cli(argv: Optional[List[str]] = None) -> int:
    """
    解析参数并执行子命令

    Returns:
        退出码: 0 成功, 1 用法错误, 2 数据错误, 3 数值失败
    """
    try:
        args = build_parser().parse_args(argv)
        return PlsAuditTool(args).run()
    except KeyboardInterrupt:
        logger.info("用户中断任务")
        return 0
    except PlsAuditError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        logger.error(f"数值计算失败: {e}")
        return NumericalError.exit_code
    except OSError as e:
        logger.error(f"文件读写失败: {e}")
        return DataError.exit_code


def main():
    """主函数"""
    try:
        setup_logging()
    except ValueError as e:
        sys.stderr.write(f"配置错误: {e}\n")
        sys.exit(1)
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
