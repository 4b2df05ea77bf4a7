"""CLI 命令模块。

使用 Click 框架实现命令行接口：估计、汇总统计估计、模拟、网格、先验抽样与诊断。
每条命令在结果文件旁写出 manifest；领域错误映射为退出码（数据 3，数值 4）。
"""

import functools
import logging
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.core.ingest import load_individual, load_summary, save_individual, save_summary
from src.error_types import MrebError
from src.estimators import ESTIMATORS, run_estimator
from src.estimators.closed_form import first_stage, ridge_mode_mixture, ridge_mode_single
from src.estimators.diagnostics import diagnostics, realized_eta
from src.estimators.gibbs import ChainTraceRecorder
from src.estimators.mcem import fit_summary
from src.estimators.moments import summarize_individual
from src.reporter import PACKAGE_VERSION, Reporter, estimate_frame, trace_frame
from src.simulation.grid import load_grid_spec, paper_grid, results_frame, run_grid
from src.simulation.simulator import (
    SimulationScenario,
    load_truth,
    sample_mixture_prior,
    save_truth,
    simulate,
)
from src.utils.config import Config, get_config, load_config

logger = logging.getLogger(__name__)


def _fail(message: str, code: int) -> None:
    click.echo(f"✗ 错误: {message}", err=True)
    raise click.exceptions.Exit(code)


def handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """把领域异常转换成一行诊断与对应退出码。"""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except MrebError as exc:
            logger.debug("cli.failed error_type=%s", exc.error_type.value, exc_info=True)
            _fail(str(exc), exc.exit_code)
        except ValidationError as exc:
            raise click.UsageError(f"invalid parameter: {exc.errors()[0].get('msg', exc)}") from exc
        except FileNotFoundError as exc:
            raise click.UsageError(str(exc)) from exc

    return wrapper


def estimation_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """估计类命令共享的配置覆盖选项。"""
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML 配置文件"),
        click.option("--seed", type=int, default=None, help="随机种子"),
        click.option("--mc-samples", type=int, default=None, help="每个 E 步保留的样本数"),
        click.option("--burn-in", type=int, default=None, help="每个 E 步丢弃的扫描数"),
        click.option("--max-iters", type=int, default=None, help="最大 EM 迭代次数"),
        click.option("--tol", type=float, default=None, help="相对变化收敛阈值"),
        click.option("--fixed-sigma2-eta", type=float, default=None, help="固定 σ²_η，不再抽样"),
        click.option("--nu0", type=float, default=None, help="spike 方差比"),
        click.option("--nu1", type=float, default=None, help="τ⁻² 先验形状"),
        click.option("--nu2", type=float, default=None, help="τ⁻² 先验速率"),
        click.option("--nu3", type=float, default=None, help="σ⁻²_η 先验形状"),
        click.option("--nu4", type=float, default=None, help="σ⁻²_η 先验速率"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_config(config_path: str | None, **overrides: Any) -> Config:
    """加载配置并合并命令行覆盖值。"""
    base = load_config(config_path) if config_path else get_config()
    prior_keys = ("nu0", "nu1", "nu2", "nu3", "nu4")
    mcem_keys = ("seed", "mc_samples", "burn_in", "max_iters", "tol", "fixed_sigma2_eta")
    grid_keys = ("replicates", "workers")
    return base.with_overrides(
        prior={k: overrides.get(k) for k in prior_keys},
        mcem={k: overrides.get(k) for k in mcem_keys},
        grid={k: overrides.get(k) for k in grid_keys},
    )


def _argv() -> list[str]:
    """由当前 click 上下文重建的规范化参数列表（子命令加已设置的选项）。

    只依赖解析后的参数，不读 sys.argv，以程序方式调用时清单同样准确。
    """
    ctx = click.get_current_context()
    args = ctx.command_path.split()[1:]
    options = {param.name: param for param in ctx.command.params if isinstance(param, click.Option)}
    for name in sorted(ctx.params):
        value = ctx.params[name]
        option = options.get(name)
        if option is None or value is None:
            continue
        flag = option.opts[0]
        if isinstance(value, bool):
            if value:
                args.append(flag)
            elif option.secondary_opts:
                args.append(option.secondary_opts[0])
        elif isinstance(value, (tuple, list)):
            for item in value:
                args.extend([flag, str(item)])
        else:
            args.extend([flag, str(value)])
    return args


@click.group()
@click.version_option(version=PACKAGE_VERSION)
@click.option("-v", "--verbose", is_flag=True, help="输出调试日志")
@click.option("-q", "--quiet", is_flag=True, help="只输出警告和错误")
def cli(verbose: bool, quiet: bool) -> None:
    """MR-EB - 含无效工具变量的孟德尔随机化估计工具。

    提供 TSLS、单高斯经验贝叶斯与 spike-and-slab MR-EB 估计及模拟实验。
    """
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.getLogger("src").setLevel(level)


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="个体水平 CSV（z1..zJ,d,y）")
@click.option("--estimator", type=click.Choice(ESTIMATORS), default="mr-eb", show_default=True, help="估计量")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="结果 CSV 路径")
@click.option("--trace-out", type=click.Path(dir_okay=False), default=None, help="Gibbs 链轨迹 CSV")
@click.option("--em-trace-out", type=click.Path(dir_okay=False), default=None, help="EM 迭代轨迹 CSV")
@estimation_options
@handle_errors
def estimate(
    input_path: str,
    estimator: str,
    output: str | None,
    trace_out: str | None,
    em_trace_out: str | None,
    config_path: str | None,
    **overrides: Any,
) -> None:
    """对个体水平数据估计因果效应 β。

    示例:
        python main.py estimate --input data.csv --estimator mr-eb --seed 7
    """
    config = resolve_config(config_path, **overrides)
    data = load_individual(input_path)
    recorder = ChainTraceRecorder() if trace_out else None
    click.echo(f"🔬 估计 {estimator}: n={data.n}, J={data.J}", err=True)
    result = run_estimator(estimator, data, config.prior, config.mcem, recorder)

    reporter = Reporter(config=config)
    out = reporter.save_frame(estimate_frame([result]), reporter.resolve(output, "estimate.csv"))
    if recorder is not None and trace_out:
        recorder.write(trace_out)
    if em_trace_out:
        reporter.save_frame(trace_frame(result), em_trace_out)
    reporter.save_manifest(out, "estimate", _argv(), config, seed=config.mcem.seed, inputs=[input_path])
    status = "已收敛" if result.converged else "未收敛"
    click.echo(f"✓ β̂ = {result.beta_hat:.6g}（{status}，{result.iters} 轮）→ {out}", err=True)


@cli.command(name="estimate-summary")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="汇总统计 CSV（gamma2,omega,sigma2_omega）")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="结果 CSV 路径")
@click.option("--trace-out", type=click.Path(dir_okay=False), default=None, help="Gibbs 链轨迹 CSV")
@click.option("--em-trace-out", type=click.Path(dir_okay=False), default=None, help="EM 迭代轨迹 CSV")
@estimation_options
@handle_errors
def estimate_summary(
    input_path: str,
    output: str | None,
    trace_out: str | None,
    em_trace_out: str | None,
    config_path: str | None,
    **overrides: Any,
) -> None:
    """用汇总统计运行 MR-EB。"""
    config = resolve_config(config_path, **overrides)
    summary = load_summary(input_path)
    recorder = ChainTraceRecorder() if trace_out else None
    click.echo(f"🔬 汇总统计 MR-EB: J={summary.J}", err=True)
    result = fit_summary(summary, config.prior, config.mcem, recorder)

    reporter = Reporter(config=config)
    out = reporter.save_frame(estimate_frame([result]), reporter.resolve(output, "estimate_summary.csv"))
    if recorder is not None and trace_out:
        recorder.write(trace_out)
    if em_trace_out:
        reporter.save_frame(trace_frame(result), em_trace_out)
    reporter.save_manifest(out, "estimate-summary", _argv(), config, seed=config.mcem.seed, inputs=[input_path])
    click.echo(f"✓ β̂ = {result.beta_hat:.6g} → {out}", err=True)


@cli.command(name="simulate")
@click.option("--n", "n", type=int, default=1000, show_default=True, help="样本量")
@click.option("--J", "J", type=int, default=30, show_default=True, help="工具变量数")
@click.option("--beta", type=float, default=0.2, show_default=True, help="真实因果效应")
@click.option("--mu-alpha", type=float, default=0.2, show_default=True, help="多效性均值")
@click.option("--p0", type=float, default=0.5, show_default=True, help="无效工具变量比例")
@click.option("--inside/--no-inside", default=True, show_default=True, help="InSIDE 是否成立")
@click.option("--seed", type=int, default=0, show_default=True, help="随机种子")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="个体数据 CSV 路径")
@click.option("--truth-out", type=click.Path(dir_okay=False), default=None, help="真值 CSV")
@click.option("--summary-out", type=click.Path(dir_okay=False), default=None, help="汇总统计 CSV")
@handle_errors
def simulate_cmd(
    n: int,
    J: int,
    beta: float,
    mu_alpha: float,
    p0: float,
    inside: bool,
    seed: int,
    output: str | None,
    truth_out: str | None,
    summary_out: str | None,
) -> None:
    """按合成实验协议生成一份数据集。"""
    config = get_config()
    scenario = SimulationScenario(n=n, J=J, beta=beta, mu_alpha=mu_alpha, p0=p0, inside_ok=inside, seed=seed)
    data, truth = simulate(scenario)

    reporter = Reporter(config=config)
    out = save_individual(data, reporter.resolve(output, "simulated.csv"))
    if truth_out:
        save_truth(truth, truth_out)
    if summary_out:
        save_summary(summarize_individual(data), summary_out)
    reporter.save_manifest(
        out, "simulate", _argv(), config, seed=seed, extra={"scenario": scenario.model_dump(mode="json")}
    )
    click.echo(f"✓ 已生成 n={n}, J={J}, 无效工具变量 {int(truth.xi.sum())} 个 → {out}", err=True)


@cli.command(name="grid")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML 网格规格")
@click.option("--preset", type=click.Choice(["paper"]), default=None, help="内置完整网格")
@click.option("--replicates", type=int, default=None, help="每个场景的重复次数")
@click.option("--workers", type=int, default=None, help="线程数（默认逻辑核数）")
@click.option("--estimator", "estimators", multiple=True, type=click.Choice(ESTIMATORS),
              help="估计量（可多次指定，默认全部）")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="MSE 表 CSV 路径")
@estimation_options
@handle_errors
def grid_cmd(
    spec_path: str | None,
    preset: str | None,
    replicates: int | None,
    workers: int | None,
    estimators: tuple[str, ...],
    output: str | None,
    config_path: str | None,
    **overrides: Any,
) -> None:
    """运行模拟网格并输出每个场景 × 估计量的 MSE。"""
    if (spec_path is None) == (preset is None):
        raise click.UsageError("exactly one of --spec or --preset is required")
    config = resolve_config(config_path, replicates=replicates, workers=workers, **overrides)

    inputs: list[str] = []
    if spec_path:
        spec = load_grid_spec(spec_path)
        scenarios = spec.scenarios
        inputs.append(spec_path)
        spec_replicates, spec_estimators = spec.replicates, spec.estimators
    else:
        scenarios = paper_grid(seed=config.mcem.seed)
        spec_replicates, spec_estimators = None, None

    n_replicates = replicates or spec_replicates or config.grid.replicates
    chosen = list(estimators or spec_estimators or ESTIMATORS)
    click.echo(f"🧪 网格: {len(scenarios)} 个场景 × {n_replicates} 次重复 × {len(chosen)} 个估计量", err=True)
    results = run_grid(scenarios, n_replicates, chosen, config.prior, config.mcem, workers=config.grid.workers)

    reporter = Reporter(config=config)
    out = reporter.save_frame(results_frame(results), reporter.resolve(output, "grid.csv"))
    reporter.save_manifest(
        out, "grid", _argv(), config, seed=config.mcem.seed, inputs=inputs,
        extra={"replicates": n_replicates, "estimators": chosen},
    )
    failed = sum(cell.failed_replicates for cell in results)
    click.echo(f"✓ 网格完成（失败重复 {failed} 次）→ {out}", err=True)


@cli.command(name="prior-sample")
@click.option("--p0", type=float, required=True, help="slab 成分概率")
@click.option("--tau2", type=float, required=True, help="slab 方差 τ²")
@click.option("--nu0", type=float, required=True, help="spike 方差比 ν₀")
@click.option("--mu-alpha", type=float, required=True, help="slab 均值 μ_α")
@click.option("--count", type=int, default=10000, show_default=True, help="抽样个数")
@click.option("--seed", type=int, default=0, show_default=True, help="随机种子")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="抽样 CSV 路径")
@handle_errors
def prior_sample(
    p0: float, tau2: float, nu0: float, mu_alpha: float, count: int, seed: int, output: str | None
) -> None:
    """从 spike-and-slab 先验抽样，输出供外部画密度图。"""
    try:
        draws = sample_mixture_prior(mu_alpha, tau2, nu0, p0, count, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    config = get_config()
    reporter = Reporter(config=config)
    out = reporter.save_frame(pd.DataFrame({"alpha": draws}), reporter.resolve(output, "prior_sample.csv"))
    reporter.save_manifest(
        out, "prior-sample", _argv(), config, seed=seed,
        extra={"p0": p0, "tau2": tau2, "nu0": nu0, "mu_alpha": mu_alpha, "count": count},
    )
    click.echo(f"✓ {count} 个先验抽样 → {out}", err=True)


def _parse_xi(raw: str | None, J: int) -> np.ndarray | None:
    if raw is None:
        return None
    try:
        values = [int(token) for token in raw.split(",") if token.strip()]
    except ValueError as exc:
        raise click.UsageError(f"--xi must be a comma-separated list of 0/1, got {raw!r}") from exc
    if len(values) != J or any(v not in (0, 1) for v in values):
        raise click.UsageError(f"--xi must contain exactly {J} entries of 0 or 1")
    return np.asarray(values, dtype=float)


@cli.command(name="diagnose")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="个体水平 CSV")
@click.option("--tau2", type=float, required=True, help="τ²")
@click.option("--sigma2-eta", type=float, required=True, help="σ²_η")
@click.option("--mode", type=click.Choice(["single", "mixture"]), default="single", show_default=True)
@click.option("--xi", "xi_raw", type=str, default=None, help="混合模式的 ξ，如 1,0,1")
@click.option("--mu-alpha", type=float, default=0.0, show_default=True, help="μ_α")
@click.option("--nu0", type=float, default=None, help="spike 方差比（默认取配置）")
@click.option("--truth", "truth_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="真值 CSV，给出时计算误差上界")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML 配置文件")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="诊断 CSV 路径")
@handle_errors
def diagnose(
    input_path: str,
    tau2: float,
    sigma2_eta: float,
    mode: str,
    xi_raw: str | None,
    mu_alpha: float,
    nu0: float | None,
    truth_path: str | None,
    config_path: str | None,
    output: str | None,
) -> None:
    """计算 c*/c** 与（给出真值时）β̂ 的误差上界。"""
    if not tau2 > 0 or not sigma2_eta > 0:
        raise click.UsageError("--tau2 and --sigma2-eta must be positive")
    config = resolve_config(config_path, nu0=nu0)
    data = load_individual(input_path)
    fit = first_stage(data)
    xi = _parse_xi(xi_raw, data.J)
    if mode == "mixture" and xi is None:
        raise click.UsageError("--mode mixture requires --xi")

    inputs = [input_path]
    alpha_true = eta_hat = None
    truth = None
    if truth_path:
        truth = load_truth(truth_path)
        if truth.alpha.shape[0] != data.J:
            raise click.UsageError(f"truth has {truth.alpha.shape[0]} variants, data has {data.J}")
        alpha_true = truth.alpha
        eta_hat = realized_eta(data, fit, truth.beta, truth.alpha)
        inputs.append(truth_path)

    report = diagnostics(
        data, fit, tau2, sigma2_eta, mode=mode, xi=xi, nu0=config.prior.nu0,
        alpha_true=alpha_true, mu_alpha=mu_alpha, eta_hat=eta_hat,
    )
    if mode == "mixture":
        beta_hat, _ = ridge_mode_mixture(data, fit, mu_alpha, xi, tau2, sigma2_eta, config.prior.nu0)
    else:
        beta_hat, _ = ridge_mode_single(data, fit, mu_alpha, tau2, sigma2_eta)

    row: dict[str, Any] = {"mode": mode, "beta_hat": beta_hat, **report.as_row()}
    row["abs_error"] = abs(beta_hat - truth.beta) if truth is not None else None

    reporter = Reporter(config=config)
    out = reporter.save_frame(pd.DataFrame([row]), reporter.resolve(output, "diagnose.csv"))
    reporter.save_manifest(out, "diagnose", _argv(), config, inputs=inputs)
    constant = report.constant
    click.echo(f"✓ {'c**' if mode == 'mixture' else 'c*'} = {constant:.6g} → {out}", err=True)
