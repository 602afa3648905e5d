import json
import logging
import sys
from typing import List, Optional

import click

from xdcpipe.analysis import (
    bubble_stride_demo,
    compare_schedules,
    delay_sweep,
    family_problem,
    load_ppdp_config,
    load_sweep_config,
    pp_vs_dp,
    render_gantt,
    write_sweep_csv,
)
from xdcpipe.analysis.compare import dynamic_memory_budget
from xdcpipe.analysis.ppdp import PPDP_COLUMNS, PPDPConfig
from xdcpipe.analysis.sweep import write_csv
from xdcpipe.core import load_problem, load_schedule, load_timeline, save_schedule, save_timeline
from xdcpipe.core.types import ProblemSpec, SchedulePlan
from xdcpipe.exact import InfeasibleScheduleError, build_model, export_lp, solve_exact
from xdcpipe.greedy import generate_greedy
from xdcpipe.patterns import build_graph
from xdcpipe.settings import app_settings
from xdcpipe.simulator import DeadlockError, simulate, validate_schedule
from xdcpipe.static_schedules import build_static
from xdcpipe.utils import dumps_canonical, parse_multi_columns

SCHEDULES = ["1f1b", "iv1f1b", "zbh1", "zbv", "cross-ud", "cross-ud-sub", "cross-wave"]
_PATTERN_FAMILY = {"ud": "CrossUD", "wave": "CrossWave", "loop": "CrossLoop"}


def _emit(obj) -> None:
    click.echo(dumps_canonical(obj), nl=False)


def _small_instance(spec: ProblemSpec) -> bool:
    solver = app_settings.solver
    return (spec.n_pp <= solver.max_stages and spec.n_mb <= solver.max_microbatches
            and spec.n_chunks <= solver.max_chunks)


def _exact_plan(spec: ProblemSpec, family: str, budget: float, max_nodes: Optional[int],
                gap: float) -> SchedulePlan:
    m_limit = dynamic_memory_budget(spec, family)
    limited = spec if m_limit is None else spec.with_updates(m_limit=m_limit)
    result = solve_exact(build_model(build_graph(limited, 1), limited), budget=budget,
                         max_nodes=max_nodes, gap=gap, workers=app_settings.solver.workers)
    return result.plan


def generate_plan(spec: ProblemSpec, schedule: str, n_sub: Optional[int] = None, budget: Optional[float] = None,
                  max_nodes: Optional[int] = None, gap: Optional[float] = None) -> SchedulePlan:
    """Dispatch a CLI schedule name to the static builders, the greedy engine or the exact solver."""
    budget = budget or app_settings.solver.budget_seconds
    max_nodes = max_nodes or app_settings.solver.max_nodes
    gap = app_settings.solver.gap if gap is None else gap
    if schedule in ("1f1b", "iv1f1b", "zbh1", "zbv"):
        return build_static(spec, schedule)
    if schedule == "cross-ud-sub":
        return generate_greedy(spec, n_sub=n_sub or app_settings.greedy.n_sub)[0]
    if schedule == "cross-ud":
        if spec.pattern != "UD":
            raise ValueError(f"cross-ud needs the UD pattern, problem uses {spec.pattern}")
        if _small_instance(spec):
            return _exact_plan(spec, "CrossUD", budget, max_nodes, gap)
        logging.info("Instance exceeds the exact-solver guideline; using the greedy engine")
        return generate_greedy(spec, n_sub=1)[0]
    if schedule == "cross-wave":
        if spec.pattern != "Wave":
            raise ValueError(f"cross-wave needs the Wave pattern, problem uses {spec.pattern}")
        return _exact_plan(spec, "CrossWave", budget, max_nodes, gap)
    raise ValueError(f"unknown schedule {schedule!r}")


@click.group()
def cli():
    """Schedule, simulate and analyze cross-datacenter pipeline-parallel training."""


@cli.command()
@click.option("--problem", "problem_path", required=True, type=click.Path(dir_okay=False))
@click.option("--schedule", required=True, type=click.Choice(SCHEDULES, case_sensitive=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--nsub", type=click.IntRange(min=1), default=None, help="Sub-blocks per block for cross-ud-sub.")
@click.option("--budget", type=click.FloatRange(min=0, min_open=True), default=None, help="Solver time budget (s).")
@click.option("--max-nodes", type=click.IntRange(min=1), default=None, help="Solver node limit.")
@click.option("--gap", type=click.FloatRange(min=0, max=1, max_open=True), default=None, help="Relative optimality gap.")
def gen(problem_path, schedule, out, nsub, budget, max_nodes, gap):
    """Generate a schedule file."""
    spec = load_problem(problem_path)
    plan = generate_plan(spec, schedule.lower(), nsub, budget, max_nodes, gap)
    save_schedule(plan, out)
    _emit({"family": plan.family, "engine": plan.engine, "out": out})


@cli.command()
@click.option("--problem", "problem_path", required=True, type=click.Path(dir_okay=False))
@click.option("--schedule-file", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def sim(problem_path, schedule_file, out):
    """Simulate a schedule and write its timeline."""
    spec = load_problem(problem_path)
    plan = load_schedule(schedule_file)
    timeline = simulate(build_graph(spec, plan.n_sub), plan, spec)
    save_timeline(timeline, out)
    _emit(timeline.metrics.to_dict())


@cli.command()
@click.option("--problem", "problem_path", required=True, type=click.Path(dir_okay=False))
@click.option("--schedule-file", required=True, type=click.Path(dir_okay=False))
def validate(problem_path, schedule_file):
    """List schedule violations; exit 1 when there are any."""
    spec = load_problem(problem_path)
    plan = load_schedule(schedule_file)
    violations = validate_schedule(build_graph(spec, plan.n_sub), plan, spec)
    _emit([v.to_dict() for v in violations])
    return 1 if violations else 0


@cli.command()
@click.option("--timeline", "timeline_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--problem", "problem_path", default=None, type=click.Path(dir_okay=False))
def gantt(timeline_path, out, problem_path):
    """Render a timeline as an SVG Gantt chart."""
    timeline = load_timeline(timeline_path)
    spec = load_problem(problem_path) if problem_path else None
    render_gantt(timeline, spec, out)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel sweep cells.")
@click.option("--progress/--no-progress", default=False)
def sweep(config_path, out, workers, progress):
    """Delay-sensitivity sweep to CSV."""
    config = load_sweep_config(config_path)
    rows = delay_sweep(config, workers=workers, progress=progress)
    write_sweep_csv(rows, out)


@cli.command()
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--progress/--no-progress", default=False)
def ppdp(config_path, out, progress):
    """Cross-DC pipeline vs data parallelism to CSV."""
    config = load_ppdp_config(config_path) if config_path else PPDPConfig()
    write_csv(pp_vs_dp(config, progress=progress), PPDP_COLUMNS, out)


@cli.command("export-lp")
@click.option("--problem", "problem_path", required=True, type=click.Path(dir_okay=False))
@click.option("--pattern", required=True, type=click.Choice(["UD", "Wave", "Loop"], case_sensitive=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def export_lp_command(problem_path, pattern, out):
    """Write the scheduling model in LP format."""
    spec = family_problem(load_problem(problem_path), _PATTERN_FAMILY[pattern.lower()])
    export_lp(build_model(build_graph(spec, 1), spec), out)


@cli.command()
@click.option("--problem", "problem_path", required=True, type=click.Path(dir_okay=False))
@click.option("--families", default=None, help="Comma or | separated family names.")
@click.option("--max-nodes", type=click.IntRange(min=1), default=None)
def compare(problem_path, families, max_nodes):
    """Simulate every family on the problem's links, best first."""
    spec = load_problem(problem_path)
    kwargs = {"max_nodes": max_nodes or app_settings.solver.max_nodes or 2000}
    if families:
        kwargs["families"] = [f.strip() for f in parse_multi_columns(families) if f.strip()]
    rows = compare_schedules(spec, n_sub=app_settings.greedy.n_sub, **kwargs)
    _emit([r.to_dict() for r in rows])


@cli.command()
@click.option("--problem", "problem_path", required=True, type=click.Path(dir_okay=False))
@click.option("--schedule", default="1f1b", type=click.Choice(["1f1b", "iv1f1b", "zbh1", "zbv"], case_sensitive=False))
@click.option("--latency", "latencies", multiple=True, type=click.FloatRange(min=0), required=True)
@click.option("--out-dir", default=None, type=click.Path(file_okay=False))
def strides(problem_path, schedule, latencies, out_dir):
    """Makespan against boundary latency for a static schedule."""
    report = bubble_stride_demo(load_problem(problem_path), schedule, list(latencies), out_dir)
    _emit(report.to_dict())


def _report(kind: str, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}, sort_keys=True), err=True)


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI: 0 on success, 1 when a schedule fails, 2 on bad usage or input."""
    try:
        rv = cli.main(args=argv, prog_name="xdcpipe", standalone_mode=False)
    except click.UsageError as e:
        _report("UsageError", e.format_message())
        return 2
    except click.ClickException as e:
        _report(type(e).__name__, e.format_message())
        return 2
    except click.Abort:
        _report("Abort", "aborted")
        return 2
    except (InfeasibleScheduleError, DeadlockError) as e:
        _report(type(e).__name__, str(e))
        return 1
    except ValueError as e:
        _report(type(e).__name__, str(e))
        return 2
    except RuntimeError as e:
        logging.exception("Schedule generation failed")
        _report(type(e).__name__, str(e))
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(cli_main())
