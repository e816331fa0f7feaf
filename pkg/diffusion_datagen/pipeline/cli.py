"""
Diffusion Datagen CLI

One subcommand per pipeline stage plus ``reproduce``, which chains them.
Pipeline errors map to their exit codes; everything is logged to stderr.
"""

import functools
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.logging import RichHandler

from .. import __version__
from ..core.config import load_config
from ..core.errors import DatagenError
from .stages import SUITE_OVERRIDES, PipelineRunner

logger = logging.getLogger("diffusion_datagen.cli")

console = Console(stderr=True)


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[RichHandler(console=console, show_time=False, show_path=False)],
        force=True,
    )


def handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """Turn pipeline errors into a logged message and the family's exit code."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except DatagenError as exc:
            logger.error(f"{type(exc).__name__}: {exc}")
            sys.exit(exc.exit_code)

    return wrapper


def _runner(ctx: click.Context, out_dir: Path | None = None, extra_overrides: tuple[str, ...] = ()) -> PipelineRunner:
    opts = ctx.obj
    overrides = [*extra_overrides, *opts["overrides"]]
    if opts["seed"] is not None:
        overrides.append(f"runtime.seed={opts['seed']}")
    config = load_config(opts["config"], overrides)
    return PipelineRunner(config, out_dir or opts["out_dir"])


def _split(values: tuple[str, ...]) -> list[str] | None:
    names = [name.strip() for value in values for name in value.split(",") if name.strip()]
    return names or None


tasks_option = click.option("--tasks", "-t", multiple=True, help="Task names (repeatable or comma separated)")
checkpoint_option = click.option(
    "--checkpoint", "-c", "checkpoints", multiple=True, required=True,
    type=click.Path(path_type=Path), help="Checkpoint file (repeatable)",
)


@click.group()
@click.version_option(version=__version__)
@click.option("--config", type=click.Path(path_type=Path), default=None, help="YAML config or run manifest")
@click.option("--seed", type=int, default=None, help="Run seed (overrides runtime.seed)")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("runs"), show_default=True)
@click.option("--override", "-o", "overrides", multiple=True, help="section.key=value (repeatable)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def cli(ctx: click.Context, config: Path | None, seed: int | None, out_dir: Path, overrides: tuple[str, ...], verbose: bool) -> None:
    """Diffusion Datagen - diffusion-RL data generation and distillation."""
    setup_logging(verbose)
    ctx.obj = {"config": config, "seed": seed, "out_dir": out_dir, "overrides": list(overrides)}


@cli.command("demo-gen")
@tasks_option
@click.pass_context
@handle_errors
def demo_gen(ctx: click.Context, tasks: tuple[str, ...]) -> None:
    """Generate the scripted 'human' demonstration corpus."""
    path = _runner(ctx).demo_gen(_split(tasks))
    click.echo(str(path))


@cli.command("train-bc")
@click.option("--demos", required=True, type=click.Path(path_type=Path), help="Demonstration dataset")
@tasks_option
@click.pass_context
@handle_errors
def train_bc(ctx: click.Context, demos: Path, tasks: tuple[str, ...]) -> None:
    """Warm-start per-task diffusion and Gaussian policies by behaviour cloning."""
    for role, path in _runner(ctx).train_bc(demos, _split(tasks)).items():
        click.echo(f"{role}\t{path}")


@cli.command("train-rl")
@click.option("--checkpoint", "-c", "checkpoints", multiple=True, type=click.Path(path_type=Path), help="BC checkpoint (repeatable)")
@tasks_option
@click.option("--allow-weak-start", is_flag=True, help="Continue when the warm start is below the success floor")
@click.option("--from-scratch", is_flag=True, help="Skip the warm start entirely")
@click.pass_context
@handle_errors
def train_rl(ctx: click.Context, checkpoints: tuple[Path, ...], tasks: tuple[str, ...], allow_weak_start: bool, from_scratch: bool) -> None:
    """PPO over the denoising steps of each task's diffusion policy."""
    runner = _runner(ctx, extra_overrides=("ppo.from_scratch=true",) if from_scratch else ())
    for role, path in runner.train_rl(list(checkpoints), _split(tasks), allow_weak_start=allow_weak_start).items():
        click.echo(f"{role}\t{path}")


@cli.command("train-rl-gaussian")
@click.option("--checkpoint", "-c", "checkpoints", multiple=True, type=click.Path(path_type=Path), help="Gaussian BC checkpoint (repeatable)")
@tasks_option
@click.option("--allow-weak-start", is_flag=True, help="Continue when the warm start is below the success floor")
@click.option("--from-scratch", is_flag=True, help="Skip the warm start entirely")
@click.pass_context
@handle_errors
def train_rl_gaussian(ctx: click.Context, checkpoints: tuple[Path, ...], tasks: tuple[str, ...], allow_weak_start: bool, from_scratch: bool) -> None:
    """PPO baseline with a unimodal Gaussian policy."""
    runner = _runner(ctx, extra_overrides=("ppo.from_scratch=true",) if from_scratch else ())
    for role, path in runner.train_rl_gaussian(list(checkpoints), _split(tasks), allow_weak_start=allow_weak_start).items():
        click.echo(f"{role}\t{path}")


@cli.command()
@checkpoint_option
@tasks_option
@click.option("--n-per-task", type=int, default=None, help="Successful trajectories per task")
@click.option("--mode", type=click.Choice(["ddim_deterministic", "stochastic"]), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Output dataset file")
@click.pass_context
@handle_errors
def generate(ctx: click.Context, checkpoints: tuple[Path, ...], tasks: tuple[str, ...], n_per_task: int | None, mode: str | None, out: Path | None) -> None:
    """Harvest a trajectory dataset from trained experts."""
    path = _runner(ctx).generate(list(checkpoints), _split(tasks), n_per_task, mode, out)
    click.echo(str(path))


@cli.command()
@click.option("--dataset", "-d", "datasets", multiple=True, required=True, type=click.Path(path_type=Path))
@click.pass_context
@handle_errors
def analyze(ctx: click.Context, datasets: tuple[Path, ...]) -> None:
    """Quality metrics and charts for one or more datasets."""
    for role, path in _runner(ctx).analyze(list(datasets)).items():
        click.echo(f"{role}\t{path}")


@cli.command()
@click.option("--dataset", "-d", "datasets", multiple=True, required=True, type=click.Path(path_type=Path))
@tasks_option
@click.pass_context
@handle_errors
def distill(ctx: click.Context, datasets: tuple[Path, ...], tasks: tuple[str, ...]) -> None:
    """Train one student per dataset under identical hyperparameters."""
    click.echo(str(_runner(ctx).distill(list(datasets), _split(tasks))))


@cli.command()
@click.option("--human", required=True, type=click.Path(path_type=Path), help="Scripted demonstration dataset")
@click.option("--rl", required=True, type=click.Path(path_type=Path), help="Diffusion-RL dataset")
@click.pass_context
@handle_errors
def holdout(ctx: click.Context, human: Path, rl: Path) -> None:
    """Zero-shot success on held-out task variants per data source."""
    click.echo(str(_runner(ctx).holdout(human, rl)))


@cli.command()
@checkpoint_option
@tasks_option
@click.option("--episodes", type=int, default=None, help="Episodes per task")
@click.pass_context
@handle_errors
def evaluate(ctx: click.Context, checkpoints: tuple[Path, ...], tasks: tuple[str, ...], episodes: int | None) -> None:
    """Success rates of saved experts or students."""
    click.echo(str(_runner(ctx).evaluate(list(checkpoints), _split(tasks), episodes)))


@cli.command()
@click.option("--suite", type=click.Choice(sorted(SUITE_OVERRIDES)), default="quick", show_default=True)
@click.pass_context
@handle_errors
def reproduce(ctx: click.Context, suite: str) -> None:
    """Run every stage end to end."""
    results = _runner(ctx, extra_overrides=tuple(SUITE_OVERRIDES[suite])).reproduce(suite)
    for role, path in results.items():
        click.echo(f"{role}\t{path}")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
