# coding: utf-8

import logging
from typing import Any, List, Tuple

import click

from propssl import __version__
from propssl.cli import cmd_report, cmd_sample_hg, cmd_split, cmd_sweep, cmd_train
from propssl.config import parse_config
from propssl.exceptions import PropsslException
from propssl.utils import json_dumps


def print_output(obj: Any):
    if not isinstance(obj, str):
        obj = json_dumps(obj, indent=2, ensure_ascii=False)
    print(obj)


class ExitCodeGroup(click.Group):
    """Turns package exceptions into their exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except PropsslException as exc:
            logging.error("%s: %s", exc.__class__.__name__, exc)
            ctx.exit(exc.exit_code)


@click.group(name="propssl", cls=ExitCodeGroup)
@click.pass_context
@click.version_option(__version__)
@click.option(
    "--loglevel",
    "-l",
    type=click.Choice(["debug", "info", "warning", "error"], case_sensitive=False),
    default="info",
    show_default=True,
)
@click.option("--config", "-c", "config_path", help="key = value file with [sections]")
@click.option(
    "--set",
    "-s",
    "overrides",
    multiple=True,
    help="section.key=value, overrides the config file",
)
@click.option("--out", "-o", help="output directory")
@click.option("--seeds", help="comma separated seeds, e.g. 1,2,3")
def main(
    ctx: click.Context,
    loglevel: str,
    config_path: str,
    overrides: Tuple[str],
    out: str,
    seeds: str,
) -> None:
    """Class-imbalanced semi-supervised learning with a proportion loss."""
    # setup default logging
    loglevel = getattr(logging, loglevel.upper())
    format = "[%(asctime)s %(levelname)7s] %(message)s"
    datefmt = "%Y-%m-%d %H:%M:%S"
    logging.basicConfig(level=loglevel, format=format, datefmt=datefmt)
    # setup color logging
    try:
        import coloredlogs

        coloredlogs.DEFAULT_LOG_FORMAT = format
        coloredlogs.DEFAULT_DATE_FORMAT = datefmt
        coloredlogs.DEFAULT_FIELD_STYLES = {"asctime": {"color": None}}
        coloredlogs.install(level=loglevel)
    except ModuleNotFoundError:
        pass

    ctx.obj = {
        "path": config_path,
        "overrides": overrides,
        "out": out,
        "seeds": seeds,
    }


def _config(options: dict):
    return parse_config(**options)


@main.command("split")
@click.pass_obj
def split(options: dict) -> None:
    """Write labeled/unlabeled/validation/test partitions."""
    print_output(cmd_split(_config(options)))


@main.command("train")
@click.pass_obj
def train(options: dict) -> None:
    """Train every method, cell and seed and aggregate over seeds."""
    print_output(cmd_train(_config(options)))


@main.command("sweep")
@click.pass_obj
def sweep(options: dict) -> None:
    """Select the proportion loss weight on validation accuracy."""
    print_output(cmd_sweep(_config(options)))


@main.command("report")
@click.pass_obj
@click.argument("run_dirs", nargs=-1)
def report(options: dict, run_dirs: List[str]) -> None:
    """Charts and tables from run directories (default: the output directory)."""
    print_output(cmd_report(_config(options), run_dirs))


@main.command("sample-hg")
@click.pass_obj
def sample_hg(options: dict) -> None:
    """Draw from the multivariate hypergeometric sampler ([sample_hg] section)."""
    print_output(cmd_sample_hg(_config(options)))


def _recursive_help(cmd=main, parent=None, path: Tuple[str] = None) -> str:
    path = path or []
    ctx = click.core.Context(cmd, info_name=cmd.name, parent=parent)

    result = ""

    if path:  # not root
        path_s = " ".join(path)
        result += "\n\n## " + path_s + "\n"

    result += cmd.get_help(ctx) + "\n"

    commands = getattr(cmd, "commands", {})
    for name, group_or_command in commands.items():
        result += _recursive_help(group_or_command, ctx, (path or ()) + (name,))

    return result


@main.command("help-all")
def help_all() -> None:
    print_output(_recursive_help())


if __name__ == "__main__":
    try:
        main()
    except Exception as exc:
        logging.error(exc)
        raise
