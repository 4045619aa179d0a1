"""This module defines the command line interface registered on the
application instance. Run the commands through flask or the package
entry point::

    $ flask --app src eval --config runs/huggingface.toml
    $ python -m src plan --config runs/huggingface.toml "Describe the image"

Every command shares the ``--config``, ``--strategy``, ``--seed``,
``--transport``, ``--record`` and ``--out`` options. Errors raised by the
planner stop the command with the exit code of their family.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from functools import wraps

import click
import toml
from flask import current_app
from flask.cli import with_appcontext

from src import extensions, pipeline, settings
from src.errors import ConfigError, OracleMismatch, PlannerError
from src.planner import STRATEGIES, plan_request
from src.services.llm import build_client
from src.services.storage import dump_json, write_json
from src.theory.suites import SUITES, run_suite


def handle_errors(function):
    """Turn planner errors into their exit codes."""

    @wraps(function)
    def decorated_function(*args, **kwargs):
        try:
            return function(*args, **kwargs)
        except PlannerError as error:
            current_app.logger.error("%s: %s", type(error).__name__, error)
            raise click.exceptions.Exit(error.exit_code) from error

    return decorated_function


def run_options(function):
    """Add the options every command shares."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False),
            help="TOML run manifest.",
        ),
        click.option(
            "--strategy", type=click.Choice(STRATEGIES), help="Planning strategy."
        ),
        click.option(
            "--seed", type=int, help="Seed of splits, sampling and training."
        ),
        click.option(
            "--transport",
            type=click.Choice(settings.TRANSPORTS),
            help="LLM transport.",
        ),
        click.option(
            "--record",
            type=click.Path(dir_okay=False),
            help="Append every LLM exchange to this JSONL file.",
        ),
        click.option(
            "--out", type=click.Path(file_okay=False), help="Output directory."
        ),
    ]
    for option in reversed(options):
        function = option(function)
    return function


def load_config(
    command: str,
    config_path=None,
    strategy=None,
    seed=None,
    transport=None,
    record=None,
    out=None,
) -> settings.RunConfig:
    """Load the manifest and apply the command line overrides.

    :param command: The command name.
    :type command: str
    :raises ConfigError: The configuration is invalid.
    :return: The run configuration.
    :rtype: RunConfig
    """
    # pylint: disable=too-many-arguments
    if config_path:
        try:
            current_app.config.from_file(os.path.abspath(config_path), load=toml.load)
        except (OSError, toml.TomlDecodeError) as error:
            raise ConfigError(f"Unable to load {config_path!r}: {error}") from error
    overrides = {
        "strategy": strategy,
        "seed": seed,
        "out": out,
        "llm": {"transport": transport, "record": record},
    }
    config = settings.load_run_config(current_app.config, overrides, command)
    extensions.limiter.configure(config.llm.rps)
    if config.llm.record:
        extensions.recorder.start(config.llm.record)
    current_app.logger.info("Loaded %s run with strategy %s", command, config.strategy)
    return config


def client_for(config: settings.RunConfig):
    """The LLM client of a run."""
    recorder = extensions.recorder if extensions.recorder.enabled else None
    return build_client(config.llm, limiter=extensions.limiter, recorder=recorder)


@click.command("embed")
@run_options
@with_appcontext
@handle_errors
def embed(**options):
    """Embed node descriptions and sample steps into a cache file."""
    config = load_config("embed", **options)
    inputs = pipeline.load_inputs(config)
    path = pipeline.embed_cache(config, inputs)
    click.echo(path)


@click.command("train")
@run_options
@with_appcontext
@handle_errors
def train(**options):
    """Train the retrieval scorer on the training split."""
    config = load_config("train", **options)
    inputs = pipeline.load_inputs(config)
    _, split = pipeline.split(config, inputs.samples)
    report = pipeline.train(config, inputs, split.train)
    weights, report_path = pipeline.save_training(config, report)
    current_app.logger.info("Best epoch %s, weights in %s", report.best_epoch, weights)
    click.echo(report_path)


@click.command("plan")
@run_options
@click.argument("request")
@with_appcontext
@handle_errors
def plan(request, **options):
    """Plan one REQUEST and print the plan as JSON."""
    config = load_config("plan", **options)
    inputs = pipeline.load_inputs(config)
    example, train_samples = None, ()
    if inputs.samples:
        example, split = pipeline.split(config, inputs.samples)
        train_samples = split.train
    model = pipeline.scorer(config, inputs, train_samples)
    with ThreadPoolExecutor(max_workers=config.parallelism) as executor:
        client = client_for(config)
        ctx = pipeline.context(config, inputs, client, model, example, executor)
        result = plan_request(request, config.strategy, ctx)
    click.echo(dump_json(result.to_record()), nl=False)


@click.command("eval")
@run_options
@with_appcontext
@handle_errors
def evaluate(**options):
    """Plan and score the whole test split."""
    config = load_config("eval", **options)
    inputs = pipeline.load_inputs(config)
    example, split = pipeline.split(config, inputs.samples)
    model = pipeline.scorer(config, inputs, split.train)
    ctx = pipeline.context(config, inputs, client_for(config), model, example)
    with ExitStack() as stack:
        executor = None
        if config.parallelism > 1:
            pool = ThreadPoolExecutor(max_workers=config.parallelism)
            executor = stack.enter_context(pool)
        report, plans = pipeline.evaluate(config, ctx, split.test, executor)
    for path in pipeline.write_evaluation(config, report, plans, split.test):
        click.echo(path)


@click.command("theory")
@run_options
@click.option("--suite", type=click.Choice(SUITES), required=True, help="Suite to run.")
@with_appcontext
@handle_errors
def theory(suite, **options):
    """Run a theory suite and write its report."""
    config = load_config("theory", **options)
    client = client_for(config) if suite == "permute" else None
    with ThreadPoolExecutor(max_workers=config.parallelism) as executor:
        report = run_suite(suite, seed=config.seed, client=client, executor=executor)
    path = os.path.join(config.out, f"theory_{suite}.json")
    write_json(path, report)
    click.echo(path)
    if not report["passed"]:
        raise OracleMismatch(f"The {suite} suite failed, see {path}.")


#: Every command registered on the application.
COMMANDS = (embed, train, plan, evaluate, theory)
