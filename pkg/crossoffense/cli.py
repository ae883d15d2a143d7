"""Console script for crossoffense."""

import functools
import json
import sys

import click

from . import __version__
from .common import CrossOffenseError, setup_logging
from .config import config_schema
from .crossoffense import Experiment, report_runs
from .synthetic import write_synthetic_corpus


def _fail(error: str, message: str, exit_code: int):
    payload = {"error": error, "message": message, "exit_code": exit_code}
    click.echo(json.dumps(payload), err=True)
    sys.exit(exit_code)


def handle_errors(func):
    """Turns library errors into a JSON message on stderr and an exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except CrossOffenseError as e:
            _fail(type(e).__name__, str(e), e.exit_code)
        except Exception as e:
            _fail(type(e).__name__, str(e), 1)

    return wrapper


config_argument = click.argument("config", type=click.Path(dir_okay=False))
overrides_option = click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a config value, e.g. --set train.epochs=5. Repeatable.",
)
checkpoint_option = click.option(
    "--checkpoint",
    type=click.Path(dir_okay=False),
    default=None,
    help="Checkpoint to use instead of the run directory's.",
)


@click.group()
@click.version_option(__version__, prog_name="crossoffense")
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
@click.option("-q", "--quiet", is_flag=True, help="Only log warnings and errors.")
def main(verbose, quiet):
    """Cross-lingual offensive language identification with transfer learning."""
    setup_logging(0 if quiet else 1 + verbose)


@main.command("train")
@config_argument
@overrides_option
@handle_errors
def train_command(config, overrides):
    """Train a model from scratch on the config's training data."""
    experiment = Experiment(config, overrides)
    _, history = experiment.train()
    _echo_history(experiment, history)


@main.command("transfer")
@config_argument
@overrides_option
@handle_errors
def transfer_command(config, overrides):
    """Initialize from the source checkpoint per strategy, then train."""
    experiment = Experiment(config, overrides)
    _, history = experiment.transfer()
    _echo_history(experiment, history)


def _echo_history(experiment, history):
    last = history.records[-1]
    click.echo(f"run directory: {experiment.run_dir}")
    click.echo(f"epochs: {len(history.records)}, final train loss: {last.train_loss:.4f}")
    if last.validation_macro_f1 is not None:
        click.echo(f"validation macro F1: {last.validation_macro_f1:.4f}")


@main.command("evaluate")
@config_argument
@overrides_option
@checkpoint_option
@handle_errors
def evaluate_command(config, overrides, checkpoint):
    """Evaluate on the test data; write report, heat map and comparison table."""
    experiment = Experiment(config, overrides)
    report = experiment.evaluate(checkpoint)
    click.echo(f"macro F1: {report.macro_f1:.4f}")
    click.echo(f"weighted F1: {report.weighted_f1:.4f}")
    click.echo(report.per_class().to_string(float_format=lambda x: f"{x:.4f}"))


@main.command("predict")
@config_argument
@overrides_option
@checkpoint_option
@click.option(
    "--input",
    "input_file",
    type=click.File("r", encoding="utf-8"),
    default="-",
    help="Text file with one text per line. Defaults to stdin.",
)
@handle_errors
def predict_command(config, overrides, checkpoint, input_file):
    """Print label, class name and probabilities for each input line."""
    texts = [line.rstrip("\r\n") for line in input_file]
    experiment = Experiment(config, overrides)
    for label, name, proba in experiment.predict(texts, checkpoint):
        click.echo(f"{label}\t{name}\t" + ",".join(f"{p:.6f}" for p in proba))


@main.command("export")
@config_argument
@overrides_option
@checkpoint_option
@click.option("--no-head", is_flag=True, help="Export the encoder only.")
@click.option(
    "--out",
    "out_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Output path. Defaults to export.ckpt (encoder.ckpt with --no-head) in the run directory.",
)
@handle_errors
def export_command(config, overrides, checkpoint, no_head, out_path):
    """Write the run's model, or only its encoder, as a checkpoint file."""
    experiment = Experiment(config, overrides)
    path = experiment.export(out_path, include_head=not no_head, checkpoint=checkpoint)
    click.echo(path)


@main.command("baseline")
@config_argument
@overrides_option
@handle_errors
def baseline_command(config, overrides):
    """Score the majority-class baseline on the test data."""
    report = Experiment(config, overrides).baseline()
    click.echo(f"macro F1: {report.macro_f1:.4f}")
    click.echo(f"weighted F1: {report.weighted_f1:.4f}")


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option("--language", default="", help="Language section: bengali, hindi or spanish.")
@click.option("--out", "out_path", default=None, help="Write <stem>.txt and <stem>.csv here.")
@click.option("--references/--no-references", default=True, help="Include published rows.")
@handle_errors
def report_command(run_dirs, language, out_path, references):
    """Compare evaluated runs with each other and with published results."""
    table = report_runs(run_dirs, language=language, out_path=out_path, references=references)
    click.echo(table.to_string(index=False, na_rep="", float_format=lambda x: f"{x:.4f}"))


@main.command("synth")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--n-source", default=2000, show_default=True, help="Source training instances.")
@click.option("--n-target", default=50, show_default=True, help="Target training instances.")
@click.option("--n-test", default=500, show_default=True, help="Target test instances.")
@click.option("--seed", default=0, show_default=True, help="Base seed.")
@handle_errors
def synth_command(out_dir, n_source, n_target, n_test, seed):
    """Write a synthetic bilingual corpus as TSV files."""
    paths = write_synthetic_corpus(out_dir, n_source, n_target, n_test, seed)
    for split, path in paths.items():
        click.echo(f"{split}\t{path}")


@main.command("schema")
@handle_errors
def schema_command():
    """Print the JSON schema of experiment configs."""
    click.echo(json.dumps(config_schema(), indent=2, sort_keys=True, default=list))


if __name__ == "__main__":
    sys.exit(main())  # pragma: no cover
