"""Operator commands: ``jcas train``, ``jcas eval``, ``jcas figure``, ``jcas baseline``.

Every command reads one JSON config, validates it against the tap's config
schema and writes CSV tables whose ``#`` header records the seed, the config
hash and the package versions.
"""

import csv
import functools
import hashlib
import json
import logging
import os
from contextlib import contextmanager
from importlib import metadata
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import click
import numpy as np
import scipy
from jsonschema import Draft7Validator

from tap_jcas.baselines import crb_curve
from tap_jcas.mimo import (
    MimoScenario,
    build_mimo_networks,
    load_mimo_checkpoint,
    mimo_ber_table,
    mimo_beam_table,
    mimo_train,
    save_mimo_checkpoint,
)
from tap_jcas.numerics import ContractViolationError, InvalidArgumentError
from tap_jcas.streams.analytics import (
    CRB_GRID_DB,
    ConstellationStream,
    CrbCurveStream,
    KurtosisStream,
    NpThresholdStream,
)
from tap_jcas.streams.experiment import (
    DEFAULT_SWEEP_TRIALS,
    AreaPowerStream,
    BeamPatternStream,
    SweepStream,
)
from tap_jcas.streams.utils import CSV_SCHEMA_VERSION, BaselineName, FigureName, SweepAxis
from tap_jcas.tables import (
    area_power_rows,
    beam_rows,
    clean,
    constellation_rows,
    esprit_rows,
    kurtosis_rows,
    mld_rows,
    networks_by_weight,
    np_threshold_rows,
    precoder,
    tradeoff_rows,
)
from tap_jcas.tap import TapJcas
from tap_jcas.trainer import (
    CheckpointVersionError,
    ExperimentConfig,
    SweepFixed,
    build_networks,
    load_checkpoint,
    save_checkpoint,
    sweep,
    train,
)

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "phase", "l_comm", "l_detect", "l_angle", "l_total")
MIMO_BER_COLUMNS = ("snr_c_db", "ue", "ber", "bmi")
TRADEOFF_COLUMNS = (
    "w_s",
    "bmi",
    "ber",
    "rmse_nn",
    "p_d",
    "p_f",
    "kurtosis",
    "beta_s_db",
    "beta_c_db",
)
ESPRIT_COLUMNS = (
    "snr_eff_db",
    "n_win",
    "trials",
    "rmse_esprit",
    "bias_esprit",
    "crb_rmse",
    "degenerate_rate",
)
MLD_COLUMNS = ("snr_c_db", "trials", "ber_mld", "bmi_mld", "ergodic_capacity")
DEFAULT_SNR_C_GRID = tuple(float(x) for x in range(0, 32, 2))


class ConfigError(ValueError):
    """Raised when a config file does not match the schema; one line per offending field."""

    def __init__(self, problems: Sequence[str]) -> None:
        super().__init__("\n".join(problems))
        self.problems = list(problems)


def _field_path(path: Sequence[Any]) -> str:
    return ".".join(str(part) for part in path) or "<root>"


def validate_config(config: Mapping[str, Any]) -> None:
    """Check a config mapping against the tap's JSON schema.

    Raises
    ------
    ConfigError
        With one ``field.path: message`` line per violation.

    """
    validator = Draft7Validator(TapJcas.config_jsonschema)
    errors = sorted(validator.iter_errors(dict(config)), key=lambda e: list(e.absolute_path))
    problems = []
    for error in errors:
        path = list(error.absolute_path)
        if error.validator == "required":
            missing = error.message.split("'")[1]
            path.append(missing)
        problems.append(f"{_field_path(path)}: {error.message}")
    if problems:
        raise ConfigError(problems)


def apply_overrides(config: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Apply command-line overrides on top of the file config."""
    config = json.loads(json.dumps(config))
    if overrides.get("seed") is not None:
        config["seed"] = overrides["seed"]
    if overrides.get("output_dir"):
        config["output_dir"] = overrides["output_dir"]
    plan = config.setdefault("plan", {})
    if overrides.get("w_s") is not None:
        plan["w_s"] = overrides["w_s"]
    if overrides.get("budget_divisor") is not None:
        plan["budget_divisor"] = overrides["budget_divisor"]
    return config


def load_config(
    path: str, overrides: Optional[Mapping[str, Any]] = None
) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    """Read, override and validate a config file.

    Args
    ----
    path : str
        JSON config file.
    overrides : Mapping[str, Any], optional
        ``seed``, ``output_dir``, ``w_s`` and ``budget_divisor`` from the command line.

    Returns
    -------
    Tuple[ExperimentConfig, Dict[str, Any]]
        The parsed experiment and the effective raw config (for hashing).

    """
    try:
        with open(path) as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as error:
        raise ConfigError([f"<root>: not valid JSON ({error})"]) from error
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    config = apply_overrides(raw, overrides or {})
    validate_config(config)
    try:
        experiment = ExperimentConfig.from_dict(config)
        if experiment.mimo:
            MimoScenario.from_dict(experiment.mimo)
    except InvalidArgumentError as error:
        raise ConfigError([str(error)]) from error
    return experiment, config


def config_hash(config: Mapping[str, Any]) -> str:
    """Return a short digest of the effective config."""
    text = json.dumps(config, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def csv_metadata(experiment: ExperimentConfig, config: Mapping[str, Any]) -> Dict[str, Any]:
    """Return the ``#`` header fields of every CSV written for an experiment."""
    return {
        "schema_version": CSV_SCHEMA_VERSION,
        "seed": experiment.seed,
        "config_hash": config_hash(config),
        "versions": (
            f"tap-jcas={_version('tap-jcas')} numpy={np.__version__} scipy={scipy.__version__}"
        ),
    }


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(
    path: str, rows: Sequence[Mapping[str, Any]], columns: Sequence[str], meta: Mapping[str, Any]
) -> str:
    """Write a CSV with a ``#`` metadata block and a header row; returns the file SHA-256."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as handle:
        for key, value in meta.items():
            handle.write(f"# {key}: {value}\n")
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in clean(rows):
            writer.writerow([_cell(row.get(column)) for column in columns])
    with open(path, "rb") as handle:
        digest = hashlib.sha256(handle.read()).hexdigest()
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return digest


def columns_of(stream: type) -> List[str]:
    """Return the CSV columns of a stream, in schema order."""
    return list(stream.schema["properties"])  # type: ignore[attr-defined]


def parse_grid(text: Optional[str]) -> Optional[List[float]]:
    """Parse ``"a,b,c"`` or ``"lo:hi:step"`` (inclusive); an empty string is an empty grid."""
    if text is None:
        return None
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        try:
            lo, hi, step = (float(part) for part in text.split(":"))
        except ValueError as error:
            raise click.BadParameter(f"Expected lo:hi:step, got {text!r}") from error
        if step <= 0:
            raise click.BadParameter("Grid step must be positive.")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [float(x) for x in np.round(lo + step * np.arange(max(count, 0)), 10)]
    try:
        return [float(part) for part in text.split(",")]
    except ValueError as error:
        raise click.BadParameter(f"Expected comma-separated numbers, got {text!r}") from error


def checkpoint_kind(path: str) -> str:
    """Return the ``kind`` recorded in a checkpoint file."""
    with open(path) as handle:
        return str(json.load(handle).get("kind", "jcas"))


@contextmanager
def library_errors() -> Iterator[None]:
    """Turn library and config errors into click diagnostics."""
    try:
        yield
    except ConfigError as error:
        message = "Invalid configuration:\n" + "\n".join(error.problems)
        raise click.ClickException(message) from error
    except CheckpointVersionError as error:
        raise click.ClickException(str(error)) from error
    except (InvalidArgumentError, ContractViolationError, FileNotFoundError) as error:
        raise click.ClickException(str(error)) from error


def config_options(func: Callable) -> Callable:
    """Attach the config argument and the override flags shared by every command."""

    @click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
    @click.option("--seed", type=int, help="Override the master seed.")
    @click.option("--output-dir", type=click.Path(file_okay=False), help="Override output_dir.")
    @click.option("--w-s", "w_s", type=float, help="Override plan.w_s.")
    @click.option("--budget-divisor", type=int, help="Override plan.budget_divisor.")
    @functools.wraps(func)
    def wrapper(**kwargs: Any) -> Any:
        return func(**kwargs)

    return wrapper


def _open(
    config_path: str, overrides: Mapping[str, Any]
) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    experiment, config = load_config(config_path, overrides)
    os.makedirs(experiment.output_dir, exist_ok=True)
    return experiment, config


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
def cli(log_level: str) -> None:
    """Desk-scale neural joint communication and sensing experiments."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()), format="%(levelname)s:%(name)s:%(message)s"
    )


@cli.command("train")
@config_options
def cmd_train(config_path: str, **overrides: Any) -> None:
    """Run pre-training, fine-tuning and limiting; write checkpoint, loss trace and summary."""
    with library_errors():
        experiment, config = _open(config_path, overrides)
        meta = csv_metadata(experiment, config)
        out = experiment.output_dir
        if experiment.mimo:
            scenario = MimoScenario.from_dict(experiment.mimo)
            path = os.path.join(out, "mimo_checkpoint.json")
            mimo_nets = build_mimo_networks(experiment.scenario, scenario, experiment.seed)
            try:
                _, report = mimo_train(experiment.plan, scenario, experiment.scenario, mimo_nets)
            except KeyboardInterrupt:
                save_mimo_checkpoint(mimo_nets, path, partial=True)
                logger.warning(f"Interrupted; partial checkpoint written to {path}")
                raise click.Abort()
            digest = save_mimo_checkpoint(mimo_nets, path)
            columns = list(LOSS_COLUMNS) + [f"rate_ue{u + 1}" for u in range(scenario.n_ue)]
        else:
            path = os.path.join(out, "checkpoint.json")
            nets = build_networks(
                experiment.scenario,
                experiment.modulation,
                experiment.seed,
                experiment.apsk_inner_radius,
            )
            try:
                report = train(experiment.plan, nets, experiment.scenario)
            except KeyboardInterrupt:
                save_checkpoint(nets, path, partial=True)
                logger.warning(f"Interrupted; partial checkpoint written to {path}")
                raise click.Abort()
            digest = save_checkpoint(nets, path)
            columns = list(LOSS_COLUMNS)
        write_csv(os.path.join(out, "losses.csv"), report.losses, columns, meta)
        summary = {
            **meta,
            "checkpoint": os.path.basename(path),
            "checkpoint_sha256": digest,
            "thresholds": {str(n): tau for n, tau in sorted(report.thresholds.items())},
            "metrics": report.metrics,
        }
        with open(os.path.join(out, "summary.json"), "w") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
        logger.info(f"Training finished in {report.elapsed_seconds:.1f}s")
        click.echo(path)


@cli.command("eval")
@config_options
@click.option("--checkpoint", "checkpoint_paths", multiple=True, help="Checkpoint(s) to evaluate.")
@click.option("--axis", type=click.Choice([axis.value for axis in SweepAxis]))
@click.option("--grid", help="Comma-separated values or lo:hi:step.")
@click.option("--trials", type=int, help="Windows per grid point.")
def cmd_eval(
    config_path: str,
    checkpoint_paths: Tuple[str, ...],
    axis: Optional[str],
    grid: Optional[str],
    trials: Optional[int],
    **overrides: Any,
) -> None:
    """Sweep one axis; network and baseline columns share every draw."""
    with library_errors():
        experiment, config = _open(config_path, overrides)
        meta = csv_metadata(experiment, config)
        settings = experiment.sweep or {}
        paths = list(checkpoint_paths) or experiment.checkpoints
        axis_value = SweepAxis(axis or settings.get("axis", SweepAxis.SNR_S.value))
        points = parse_grid(grid)
        if points is None:
            points = settings.get("grid", [])
        n_trials = trials if trials is not None else settings.get("trials", DEFAULT_SWEEP_TRIALS)

        if paths and checkpoint_kind(paths[0]) == "mimo":
            if axis_value is not SweepAxis.SNR_C:
                raise InvalidArgumentError("Multi-user checkpoints are evaluated along snr_c.")
            nets = load_mimo_checkpoint(paths[0])
            rows = mimo_ber_table(nets, experiment.scenario, points, n_trials, experiment.seed)
            target = os.path.join(experiment.output_dir, "mimo_ber.csv")
            write_csv(target, rows, MIMO_BER_COLUMNS, meta)
            click.echo(target)
            return

        fixed = SweepFixed(
            n_win=settings.get("n_win"),
            snr_s_db=settings.get("snr_s_db"),
            snr_c_db=settings.get("snr_c_db"),
        )
        if axis_value is SweepAxis.W_S:
            networks: Any = networks_by_weight(paths)
            if not points and grid is None:
                points = list(networks)
        elif paths:
            networks = load_checkpoint(paths[0])
        else:
            networks = experiment.networks()
        rows = sweep(
            networks, experiment.scenario, axis_value, points, n_trials, experiment.seed, fixed
        )
        target = os.path.join(experiment.output_dir, f"sweep_{axis_value.value}.csv")
        write_csv(target, rows, columns_of(SweepStream), meta)
        click.echo(target)


@cli.command("figure")
@click.argument("name", type=click.Choice([figure.value for figure in FigureName]))
@config_options
@click.option("--checkpoint", "checkpoint_paths", multiple=True, help="Checkpoint(s) to use.")
@click.option("--trials", type=int, default=DEFAULT_SWEEP_TRIALS, show_default=True)
def cmd_figure(
    name: str,
    config_path: str,
    checkpoint_paths: Tuple[str, ...],
    trials: int,
    **overrides: Any,
) -> None:
    """Emit the table underlying one figure."""
    with library_errors():
        experiment, config = _open(config_path, overrides)
        meta = csv_metadata(experiment, config)
        paths = list(checkpoint_paths) or experiment.checkpoints
        cfg = experiment.scenario
        out = experiment.output_dir
        written = []
        match FigureName(name):
            case FigureName.BEAM:
                if paths and checkpoint_kind(paths[0]) == "mimo":
                    nets = load_mimo_checkpoint(paths[0])
                    rows = mimo_beam_table(nets)
                    columns = ["angle_deg"]
                    columns += [f"p_ue{u + 1}" for u in range(nets.scenario.n_ue)] + ["p_sum"]
                    written.append(write_csv(os.path.join(out, "beam.csv"), rows, columns, meta))
                else:
                    jcas = load_checkpoint(paths[0]) if paths else experiment.networks()
                    v = precoder(jcas, cfg)
                    label = paths[0] if paths else "initial"
                    written.append(
                        write_csv(
                            os.path.join(out, "beam.csv"),
                            beam_rows(v),
                            columns_of(BeamPatternStream),
                            meta,
                        )
                    )
                    written.append(
                        write_csv(
                            os.path.join(out, "area_power.csv"),
                            area_power_rows(v, cfg, label),
                            columns_of(AreaPowerStream),
                            meta,
                        )
                    )
            case FigureName.TRADEOFF:
                rows = tradeoff_rows(networks_by_weight(paths), cfg, trials, experiment.seed)
                written.append(
                    write_csv(os.path.join(out, "tradeoff.csv"), rows, TRADEOFF_COLUMNS, meta)
                )
            case FigureName.KURTOSIS:
                rows = kurtosis_rows(networks_by_weight(paths))
                written.append(
                    write_csv(
                        os.path.join(out, "kurtosis.csv"), rows, columns_of(KurtosisStream), meta
                    )
                )
            case FigureName.CONSTELLATION:
                if paths:
                    alphabets = [
                        (f"trained_ws{w_s:.2f}", w_s, nets.constellation())
                        for w_s, nets in networks_by_weight(paths).items()
                    ]
                else:
                    alphabet = experiment.networks().constellation()
                    alphabets = [(alphabet.name, None, alphabet)]
                written.append(
                    write_csv(
                        os.path.join(out, "constellation.csv"),
                        constellation_rows(alphabets),
                        columns_of(ConstellationStream),
                        meta,
                    )
                )
        logger.info(f"figure {name}: {len(written)} file(s)")
        click.echo(out)


@cli.command("baseline")
@click.argument("name", type=click.Choice([baseline.value for baseline in BaselineName]))
@config_options
@click.option("--grid", help="SNR grid in dB: comma-separated values or lo:hi:step.")
@click.option("--trials", type=int, default=DEFAULT_SWEEP_TRIALS, show_default=True)
@click.option("--n-win", "n_win", type=int, help="Window length for crb and esprit.")
def cmd_baseline(
    name: str,
    config_path: str,
    grid: Optional[str],
    trials: int,
    n_win: Optional[int],
    **overrides: Any,
) -> None:
    """Emit a classical reference table: NP thresholds, ESPRIT, CRB or MLD."""
    with library_errors():
        experiment, config = _open(config_path, overrides)
        meta = csv_metadata(experiment, config)
        cfg = experiment.scenario
        points = parse_grid(grid)
        target = os.path.join(experiment.output_dir, f"baseline_{name}.csv")
        match BaselineName(name):
            case BaselineName.CRB:
                snr = CRB_GRID_DB if points is None else points
                rows = crb_curve(snr, K=cfg.K, n_win=n_win or 1)
                write_csv(target, rows, columns_of(CrbCurveStream), meta)
            case BaselineName.NP:
                windows = range(cfg.n_win_min, cfg.n_win_max + 1)
                rows = np_threshold_rows(cfg.K, windows, cfg.p_f)
                write_csv(target, rows, columns_of(NpThresholdStream), meta)
            case BaselineName.ESPRIT:
                snr = CRB_GRID_DB if points is None else points
                rows = esprit_rows(cfg, snr, trials, n_win or cfg.n_win_max, experiment.seed)
                write_csv(target, rows, ESPRIT_COLUMNS, meta)
            case BaselineName.MLD:
                snr = DEFAULT_SNR_C_GRID if points is None else points
                alphabet = build_networks(
                    cfg, experiment.modulation, experiment.seed, experiment.apsk_inner_radius
                ).fixed_constellation()
                rows = mld_rows(alphabet, snr, trials, experiment.seed, cfg.sigma_c2)
                write_csv(target, rows, MLD_COLUMNS, meta)
        click.echo(target)
