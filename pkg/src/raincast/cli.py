"""Command line entry point: ``raincast gen | train | score | eval | selftest``.

Options given on the command line override values from ``--config FILE``,
which override built-in defaults. Exit codes: 0 success, 1 runtime error,
2 configuration or usage error.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys
import typing
import warnings
from pathlib import Path
from typing import Optional

import click
from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model

from raincast import __version__
from raincast.binning import PRESETS, ClampWarning, clamp_count, make_spec, preset as preset_spec
from raincast.dataset import fmt, read_dataset, split_indices, write_dataset
from raincast.evaluate import (
    BACKBONE,
    HEADS,
    climatology_forecaster,
    head_forecaster,
    mean_scores,
    oracle_forecaster,
    score_csv,
    score_samples,
)
from raincast.modelio import load_model, save_model
from raincast.selftest import run_selftest
from raincast.synth import SynthConfig, dataset_statistics, generate
from raincast.train import TrainConfig, train

THREADS_ENV = "RAINCAST_THREADS"


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


def _section(dc):
    """Pydantic model mirroring a config dataclass, rejecting unknown keys."""
    hints = typing.get_type_hints(dc)
    spec = {f.name: (hints[f.name], f.default) for f in dataclasses.fields(dc)}
    return create_model(f"{dc.__name__}Section", __config__=ConfigDict(extra="forbid"), **spec)


SynthSection = _section(SynthConfig)
TrainSection = _section(TrainConfig)


class Paths(BaseModel):
    model_config = ConfigDict(extra="forbid")
    data: Optional[str] = None
    model: Optional[str] = None
    out: Optional[str] = None


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    heads: list[str] = Field(default_factory=lambda: list(HEADS))
    n_samples: int = Field(1000, ge=1)
    split: str = "val"


class ExperimentConfig(BaseModel):
    """One JSON document describing a whole experiment."""

    model_config = ConfigDict(extra="forbid")
    synth: SynthSection = Field(default_factory=SynthSection)  # type: ignore[valid-type]
    train: TrainSection = Field(default_factory=TrainSection)  # type: ignore[valid-type]
    preset: Optional[str] = None
    n: int = Field(256, ge=1)
    threads: Optional[int] = Field(None, ge=1)
    eval: EvalSection = Field(default_factory=EvalSection)
    paths: Paths = Field(default_factory=Paths)


def experiment_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"config {path} does not match the schema:\n{e}") from e
    if cfg.preset is not None and cfg.preset not in PRESETS:
        raise ConfigError(f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
    return cfg


def resolve_threads(flag: int | None, cfg: ExperimentConfig) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    if cfg.threads is not None:
        return cfg.threads
    return os.cpu_count() or 1


def _build(factory, values: dict, what: str):
    try:
        return factory(values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what} settings: {e}") from e


def _required(value, name: str):
    if value is None:
        raise ConfigError(f"{name} is required (flag or config paths)")
    return value


def _write_text(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8", newline="\n")


def handled(fn):
    """Map configuration errors to exit 2 and any other failure to exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(2)
        except Exception as e:  # noqa: BLE001 - top-level boundary
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


def common(fn):
    fn = click.option("--threads", type=click.IntRange(min=1), default=None,
                      help=f"Worker threads (default: ${THREADS_ENV}, then logical cores).")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="Experiment config JSON.")(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="raincast")
def main():
    """Probabilistic rainfall nowcasting heads on synthetic radar cubes."""


@main.command()
@common
@click.option("--n", type=click.IntRange(min=1), default=None, help="Number of samples.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Dataset directory.")
@handled
def gen(config_path, threads, n, seed, out):
    """Generate a synthetic dataset directory."""
    cfg = load_config(config_path)
    n_threads = resolve_threads(threads, cfg)
    values = cfg.synth.model_dump()
    if seed is not None:
        values["seed"] = seed
    synth = _build(SynthConfig.from_dict, values, "synth")
    out = _required(out or cfg.paths.data, "--out")
    count = n if n is not None else cfg.n
    samples = generate(synth, count, threads=n_threads)
    manifest = write_dataset(out, synth, samples)
    click.echo(f"wrote {manifest['n']} samples to {out}")
    click.echo("statistic,mean,min,p50,p95,max")
    for row, st in dataset_statistics(samples).items():
        click.echo(",".join([row] + [fmt(st[k]) for k in ("mean", "min", "p50", "p95", "max")]))


def _train_config(cfg: ExperimentConfig, **flags) -> TrainConfig:
    values = cfg.train.model_dump()
    preset = flags.pop("preset") or cfg.preset
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values["r_max"], values["epsilon"] = PRESETS[preset]
    patience = flags.pop("patience")
    if patience is not None:
        values["patience"] = None if patience == 0 else patience
    values.update({k: v for k, v in flags.items() if v is not None})
    tc = _build(TrainConfig.from_dict, values, "train")
    _build(lambda v: make_spec(v.r_max, v.epsilon), tc, "bin")
    return tc


@main.command("train")
@common
@click.option("--objective", type=click.Choice(["rps", "hurdle", "multitask"]), default=None)
@click.option("--rmax", "r_max", type=float, default=None, help="Largest bin value (mm).")
@click.option("--epsilon", type=float, default=None, help="Bin width (mm).")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Named bin grid.")
@click.option("--epochs", type=click.IntRange(min=0), default=None)
@click.option("--lr", type=float, default=None, help="Learning rate for every head.")
@click.option("--lambda-agg", "lambda_agg", type=float, default=None, help="Aggregate weight (multitask).")
@click.option("--seed", type=int, default=None)
@click.option("--patience", type=click.IntRange(min=0), default=None, help="Early-stop patience; 0 disables.")
@click.option("--data", type=click.Path(file_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Model directory.")
@handled
def train_cmd(config_path, threads, objective, r_max, epsilon, preset, epochs, lr, lambda_agg, seed,
              patience, data, out):
    """Train a model on a dataset directory."""
    cfg = load_config(config_path)
    resolve_threads(threads, cfg)  # training is single-threaded; still validates the setting
    tc = _train_config(cfg, objective=objective, r_max=r_max, epsilon=epsilon, preset=preset, epochs=epochs,
                       lr=lr, lambda_agg=lambda_agg, seed=seed, patience=patience)
    data = _required(data or cfg.paths.data, "--data")
    out = _required(out or cfg.paths.model, "--out")
    samples = read_dataset(data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ClampWarning)
        result = train(samples, tc)
    save_model(result, out)
    best = result.metrics[result.best_epoch - 1] if result.best_epoch > 0 else None
    val = f"{fmt(best.val_crps)}" if best else "n/a"
    click.echo(f"objective={tc.objective} K={tc.spec.k} epochs_run={len(result.metrics)} "
               f"best_epoch={result.best_epoch} val_crps={val}")
    _report_clamps(caught)


def _report_clamps(caught) -> None:
    n = clamp_count(caught)
    if n:
        click.echo(f"note: {n} value(s) above r_max were clamped onto the last bin", err=True)


def _select(samples, split: str, seed: int, val_fraction: float = 0.2):
    if split == "all":
        return samples
    train_idx, val_idx = split_indices(len(samples), seed, val_fraction)
    idx = train_idx if split == "train" else val_idx
    return [samples[i] for i in idx]


def _spec_from_flags(cfg: ExperimentConfig, r_max, epsilon, preset):
    name = preset or cfg.preset
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        return preset_spec(name)
    r = r_max if r_max is not None else cfg.train.r_max
    e = epsilon if epsilon is not None else cfg.train.epsilon
    try:
        return make_spec(r, e)
    except ValueError as err:
        raise ConfigError(str(err)) from err


@main.command()
@common
@click.option("--model", type=click.Path(file_okay=False), default=None)
@click.option("--data", type=click.Path(file_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Score CSV path.")
@click.option("--oracle", is_flag=True, help="Score the perfect forecast (target step).")
@click.option("--climatology", is_flag=True, help="Score the training-split climatology.")
@click.option("--split", type=click.Choice(["all", "train", "val"]), default="all", help="Samples to score.")
@click.option("--n-samples", type=click.IntRange(min=1), default=None, help="Hurdle draws per sample.")
@click.option("--seed", type=int, default=None, help="Split/sampling seed (default: the model's).")
@click.option("--rmax", "r_max", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@handled
def score(config_path, threads, model, data, out, oracle, climatology, split, n_samples, seed, r_max, epsilon,
          preset):
    """Score forecasts per sample; prints a one-row summary."""
    cfg = load_config(config_path)
    n_threads = resolve_threads(threads, cfg)
    if oracle and climatology:
        raise click.UsageError("--oracle and --climatology are mutually exclusive")
    data = _required(data or cfg.paths.data, "--data")
    out = _required(out or cfg.paths.out, "--out")
    samples = read_dataset(data)
    model_dir = model or cfg.paths.model
    n_draws = n_samples or cfg.eval.n_samples
    if oracle or climatology:
        spec = _spec_from_flags(cfg, r_max, epsilon, preset)
        root_seed = seed if seed is not None else cfg.train.seed
        if oracle:
            forecaster, backbone, objective = oracle_forecaster(spec), "oracle", "oracle"
        else:
            train_idx, _ = split_indices(len(samples), root_seed, cfg.train.val_fraction)
            forecaster = climatology_forecaster([samples[i].y for i in train_idx], spec)
            backbone, objective = "climatology", "climatology"
    else:
        m = load_model(_required(model_dir, "--model"))
        spec = m.spec
        root_seed = seed if seed is not None else m.cfg.seed
        head = "ecdf" if m.ecdf is not None else "hurdle-samples"
        forecaster = head_forecaster(head, m, n_draws, root_seed)
        backbone, objective = BACKBONE, m.cfg.objective
    vf = cfg.train.val_fraction if (oracle or climatology) else m.cfg.val_fraction
    chosen = _select(samples, split, root_seed, vf)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ClampWarning)
        records = score_samples(chosen, forecaster, n_threads)
    _write_text(out, score_csv(records))
    _, mean_crps = mean_scores(records)
    click.echo("backbone,objective,bin_max,K,CRPS")
    click.echo(f"{backbone},{objective},{fmt(spec.r_max)},{spec.k},{fmt(mean_crps)}")
    _report_clamps(caught)


@main.command("eval")
@common
@click.option("--model", type=click.Path(file_okay=False), default=None)
@click.option("--data", type=click.Path(file_okay=False), default=None)
@click.option("--head", "heads", multiple=True,
              type=click.Choice(list(HEADS) + ["moments"]), help="Repeatable; default: every head the model has.")
@click.option("--dist", type=click.Choice(["lognormal", "gamma"]), default=None, help="Distribution for --head moments.")
@click.option("--split", type=click.Choice(["all", "train", "val"]), default=None)
@click.option("--n-samples", type=click.IntRange(min=1), default=None, help="Hurdle draws per sample.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Comparison CSV path.")
@handled
def eval_cmd(config_path, threads, model, data, heads, dist, split, n_samples, seed, out):
    """Compare forecast heads of one model; one CSV row per head."""
    cfg = load_config(config_path)
    n_threads = resolve_threads(threads, cfg)
    m = load_model(_required(model or cfg.paths.model, "--model"))
    samples = read_dataset(_required(data or cfg.paths.data, "--data"))
    chosen_heads = _resolve_heads(heads, dist, m, cfg)
    root_seed = seed if seed is not None else m.cfg.seed
    n_draws = n_samples or cfg.eval.n_samples
    chosen = _select(samples, split or cfg.eval.split, root_seed, m.cfg.val_fraction)
    lines = ["head,n,rps,crps_mm"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ClampWarning)
        for head in chosen_heads:
            records = score_samples(chosen, head_forecaster(head, m, n_draws, root_seed), n_threads)
            mean_rps, mean_crps = mean_scores(records)
            lines.append(f"{head},{len(records)},{fmt(mean_rps)},{fmt(mean_crps)}")
    text = "\n".join(lines) + "\n"
    if out or cfg.paths.out:
        _write_text(out or cfg.paths.out, text)
    click.echo(text, nl=False)
    _report_clamps(caught)


def _resolve_heads(heads, dist, m, cfg: ExperimentConfig) -> list[str]:
    if not heads:
        if dist is not None:
            raise click.UsageError("--dist needs --head moments")
        available = {"ecdf": m.ecdf is not None, "hurdle": m.hurdle is not None}
        wanted = [h for h in cfg.eval.heads if h in HEADS]
        unknown = [h for h in cfg.eval.heads if h not in HEADS]
        if unknown:
            raise ConfigError(f"unknown eval heads {unknown}; choose from {HEADS}")
        return [h for h in wanted if available["ecdf" if h == "ecdf" else "hurdle"]]
    out = []
    for h in heads:
        if h == "moments":
            if dist is None:
                raise click.UsageError("--head moments needs --dist lognormal|gamma")
            h = f"moments-{dist}"
        if h not in out:
            out.append(h)
    return out


@main.command()
@common
@click.option("--seed", type=int, default=0, show_default=True)
@handled
def selftest(config_path, threads, seed):
    """Run the built-in oracle, gradient and invariant checks."""
    cfg = load_config(config_path)
    n_threads = resolve_threads(threads, cfg)
    results = run_selftest(seed, n_threads)
    for r in results:
        click.echo(r.line())
    n_pass = sum(r.passed for r in results)
    click.echo(f"selftest: {n_pass}/{len(results)} checks passed")
    if n_pass != len(results):
        sys.exit(1)


if __name__ == "__main__":
    main()
