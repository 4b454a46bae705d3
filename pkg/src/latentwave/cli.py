"""Command-line orchestration around one JSON run configuration.

Subcommands: simulate, fit, predict, cv, diagnose, summarize. Exit codes:
0 ok, 1 diagnostic failure (R-hat above threshold), 2 input/config error,
3 numerical failure. Any config value can be overridden with an environment
variable LATENTWAVE_<SECTION>_<KEY> (JSON-parsed when possible).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    CsvSchema,
    DataError,
    DatasetError,
    EncodingError,
    SchemaError,
    load_csv,
    normalize_weights,
    read_dataset,
    simulate,
    write_dataset,
)
from .gp import GramFactorizationError
from .model import ModelConfig, params_from_json
from .sampler import (
    InitializationError,
    SamplerConfig,
    canonical_relabeling,
    diagnostics_table,
    fit,
    label_switch_diagnostic,
    load_draws,
    save_draws,
)
from .inference import (
    covariate_effects,
    population_proportions,
    profile_summaries,
    profile_table_to_csv,
    trajectories_to_csv,
)
from .crossval import accuracy_meta, accuracy_table_to_csv, run_cv

ENV_PREFIX = "LATENTWAVE_"
RHAT_FAIL = 1.05
LOW_ESS_FRACTION = 0.5

EXIT_OK = 0
EXIT_DIAGNOSTIC = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

_CONFIG_SECTIONS = ("io", "model", "sampler", "cv", "predict", "simulate", "run")


class ConfigError(ValueError):
    pass


class RunConfig:
    """Sectioned run configuration with environment-variable overrides."""

    def __init__(self, sections: dict, path: Path | None = None):
        unknown = set(sections) - set(_CONFIG_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        self.sections = {name: dict(sections.get(name, {})) for name in _CONFIG_SECTIONS}
        self.path = path

    @classmethod
    def load(cls, path: str | Path | None, environ=None) -> "RunConfig":
        sections: dict = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                sections = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        config = cls(sections, path=Path(path) if path else None)
        config._apply_environment(environ if environ is not None else os.environ)
        return config

    def _apply_environment(self, environ) -> None:
        for key, value in environ.items():
            if not key.startswith(ENV_PREFIX):
                continue
            rest = key[len(ENV_PREFIX) :]
            section, _, option = rest.partition("_")
            section = section.lower()
            if section not in _CONFIG_SECTIONS or not option:
                continue
            try:
                parsed = json.loads(value)
            except json.JSONDecodeError:
                parsed = value
            self.sections[section][option.lower()] = parsed

    def get(self, section: str, key: str, default=None):
        return self.sections[section].get(key, default)

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"config is missing {section}.{key}")
        return value

    def effective(self) -> dict:
        return {name: dict(values) for name, values in self.sections.items()}

    def seed(self, override: int | None) -> int:
        if override is not None:
            return int(override)
        return int(self.get("run", "seed", 0))

    def threads(self, override: int | None) -> int:
        if override is not None:
            return int(override)
        return int(self.get("run", "threads", os.cpu_count() or 1))


def _prepare_output_dir(config: RunConfig, args) -> Path:
    out = args.out or config.get("io", "output_dir")
    if not out:
        raise ConfigError("no output directory: set io.output_dir or pass --out")
    out = Path(out)
    manifest = out / "manifest.json"
    if manifest.exists() and not args.force:
        raise ConfigError(
            f"output directory {out} already holds a run; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(
    out: Path, command: str, config: RunConfig, seed: int, outputs: list[str], extra=None
) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": seed,
        "effective_config": config.effective(),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _load_input_dataset(config: RunConfig):
    schema = config.get("io", "schema")
    if schema is not None:
        input_csv = Path(config.require("io", "input_csv"))
        if not input_csv.exists():
            raise ConfigError(f"input file not found: {input_csv}")
        return load_csv(input_csv, CsvSchema.from_dict(schema))
    dataset_csv = Path(config.require("io", "dataset_csv"))
    dataset_meta = Path(config.require("io", "dataset_meta"))
    for path in (dataset_csv, dataset_meta):
        if not path.exists():
            raise ConfigError(f"input file not found: {path}")
    return read_dataset(dataset_csv, dataset_meta)


def _sampler_config(config: RunConfig, seed: int, section: str = "sampler") -> SamplerConfig:
    values = dict(config.sections[section])
    values.setdefault("seed", seed)
    known = set(SamplerConfig.__dataclass_fields__)
    extra = set(values) - known
    if extra:
        raise ConfigError(f"unknown {section} options: {sorted(extra)}")
    return SamplerConfig(**values)


def cmd_simulate(config: RunConfig, args) -> int:
    out = _prepare_output_dir(config, args)
    seed = config.seed(args.seed)
    params_file = Path(config.require("simulate", "params_file"))
    if not params_file.exists():
        raise ConfigError(f"params file not found: {params_file}")
    params, model_config = params_from_json(params_file.read_text())
    n_per_wave = config.get("simulate", "n_per_wave", 300)
    origin_date = config.get("simulate", "origin_date", "2020-01-01")
    dataset, latent = simulate(
        params,
        model_config,
        seed=seed,
        n_per_wave=n_per_wave,
        origin_date=origin_date,
    )
    write_dataset(dataset, out / "dataset.csv", out / "dataset_meta.json")
    (out / "truth_params.json").write_text(params_file.read_text())
    latent_frame = np.column_stack([dataset.wave_of_row, latent])
    header = "wave,profile"
    np.savetxt(out / "latent_classes.csv", latent_frame, fmt="%d", delimiter=",", header=header, comments="")
    _write_manifest(
        out,
        "simulate",
        config,
        seed,
        ["dataset.csv", "dataset_meta.json", "truth_params.json", "latent_classes.csv"],
        extra={"n_rows": int(dataset.n_rows)},
    )
    print(f"simulated {dataset.n_rows} rows over {dataset.n_waves} waves -> {out}")
    return EXIT_OK


def cmd_fit(config: RunConfig, args) -> int:
    out = _prepare_output_dir(config, args)
    seed = config.seed(args.seed)
    threads = config.threads(args.threads)
    dataset = _load_input_dataset(config)
    if config.get("model", "normalize_weights", True):
        dataset = normalize_weights(dataset)
    n_profiles = int(config.require("model", "n_profiles"))
    model_config = ModelConfig.from_dataset(dataset, n_profiles)
    sampler_config = _sampler_config(config, seed)

    draws = fit(dataset, model_config, sampler_config, n_jobs=threads)
    run_warnings = list(draws.warnings)
    switch_report = None
    if n_profiles > 1:
        switch_report = label_switch_diagnostic(draws)
        draws = canonical_relabeling(draws)
        if switch_report.max_fraction > 0.01:
            run_warnings.append(
                f"label switching detected (max fraction "
                f"{switch_report.max_fraction:.3f}); draws were relabeled"
            )

    save_draws(draws, out)
    table = diagnostics_table(draws)
    table.to_csv(out / "diagnostics.csv", index=False, float_format="%.6g")
    profile_table_to_csv(profile_summaries(draws), out / "profile_table.csv")
    if n_profiles > 1:
        covariate_effects(draws).to_csv(
            out / "covariate_effects.csv", index=False, float_format="%.6g"
        )

    ess_values = table["ess"].to_numpy()
    if np.all(np.isnan(ess_values)):
        run_warnings.append("too few draws to estimate effective sample sizes")
    elif np.nanmin(ess_values) < LOW_ESS_FRACTION * draws.n_draws:
        run_warnings.append(
            f"low effective sample size: min {np.nanmin(ess_values):.0f} "
            f"of {draws.n_chains * draws.n_draws} draws"
        )
    max_rhat = float(np.nanmax(table["rhat"].to_numpy())) if len(table) else float("nan")

    run_meta = {
        "seed": seed,
        "sampler_config": sampler_config.to_dict(),
        "max_rhat": None if np.isnan(max_rhat) else max_rhat,
        "min_ess": None if np.all(np.isnan(ess_values)) else float(np.nanmin(ess_values)),
        "divergences": draws.divergent.sum(axis=1).tolist(),
        "step_size": draws.step_size.tolist(),
        "label_switching": switch_report.to_dict() if switch_report else None,
        "warnings": run_warnings,
    }
    (out / "run_meta.json").write_text(json.dumps(run_meta, indent=2))
    _write_manifest(
        out,
        "fit",
        config,
        seed,
        sorted(p.name for p in out.glob("*.csv")) + ["run_meta.json", "draws_meta.json"],
    )
    for message in run_warnings:
        print(f"warning: {message}", file=sys.stderr)
    if not np.isnan(max_rhat) and max_rhat > RHAT_FAIL:
        print(f"convergence failure: max R-hat {max_rhat:.3f} > {RHAT_FAIL}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    print(f"fit complete: {draws.n_chains} chains x {draws.n_draws} draws -> {out}")
    return EXIT_OK


def _resolve_grid(config: RunConfig, times: np.ndarray) -> np.ndarray:
    spec = config.get("predict", "grid", "daily")
    if spec == "daily":
        return np.arange(times[0], times[-1] + 0.5, 1.0)
    if isinstance(spec, dict):
        start = float(spec.get("start", times[0]))
        stop = float(spec.get("stop", times[-1]))
        step = float(spec.get("step", 1.0))
        return np.arange(start, stop + step / 2, step)
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    raise ConfigError(f"unrecognized predict.grid: {spec!r}")


def cmd_predict(config: RunConfig, args) -> int:
    out = _prepare_output_dir(config, args)
    seed = config.seed(args.seed)
    draws_dir = Path(config.require("predict", "draws_dir"))
    if not (draws_dir / "draws_meta.json").exists():
        raise ConfigError(f"no draws found under {draws_dir}")
    draws = load_draws(draws_dir)
    dataset = _load_input_dataset(config)
    if config.get("model", "normalize_weights", True):
        dataset = normalize_weights(dataset)
    if dataset.covariates.shape[1] != draws.config.n_covariates:
        raise ConfigError(
            "dataset covariate count does not match the draws' coefficient block"
        )
    if len(dataset.wave_times) != draws.config.n_waves:
        raise ConfigError("dataset wave count does not match the draws' intercept block")
    times = np.asarray(draws.config.wave_times)
    grid = _resolve_grid(config, times)
    trajectories = population_proportions(
        draws,
        dataset,
        grid,
        level=float(config.get("predict", "level", 0.95)),
        allow_extrapolation=bool(config.get("predict", "allow_extrapolation", False)),
    )
    trajectories_to_csv(
        trajectories, out / "trajectories.csv", origin_date=dataset.origin_date
    )
    _write_manifest(out, "predict", config, seed, ["trajectories.csv"])
    print(f"wrote {grid.size} grid points x {draws.config.n_profiles} profiles -> {out}")
    return EXIT_OK


def cmd_cv(config: RunConfig, args) -> int:
    out = _prepare_output_dir(config, args)
    seed = config.seed(args.seed)
    threads = config.threads(args.threads)
    dataset = _load_input_dataset(config)
    if config.get("model", "normalize_weights", True):
        dataset = normalize_weights(dataset)
    h_grid = config.get("cv", "h_grid")
    if not h_grid:
        raise ConfigError("cv.h_grid must list at least one candidate profile count")
    n_folds = int(config.get("cv", "n_folds", 4))
    sampler_section = {
        k: v for k, v in config.sections["cv"].items() if k not in ("h_grid", "n_folds")
    }
    defaults = {"n_warmup": 1000, "n_draws": 1000, "n_chains": 1, "seed": seed}
    sampler_config = SamplerConfig(**{**defaults, **sampler_section})
    table = run_cv(
        dataset,
        [int(h) for h in h_grid],
        n_folds,
        sampler_config=sampler_config,
        seed=seed,
        n_jobs=threads,
    )
    accuracy_table_to_csv(table, out / "accuracy_display.csv", out / "accuracy_full.csv")
    (out / "cv_meta.json").write_text(json.dumps(accuracy_meta(table), indent=2))
    _write_manifest(
        out,
        "cv",
        config,
        seed,
        ["accuracy_display.csv", "accuracy_full.csv", "cv_meta.json"],
        extra={"selected_h": table.selected_h},
    )
    print(f"cross-validation selected H={table.selected_h} -> {out}")
    return EXIT_OK


def cmd_diagnose(config: RunConfig, args) -> int:
    out = _prepare_output_dir(config, args)
    seed = config.seed(args.seed)
    draws_dir = Path(config.require("predict", "draws_dir"))
    if not (draws_dir / "draws_meta.json").exists():
        raise ConfigError(f"no draws found under {draws_dir}")
    draws = load_draws(draws_dir)
    table = diagnostics_table(draws)
    table.to_csv(out / "diagnostics.csv", index=False, float_format="%.6g")
    outputs = ["diagnostics.csv"]
    if draws.config.n_profiles > 1:
        report = label_switch_diagnostic(draws)
        (out / "label_switch.json").write_text(json.dumps(report.to_dict(), indent=2))
        outputs.append("label_switch.json")
    _write_manifest(out, "diagnose", config, seed, outputs)
    max_rhat = float(np.nanmax(table["rhat"].to_numpy())) if len(table) else float("nan")
    if not np.isnan(max_rhat) and max_rhat > RHAT_FAIL:
        print(f"convergence failure: max R-hat {max_rhat:.3f} > {RHAT_FAIL}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    print(f"diagnostics written -> {out}")
    return EXIT_OK


def cmd_summarize(config: RunConfig, args) -> int:
    out = _prepare_output_dir(config, args)
    seed = config.seed(args.seed)
    draws_dir = Path(config.require("predict", "draws_dir"))
    if not (draws_dir / "draws_meta.json").exists():
        raise ConfigError(f"no draws found under {draws_dir}")
    draws = load_draws(draws_dir)
    profile_table_to_csv(profile_summaries(draws), out / "profile_table.csv")
    outputs = ["profile_table.csv"]
    if draws.config.n_profiles > 1:
        covariate_effects(draws).to_csv(
            out / "covariate_effects.csv", index=False, float_format="%.6g"
        )
        outputs.append("covariate_effects.csv")
    _write_manifest(out, "summarize", config, seed, outputs)
    print(f"summaries written -> {out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "diagnose": cmd_diagnose,
    "summarize": cmd_summarize,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentwave",
        description="Dynamic latent-profile regression for repeated cross-sectional surveys",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, default=None, help="run configuration JSON")
        cmd.add_argument("--seed", type=int, default=None, help="override the run seed")
        cmd.add_argument("--threads", type=int, default=None, help="worker pool size")
        cmd.add_argument("--out", type=Path, default=None, help="output directory")
        cmd.add_argument(
            "--force", action="store_true", help="allow writing into a used output directory"
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config)
        return _COMMANDS[args.command](config, args)
    except (
        ConfigError,
        SchemaError,
        DataError,
        DatasetError,
        EncodingError,
        FileNotFoundError,
        ValueError,
        KeyError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GramFactorizationError, InitializationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
