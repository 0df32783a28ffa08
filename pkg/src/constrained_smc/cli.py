"""Command-line driver.

Verbs: ``run``, ``predict``, ``summarize``, ``scenario`` and ``validate``.
Global options can appear before or after the verb and override the
configuration file.

Exit codes: 0 success, 1 validation mismatch, 2 configuration error,
3 sampler non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import subprocess
import sys
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .core import ConfigError, SmcConfig
from .ensemble_io import (
    DIAGNOSTICS_FILE, ENSEMBLE_FILE, METADATA_FILE, QUANTILE_RULE, EnsembleTable, config_hash,
    load_ensemble, load_metadata, save_diagnostics, save_ensemble, save_metadata, write_table,
)
from .models import CASES, MODES, build_model, build_target
from .models.gaussian_toy import GaussianToyModel, analytic_posterior
from .report import predict, scenario, summarize
from .sampler import DegenerateEnsembleError, IterationRecord, SamplerError, run_smc

log = logging.getLogger("constrained_smc")

THREADS_ENV = "CONSTRAINED_SMC_THREADS"
EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_IO = 0, 1, 2, 3, 4


@dataclass
class RunConfig:
    case: str = "logistic"
    constraint_mode: str = "nonempirical"
    smc: SmcConfig = field(default_factory=SmcConfig)
    model: dict[str, Any] = field(default_factory=dict)
    output_dir: Path = Path("results")

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; choose from {CASES}")
        if self.constraint_mode not in MODES:
            raise ConfigError(f"unknown constraint mode {self.constraint_mode!r}; choose from {MODES}")
        # fails early on incompatible case/mode pairs and bad overrides
        build_model(self.case, self.constraint_mode, self.model)

    def identity(self) -> dict[str, Any]:
        """Everything that determines the ensemble (output location and
        thread count excluded)."""
        return {"case": self.case, "constraint_mode": self.constraint_mode,
                "smc": asdict(self.smc), "model": self.model}


_SMC_KEYS = {f.name for f in fields(SmcConfig)}
_TOP_KEYS = {"case", "constraint_mode", "mode", "smc", "model", "output_dir", "seed", "n_particles"}


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            import yaml

            data = yaml.safe_load(text)
    except Exception as exc:  # parser errors differ between formats
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return data


def build_run_config(raw: Mapping[str, Any], args: argparse.Namespace) -> RunConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    smc = dict(raw.get("smc") or {})
    bad = set(smc) - _SMC_KEYS
    if bad:
        raise ConfigError(f"unknown smc option(s): {sorted(bad)}")
    for key in ("seed", "n_particles"):
        if key in raw:
            smc[key] = raw[key]
    if getattr(args, "seed", None) is not None:
        smc["seed"] = args.seed
    if getattr(args, "n_particles", None) is not None:
        smc["n_particles"] = args.n_particles
    try:
        smc_config = SmcConfig(**smc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    case = getattr(args, "case", None) or raw.get("case", "logistic")
    mode = getattr(args, "mode", None) or raw.get("constraint_mode", raw.get("mode", "nonempirical"))
    model = dict(raw.get("model") or {})
    if getattr(args, "constraints", None):
        model["constraints"] = args.constraints
    out = args.output_dir or raw.get("output_dir") or "results"
    return RunConfig(case, mode, smc_config, model, Path(out))


def thread_count(args: argparse.Namespace) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get(THREADS_ENV, "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _pool(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext(None)


def _map(executor: Executor | None, fn, items):
    return list(executor.map(fn, items)) if executor is not None else [fn(x) for x in items]


def _git_version() -> str | None:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def _derived_columns(model, theta, executor) -> dict[str, np.ndarray]:
    dicts = _map(executor, model.derived, list(theta))
    if not dicts or not dicts[0]:
        return {}
    return {k: np.array([d[k] for d in dicts], dtype=float) for k in dicts[0]}


def _prior_ensemble(cfg: RunConfig, model, executor):
    """Mode ``prior``: n draws from the prior scored for constraint
    violation but not weighted."""
    rng = np.random.default_rng(cfg.smc.seed)
    theta = model.prior.sample(rng, cfg.smc.n_particles)
    if model.case == "gaussian-toy":
        rho = np.zeros(len(theta))
    else:
        rho = np.array(_map(executor, model.discrepancy, list(theta)), dtype=float)
    table = EnsembleTable(model.names, theta, np.zeros(len(theta)), rho)
    record = IterationRecord(0, 1.0, math.inf, float(len(theta)), 0, math.nan, float(np.max(rho)), 0)
    return table, [record]


def execute_run(cfg: RunConfig, threads: int = 1) -> tuple[EnsembleTable, list[IterationRecord], dict]:
    """Run the sampler and write ensemble, diagnostics and metadata to
    ``cfg.output_dir``. Raises :class:`SamplerError` after writing partial
    diagnostics when the sampler does not converge."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.case, cfg.constraint_mode, cfg.model)
    meta: dict[str, Any] = {
        "tool": "constrained-smc",
        "version": __version__,
        "git": _git_version(),
        "case": cfg.case,
        "constraint_mode": cfg.constraint_mode,
        "seed": cfg.smc.seed,
        "n_particles": cfg.smc.n_particles,
        "config": cfg.identity(),
        "config_hash": config_hash(cfg.identity()),
        "threads": threads,
        "parameters": list(model.names),
        "quantile_rule": QUANTILE_RULE,
        "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    start = time.perf_counter()
    with _pool(threads) as executor:
        if cfg.constraint_mode == "prior":
            table, records = _prior_ensemble(cfg, model, executor)
        else:
            target = build_target(cfg.case, cfg.constraint_mode, cfg.model)
            try:
                ens, records = run_smc(target, cfg.smc, executor)
            except (SamplerError, DegenerateEnsembleError) as exc:
                partial = getattr(exc, "records", [])
                save_diagnostics(out / DIAGNOSTICS_FILE, partial)
                meta.update(status="non-convergence", error=str(exc),
                            wall_clock_seconds=time.perf_counter() - start,
                            iterations=[r.as_dict() for r in partial])
                save_metadata(out / METADATA_FILE, meta)
                raise
            table = EnsembleTable.from_ensemble(ens)
        table.derived = _derived_columns(model, table.theta, executor)
    save_ensemble(out / ENSEMBLE_FILE, table)
    save_diagnostics(out / DIAGNOSTICS_FILE, records)
    meta.update(status="completed", wall_clock_seconds=time.perf_counter() - start,
                iterations=[r.as_dict() for r in records])
    save_metadata(out / METADATA_FILE, meta)
    return table, records, meta


# ---------------------------------------------------------------- argument parsing


def parse_grid(text: str | None):
    """``start:stop:num`` or a comma-separated list of times."""
    if text is None:
        return None
    try:
        if ":" in text:
            start, stop, num = text.split(":")
            return np.linspace(float(start), float(stop), int(num))
        grid = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}") from None
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise ConfigError("grid must be a non-empty ascending list")
    return grid


def parse_quantiles(text: str | None):
    if text is None:
        return None
    try:
        qs = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse quantiles {text!r}") from None
    if not qs or any(not 0 <= q <= 1 for q in qs):
        raise ConfigError("quantiles must lie in [0, 1]")
    return qs


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # after the verb the defaults are suppressed so they cannot mask values
    # given before it
    none = argparse.SUPPRESS if suppress else None
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=none, help="YAML or JSON run configuration")
    g.add_argument("--seed", type=int, default=none)
    g.add_argument("--n-particles", type=int, default=none)
    g.add_argument("--output-dir", default=none)
    g.add_argument("--threads", type=int, default=none, help=f"worker threads (default ${THREADS_ENV} or 1)")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)
    return g


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="constrained-smc",
        description="Calibrate models against data and qualitative constraints with combined SMC.",
        parents=[_global_options(False)],
    )
    common = _global_options(True)
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], argument_default=argparse.SUPPRESS)

    run = verb("run", "run the sampler and write the ensemble")
    run.add_argument("--case", choices=CASES)
    run.add_argument("--mode", choices=MODES, help="constraint mode")
    run.add_argument("--constraints", choices=("both", "early", "late"),
                     help="logistic constraint subset")

    for name, help_ in (("predict", "posterior-predictive quantile bands"),
                        ("summarize", "marginal summaries of an ensemble"),
                        ("scenario", "ecosystem fox-reduction scenario bands")):
        p = verb(name, help_)
        p.add_argument("--ensemble", help="ensemble CSV (default <output-dir>/ensemble.csv)")
        p.add_argument("--case", choices=CASES, help="case of the ensemble (default from metadata)")
        p.add_argument("--mode", choices=MODES, help="mode of the ensemble (default from metadata)")
        p.add_argument("--output", help="output CSV path")
        if name in ("predict", "scenario"):
            p.add_argument("--grid", help="start:stop:num or comma-separated times")
            p.add_argument("--quantiles", help="comma-separated probabilities")
        if name == "scenario":
            p.add_argument("--reduction", type=float, default=0.2, help="fraction of foxes kept")
            p.add_argument("--intervention-time", type=float, default=10.0)
            p.add_argument("--horizon", type=float, default=30.0)

    val = verb("validate", "conjugate normal-mean check of the sampler")
    val.add_argument("--tolerance-se", type=float, default=3.0)
    val.add_argument("--sd-tolerance", type=float, default=0.10)
    return parser


# ---------------------------------------------------------------- verbs


def _ensemble_context(args, raw):
    out_dir = Path(args.output_dir or raw.get("output_dir") or "results")
    path = Path(getattr(args, "ensemble", None) or out_dir / ENSEMBLE_FILE)
    meta_path = path.parent / METADATA_FILE
    meta = load_metadata(meta_path) if meta_path.exists() else {}
    case = getattr(args, "case", None) or meta.get("case") or raw.get("case")
    mode = getattr(args, "mode", None) or meta.get("constraint_mode") or raw.get("constraint_mode", raw.get("mode"))
    if case is None or mode is None:
        raise ConfigError("cannot infer case and mode; pass --case and --mode")
    overrides = meta.get("config", {}).get("model", raw.get("model") or {})
    model = build_model(case, mode, overrides)
    table = load_ensemble(path, model.names)
    return model, table, out_dir, path


def cmd_run(args, raw) -> int:
    cfg = build_run_config(raw, args)
    threads = thread_count(args)
    try:
        table, records, meta = execute_run(cfg, threads)
    except (SamplerError, DegenerateEnsembleError) as exc:
        log.error("sampler did not converge: %s", exc)
        return EXIT_NONCONVERGENCE
    print(f"{cfg.case}/{cfg.constraint_mode}: {table.n} particles, {len(records)} iterations, "
          f"{meta['wall_clock_seconds']:.1f} s -> {cfg.output_dir}")
    return EXIT_OK


def _write_prediction(pred, path) -> None:
    write_table(path, pred.header, pred.rows())
    side = Path(path).with_suffix(".json")
    save_metadata(side, {"quantiles": list(pred.quantiles), "quantile_rule": QUANTILE_RULE,
                         "n_used": pred.n_used, "n_failed": pred.n_failed})


def cmd_predict(args, raw) -> int:
    model, table, out_dir, _ = _ensemble_context(args, raw)
    pred = predict(table, model, parse_grid(getattr(args, "grid", None)),
                   parse_quantiles(getattr(args, "quantiles", None)))
    path = Path(getattr(args, "output", None) or out_dir / "prediction.csv")
    _write_prediction(pred, path)
    print(f"prediction: {pred.n_used} particles used, {pred.n_failed} failed -> {path}")
    return EXIT_OK


def cmd_summarize(args, raw) -> int:
    model, table, out_dir, _ = _ensemble_context(args, raw)
    summary = summarize(table, model.case)
    path = Path(getattr(args, "output", None) or out_dir / "summary.csv")
    write_table(path, summary.header, summary.rows)
    if summary.extra:
        save_metadata(path.with_suffix(".json"), summary.extra)
        for k, v in summary.extra.items():
            print(f"{k}: {v:g}")
    print(f"summary of {table.n} particles -> {path}")
    return EXIT_OK


def cmd_scenario(args, raw) -> int:
    model, table, out_dir, _ = _ensemble_context(args, raw)
    if model.case != "ecosystem":
        raise ConfigError("scenario needs an ecosystem ensemble")
    qs = parse_quantiles(getattr(args, "quantiles", None))
    kwargs = {} if qs is None else {"quantiles": qs}
    try:
        pred = scenario(table, args.reduction, args.intervention_time, args.horizon,
                        parse_grid(getattr(args, "grid", None)), **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = Path(getattr(args, "output", None) or out_dir / "scenario.csv")
    _write_prediction(pred, path)
    print(f"scenario: {pred.n_used} particles used, {pred.n_failed} failed -> {path}")
    return EXIT_OK


def validate_gaussian(n_particles: int = 2000, seed: int = 0, threads: int = 1) -> dict[str, float]:
    """Sample the normal-mean toy and compare with the exact posterior."""
    model = GaussianToyModel()
    target = build_target("gaussian-toy", "data")
    start = time.perf_counter()
    with _pool(threads) as executor:
        ens, records = run_smc(target, SmcConfig(n_particles=n_particles, seed=seed), executor)
    mu = ens.theta[:, 0]
    mean, sd = analytic_posterior(model.data)
    return {
        "posterior_mean": float(np.mean(mu)),
        "posterior_sd": float(np.std(mu, ddof=1)),
        "analytic_mean": mean,
        "analytic_sd": sd,
        "mc_se": sd / math.sqrt(n_particles),
        "iterations": len(records),
        "seconds": time.perf_counter() - start,
    }


def cmd_validate(args, raw) -> int:
    n = args.n_particles or 2000
    seed = 0 if args.seed is None else args.seed
    res = validate_gaussian(n, seed, thread_count(args))
    z = abs(res["posterior_mean"] - res["analytic_mean"]) / res["mc_se"]
    sd_rel = abs(res["posterior_sd"] / res["analytic_sd"] - 1.0)
    ok = z <= args.tolerance_se and sd_rel <= args.sd_tolerance
    print(f"mean {res['posterior_mean']:.5f} vs {res['analytic_mean']:.5f} ({z:.2f} SE); "
          f"sd {res['posterior_sd']:.5f} vs {res['analytic_sd']:.5f} ({100 * sd_rel:.1f}%); "
          f"{res['seconds']:.1f} s: {'PASS' if ok else 'FAIL'}")
    if args.output_dir:
        save_metadata(Path(args.output_dir) / "validation.json", {**res, "z": z, "sd_rel_error": sd_rel, "pass": ok})
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {"run": cmd_run, "predict": cmd_predict, "summarize": cmd_summarize,
            "scenario": cmd_scenario, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = read_config_file(args.config) if args.config else {}
        return COMMANDS[args.command](args, raw)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed ensemble or table files
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
