"""``svyfosr`` command-line entry point: fit, simulate, subsample, evaluate."""
import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import ValidationError

from svyfosr.core.config import settings
from svyfosr.core.exceptions import (
    ConfigError,
    DataValidationError,
    ProbabilityError,
    SchemaError,
    SvyFosrError,
)
from svyfosr.core.logging import configure_logging
from svyfosr.models.replicates import BootType
from svyfosr.models.simulation import SampleDraw
from svyfosr.schemas import (
    ColumnMap,
    Informativeness,
    ReMode,
    SamplingConfig,
    SmootherSpec,
    SubsampleScheme,
    SuperpopulationConfig,
)
from svyfosr.services.datasets import load_dataset, load_stage_probabilities, save_dataset, save_stage_probabilities
from svyfosr.services.evaluation import aggregate_runs, evaluate_run, reports_to_frame, truth_on_grid
from svyfosr.services.inference import (
    bands_summary,
    coefficient_key,
    fit_svy_fosr,
    load_band_csvs,
    write_band_csvs,
)
from svyfosr.services.resampling import generate_replicates, save_replicates
from svyfosr.services.simulation import (
    draw_two_stage_sample,
    empirical_subsample,
    generate_superpopulation,
    settings_grid,
)
from svyfosr.utils.audit import write_manifest

logger = logging.getLogger("svyfosr.cli")

TRUTH_FILE = "truth.csv"


# Argument helpers
def _column_map(args: argparse.Namespace) -> ColumnMap:
    return ColumnMap(
        outcome_prefix=args.outcome_prefix,
        covariates=[c for c in args.covariates.split(",") if c] if args.covariates else None,
        weight=args.weight,
        stratum=args.stratum,
        psu=args.psu,
        add_intercept=not args.no_intercept,
    )


def _lambda(value: str):
    return "auto" if value == "auto" else float(value)


def _add_column_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--covariates", help="Comma-separated covariate columns (default: all others)")
    p.add_argument("--outcome-prefix", default="y_", help="Prefix of the outcome columns")
    p.add_argument("--weight", default="weight", help="Survey weight column")
    p.add_argument("--stratum", default="stratum", help="Stratum column")
    p.add_argument("--psu", default="psu", help="PSU column")
    p.add_argument("--no-intercept", action="store_true", help="Do not add an intercept")


def _sample_files(out_dir: Path, stem: str, rep: int) -> Tuple[Path, Path]:
    return out_dir / f"{stem}_r{rep:03d}.csv", out_dir / f"probabilities_r{rep:03d}.csv"


def write_truth(path: Path, grid: np.ndarray, reference: np.ndarray, names: Sequence[str],
                closed_form: Optional[np.ndarray] = None) -> Path:
    """Truth table: grid, reference fit per coefficient and, for simulations, the closed form."""
    frame = pd.DataFrame({"s": grid})
    for p, name in enumerate(names):
        frame[coefficient_key(name)] = reference[p]
    if closed_form is not None:
        for p, name in enumerate(names):
            frame[f"closed_{coefficient_key(name)}"] = closed_form[p]
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


# Simulation configuration
def _parse_value(raw: Optional[str]) -> Any:
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "null")):
        return None
    return raw.strip() if isinstance(raw, str) else raw


def _validated(model, kwargs: Dict[str, Any]):
    try:
        return model(**kwargs)
    except ValidationError as e:
        err = e.errors()[0]
        key = str(err["loc"][0]) if err["loc"] else None
        raise ConfigError(f"invalid configuration value for {key}: {err['msg']}", key=key) from None


def resolve_simulation_config(
    path: Optional[str], overrides: Dict[str, Any]
) -> Tuple[SuperpopulationConfig, SamplingConfig]:
    """
    Merge a ``KEY=value`` config file with command-line overrides.

    Keys are field names of SuperpopulationConfig or SamplingConfig (case-insensitive).

    Raises:
        ConfigError naming an unknown key or an invalid value
    """
    values: Dict[str, Any] = {}
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(dotenv_values(path))
    values.update({k: v for k, v in overrides.items() if v is not None})

    pop_names = {name.lower(): name for name in SuperpopulationConfig.model_fields}
    samp_names = {name.lower(): name for name in SamplingConfig.model_fields}
    pop_kwargs, samp_kwargs = {}, {}
    for key, raw in values.items():
        k = key.lower()
        value = _parse_value(raw) if isinstance(raw, str) or raw is None else raw
        if k in pop_names:
            pop_kwargs[pop_names[k]] = value
        elif k in samp_names:
            samp_kwargs[samp_names[k]] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}", key=key)
    pop_kwargs = {k: v for k, v in pop_kwargs.items() if v is not None or k in ("snr_b", "snr_eps")}
    samp_kwargs = {k: v for k, v in samp_kwargs.items() if v is not None}
    return _validated(SuperpopulationConfig, pop_kwargs), _validated(SamplingConfig, samp_kwargs)


def _safe_name(name: str) -> str:
    return re.sub(r"[^0-9A-Za-z._=-]+", "_", name)


# Subcommands
def cmd_fit(args: argparse.Namespace) -> int:
    """Fit a dataset and write per-coefficient band CSVs plus a manifest."""
    started = time.perf_counter()
    scheme = BootType(args.boot_type)
    if scheme is BootType.RWYB and not args.probabilities:
        raise ProbabilityError(
            "--boot-type rwyb requires --probabilities: RWYB needs the selection "
            "probabilities of both sampling stages"
        )
    cm = _column_map(args)
    ds = load_dataset(args.data, cm)
    probs = load_stage_probabilities(args.probabilities, ds) if args.probabilities else None
    smoother = _validated(SmootherSpec, {"basis_dim": args.basis_dim, "lam": args.lam})
    B = args.num_boots or settings.DEFAULT_NUM_BOOTS
    bands = fit_svy_fosr(
        ds,
        family=args.family,
        scheme=scheme,
        B=B,
        smoother=smoother,
        alpha=args.alpha,
        seed=args.seed,
        probs=probs,
        m1=args.m1,
        pointwise_multiplier=args.pointwise_multiplier,
        percentile=args.percentile,
        n_workers=args.parallel,
    )
    out_dir = Path(args.out)
    outputs: List[Path] = write_band_csvs(bands, out_dir, prefix=args.prefix)
    if args.save_replicates:
        rset = generate_replicates(ds, scheme, B, args.seed, probs=probs, m1=args.m1)
        base = None if scheme is BootType.UNWEIGHTED else ds.weights
        outputs.append(save_replicates(rset, out_dir / "replicates.csv", base))
    write_manifest(
        out_dir,
        "fit",
        started,
        seed=args.seed,
        config={
            "family": args.family,
            "boot_type": scheme.value,
            "num_boots": B,
            "alpha": bands.alpha,
            "pointwise_multiplier": bands.z,
            "percentile": bool(args.percentile),
            "smoother": smoother.model_dump(),
            "column_map": cm.model_dump(),
            "m1": args.m1,
        },
        inputs={"data": args.data, **({"probabilities": args.probabilities} if args.probabilities else {})},
        outputs=outputs,
        replicate_failures=bands.n_failed,
        results={"coefficients": bands_summary(bands), "n_replicates": bands.n_replicates},
    )
    return 0


def _write_draw(draw: SampleDraw, out_dir: Path, stem: str, rep: int) -> List[Path]:
    data_path, prob_path = _sample_files(out_dir, stem, rep)
    return [
        save_dataset(draw.dataset, data_path),
        save_stage_probabilities(draw.probs, prob_path, draw.dataset),
    ]


def _simulate_setting(
    pcfg: SuperpopulationConfig, scfg: SamplingConfig, out_dir: Path, reps: int,
    sample_seed: int, n_workers: Optional[int],
) -> List[Path]:
    pop = generate_superpopulation(pcfg, n_workers=n_workers)
    names = ["(Intercept)", "x"]
    outputs = [
        write_truth(out_dir / TRUTH_FILE, pop.grid, pop.reference, names, pop.truth.stacked())
    ]
    for r in range(reps):
        draw = draw_two_stage_sample(
            pop, scfg.per_psu_n, scfg.informativeness, seed=sample_seed + r,
            psus_per_stratum=scfg.psus_per_stratum,
        )
        outputs += _write_draw(draw, out_dir, "dataset", r + 1)
    return outputs


def cmd_simulate(args: argparse.Namespace) -> int:
    """Generate a superpopulation and write sampled datasets, truth and probabilities."""
    started = time.perf_counter()
    overrides = {
        "N": args.N, "H": args.H, "family": args.family, "L": args.L,
        "re_mode": args.re_mode, "snr_b": args.snr_b, "snr_eps": args.snr_eps,
        "seed": args.seed, "streaming": True if args.streaming else None,
        "per_psu_n": args.per_psu_n, "informativeness": args.informativeness,
        "psus_per_stratum": args.psus_per_stratum,
    }
    pcfg, scfg = resolve_simulation_config(args.config, overrides)
    sample_seed = pcfg.seed if args.sample_seed is None else args.sample_seed
    out_dir = Path(args.out)
    settings_list = settings_grid(pcfg, scfg) if args.batch else [("baseline", pcfg, scfg)]
    outputs: List[Path] = []
    for name, p, s in settings_list:
        target = out_dir / _safe_name(name) if args.batch else out_dir
        logger.info("simulating setting %s", name)
        outputs += _simulate_setting(p, s, target, args.reps, sample_seed, args.parallel)
        if args.batch:
            write_manifest(
                target, "simulate", started, seed=p.seed,
                config={"superpopulation": p.model_dump(), "sampling": s.model_dump(), "setting": name},
            )
    write_manifest(
        out_dir,
        "simulate",
        started,
        seed=pcfg.seed,
        config={
            "superpopulation": pcfg.model_dump(),
            "sampling": scfg.model_dump(),
            "batch": bool(args.batch),
            "reps": args.reps,
            "sample_seed": sample_seed,
        },
        inputs={"config": args.config} if args.config else {},
        outputs=outputs,
        results={"settings": [name for name, _, _ in settings_list]},
    )
    return 0


def cmd_subsample(args: argparse.Namespace) -> int:
    """Informative single-stage subsamples of an observed dataset."""
    started = time.perf_counter()
    cm = _column_map(args)
    pop = load_dataset(args.data, cm)
    out_dir = Path(args.out)
    draw = empirical_subsample(pop, args.scheme, args.n, seed=args.seed, family=args.family)
    outputs = [write_truth(out_dir / TRUTH_FILE, pop.original_grid, draw.reference, pop.covariate_names)]
    outputs += _write_draw(draw, out_dir, "subsample", 1)
    for r in range(1, args.reps):
        draw = empirical_subsample(
            pop, args.scheme, args.n, seed=args.seed + r, reference=draw.reference
        )
        outputs += _write_draw(draw, out_dir, "subsample", r + 1)
    write_manifest(
        out_dir,
        "subsample",
        started,
        seed=args.seed,
        config={"scheme": args.scheme, "n": args.n, "reps": args.reps, "family": args.family,
                "column_map": cm.model_dump()},
        inputs={"data": args.data},
        outputs=outputs,
    )
    return 0


def _band_paths(band_dir: Path, prefix: str) -> Dict[str, Path]:
    paths = {p.stem[len(prefix) + 1:]: p for p in sorted(band_dir.glob(f"{prefix}_*.csv"))}
    if not paths:
        raise SchemaError(f"no {prefix}_*.csv files in {band_dir}")
    return paths


def _method_of(band_dir: Path) -> str:
    manifest = band_dir / "manifest.json"
    if manifest.is_file():
        config = json.loads(manifest.read_text()).get("config", {})
        if "boot_type" in config:
            return str(config["boot_type"])
    return band_dir.name


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Compare band directories against a truth file and write run and summary tables."""
    started = time.perf_counter()
    truth_path = Path(args.truth)
    if not truth_path.is_file():
        raise DataValidationError(f"truth file not found: {truth_path}")
    truth = pd.read_csv(truth_path, float_precision="round_trip")
    if "s" not in truth.columns:
        raise SchemaError(f"{truth_path}: missing column ['s']")

    reports = []
    for band_dir in map(Path, args.bands):
        paths = _band_paths(band_dir, args.prefix)
        missing = [k for k in paths if k not in truth.columns]
        if missing:
            raise SchemaError(f"{truth_path}: no truth for coefficient(s) {missing}")
        method = args.method or _method_of(band_dir)
        bands = load_band_csvs(paths, scheme=method)
        beta_true = truth_on_grid(
            truth[list(paths)].to_numpy(dtype=float).T, truth["s"].to_numpy(dtype=float),
            bands.original_grid,
        )
        setting = {"label": args.setting} if args.setting else {}
        reports.append(evaluate_run(bands, beta_true, method, setting, multiplier=args.multiplier))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path = out_dir / "evaluation_runs.csv"
    summary_path = out_dir / "evaluation_summary.csv"
    reports_to_frame(reports).to_csv(runs_path, index=False)
    summary = aggregate_runs(reports)
    summary.to_csv(summary_path, index=False)
    write_manifest(
        out_dir,
        "evaluate",
        started,
        config={"multiplier": args.multiplier, "prefix": args.prefix},
        inputs={"truth": truth_path, **{f"bands_{i}": b for i, b in enumerate(args.bands)}},
        outputs=[runs_path, summary_path],
        results={"runs": len(reports)},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svyfosr",
        description="Survey-aware function-on-scalar regression with replicate-based bands.",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: settings)")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit a dataset and build pointwise and joint bands")
    fit.add_argument("--data", required=True, help="Dataset CSV")
    fit.add_argument("--out", required=True, help="Output directory")
    _add_column_args(fit)
    fit.add_argument("--family", default="gaussian", choices=["gaussian", "bernoulli", "poisson"])
    fit.add_argument("--boot-type", default="weighted", choices=[b.value for b in BootType])
    fit.add_argument("--num-boots", type=int, default=None, help="Number of replicates B")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--alpha", type=float, default=None)
    fit.add_argument("--basis-dim", type=int, default=None)
    fit.add_argument("--lambda", dest="lam", type=_lambda, default="auto")
    fit.add_argument("--probabilities", help="Stage-probability CSV (required for rwyb)")
    fit.add_argument("--m1", type=int, default=None, help="RWYB PSUs resampled per stratum")
    fit.add_argument("--pointwise-multiplier", type=float, default=None)
    fit.add_argument("--percentile", action="store_true", help="Also write percentile band columns")
    fit.add_argument("--parallel", type=int, default=None, help="Worker threads")
    fit.add_argument("--prefix", default="band", help="Band file prefix")
    fit.add_argument("--save-replicates", action="store_true", help="Also write replicate weights")
    fit.set_defaults(handler=cmd_fit)

    sim = sub.add_parser("simulate", help="Generate a superpopulation and draw samples")
    sim.add_argument("--config", help="KEY=value configuration file")
    sim.add_argument("--out", required=True)
    sim.add_argument("--N", type=int)
    sim.add_argument("--H", type=int)
    sim.add_argument("--L", type=int)
    sim.add_argument("--family", choices=["gaussian", "bernoulli", "poisson"])
    sim.add_argument("--re-mode", choices=[m.value for m in ReMode])
    sim.add_argument("--snr-b", type=float)
    sim.add_argument("--snr-eps", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--streaming", action="store_true")
    sim.add_argument("--per-psu-n", type=int)
    sim.add_argument("--informativeness", choices=[i.value for i in Informativeness])
    sim.add_argument("--psus-per-stratum", type=int)
    sim.add_argument("--sample-seed", type=int, default=None)
    sim.add_argument("--reps", type=int, default=1, help="Samples drawn per setting")
    sim.add_argument("--batch", action="store_true", help="Run the one-at-a-time settings grid")
    sim.add_argument("--parallel", type=int, default=None)
    sim.set_defaults(handler=cmd_simulate)

    subs = sub.add_parser("subsample", help="Informative subsamples of an observed dataset")
    subs.add_argument("--data", required=True)
    subs.add_argument("--out", required=True)
    _add_column_args(subs)
    subs.add_argument("--scheme", default="uniform", choices=[s.value for s in SubsampleScheme])
    subs.add_argument("--n", type=int, required=True, help="Expected subsample size")
    subs.add_argument("--seed", type=int, default=0)
    subs.add_argument("--reps", type=int, default=1)
    subs.add_argument("--family", default="gaussian", choices=["gaussian", "bernoulli", "poisson"])
    subs.set_defaults(handler=cmd_subsample)

    ev = sub.add_parser("evaluate", help="Score band files against the truth")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--bands", required=True, nargs="+", help="Band directories, one per run")
    ev.add_argument("--out", required=True)
    ev.add_argument("--method", default=None, help="Method label (default: from the run manifest)")
    ev.add_argument("--setting", default=None, help="Setting label")
    ev.add_argument("--multiplier", type=float, default=2.0, help="Pointwise band multiplier")
    ev.add_argument("--prefix", default="band")
    ev.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except SvyFosrError as e:
        logger.error("%s", e)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid configuration: %s", e)
        return ConfigError.exit_code
    except FileNotFoundError as e:
        logger.error("%s", e)
        return DataValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
