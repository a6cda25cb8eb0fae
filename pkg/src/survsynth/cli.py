"""Command-line pipeline runner.

Subcommands: ingest, fit-cox, distill, train-decoder, generate, augment,
realism, utility, benchmark, pipeline. A JSON config drives reproducible runs;
flags override config values. Exit codes: 0 success, 1 stage failure, 2 config
error.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    ResamplePlan,
    adasyn_augment,
    ncr_clean,
    random_undersample,
    smote_augment,
    tomek_links,
    train_vae,
    train_wgan,
    vae_generate,
    wgan_generate,
)
from .ck4gen import (
    build_synthnet,
    fit_generator,
    generate,
    generate_perturbed,
    load_encoder,
    save_encoder,
)
from .data_io import (
    DataError,
    SurvivalDataset,
    load_dataset,
    load_schema,
    mice_impute,
    validate_schema,
    write_dataset,
)
from .harness import METHOD_NAMES, emit_report, five_by_two_cv, realism_report, utility_report
from .neural import load_checkpoint, save_checkpoint
from .preprocess import PreprocessState, TransformError, preprocess
from .survival_core import FitError, calibration, fit_coxph, hazard_ratio_table

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2

OUTPUT_ROOT_ENV = "SURVSYNTH_OUT"

HYPERPARAMETER_RANGES = {
    "penalizer": (0.0, 1e3),
    "num_mixtures": (1, 64),
    "encoder_epochs": (0, 10_000_000),
    "decoder_epochs": (0, 10_000_000),
    "vae_epochs": (0, 10_000_000),
    "wgan_epochs": (0, 10_000_000),
    "lr": (0.0, 10.0),
    "noise_scale": (0.0, 100.0),
    "k_neighbors": (1, 1000),
    "n_bins": (2, 1000),
    "n_estimators": (1, 10_000),
    "target_ratio": (1e-9, 1.0),
    "batch": (1, 1_000_000),
}


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _merged_config(args) -> dict:
    config = _load_config(getattr(args, "config", None))
    for key in ("data", "schema", "out", "method", "seed", "synthetic", "dataset"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    if "out" not in config or config["out"] is None:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            config["out"] = root
    config.setdefault("seed", 0)
    config.setdefault("hyperparameters", {})
    if not isinstance(config["hyperparameters"], dict):
        raise ConfigError("hyperparameters must be an object")
    for key, value in config["hyperparameters"].items():
        if key in HYPERPARAMETER_RANGES:
            lo, hi = HYPERPARAMETER_RANGES[key]
            if not (lo <= value <= hi):
                raise ConfigError(f"hyperparameter {key}={value} outside [{lo}, {hi}]")
    return config


def _require(config: dict, keys: list, command: str) -> None:
    missing = [k for k in keys if not config.get(k)]
    if missing:
        raise ConfigError(f"{command}: missing required config/flags: {missing}")
    for key in ("data", "schema", "synthetic"):
        if key in keys and not Path(config[key]).exists():
            raise ConfigError(f"{command}: {key} path does not exist: {config[key]}")


def _config_hash(config: dict) -> str:
    # the output directory must not influence the manifest, so reruns into
    # different directories stay byte-identical
    doc = {k: v for k, v in sorted(config.items()) if k != "out"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _ingest(config: dict, impute: bool = True) -> SurvivalDataset:
    schema = load_schema(config["schema"])
    dataset = load_dataset(config["data"], schema)
    if impute and np.isnan(dataset.features).any():
        dataset = mice_impute(dataset, n_iterations=config["hyperparameters"].get("mice_iterations", 5))
    return dataset


def _out_dir(config: dict) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_command_manifest(config: dict, out: Path, command: str, **extra) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "seed": config["seed"],
        "config_hash": _config_hash(config),
        "hyperparameters": dict(sorted(config["hyperparameters"].items())),
        "toolkit_version": __version__,
        **extra,
    })


def cmd_ingest(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out"], "ingest")
    schema = load_schema(config["schema"])
    dataset = load_dataset(config["data"], schema)
    report = validate_schema(dataset)
    out = Path(config["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_fit_cox(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out"], "fit-cox")
    dataset = _ingest(config)
    model = fit_coxph(dataset, penalizer=config["hyperparameters"].get("penalizer", 1e-4))
    out = _out_dir(config)
    _write_json(out / "cox_model.json", model.to_dict())
    table = hazard_ratio_table(model)
    _write_json(out / "hazard_ratios.json", table.to_dict())
    _write_command_manifest(config, out, "fit-cox", dataset=dataset.name, rows=dataset.n_rows)
    for e in table.entries:
        print(f"{e.name:28s} HR {e.hr:6.3f}  95% CI ({e.ci_low:.3f}, {e.ci_high:.3f})")
    return EXIT_OK


def _fit_and_save_generator(config: dict, dataset: SurvivalDataset, out: Path):
    hp = config["hyperparameters"]
    gen = fit_generator(
        dataset,
        penalizer=hp.get("penalizer", 1e-4),
        num_mixtures=hp.get("num_mixtures", 5),
        encoder_epochs=hp.get("encoder_epochs", 10_000),
        decoder_epochs=hp.get("decoder_epochs", 20_000),
        lr=hp.get("lr", 0.001),
        seed=config["seed"],
    )
    _write_json(out / "cox_model.json", gen.teacher.to_dict())
    save_encoder(gen.encoder, out / "encoder.json")
    save_checkpoint(gen.decoder, out / "decoder.json")
    gen.state.save(out / "preprocess_state.json")
    _write_json(out / "generation_run.json", gen.run.to_dict())
    return gen


def cmd_distill(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out"], "distill")
    dataset = _ingest(config)
    out = _out_dir(config)
    hp = config["hyperparameters"]
    from .ck4gen import build_dcm_encoder, derive_seed, teacher_targets, train_dcm

    teacher = fit_coxph(dataset, penalizer=hp.get("penalizer", 1e-4))
    encoder = build_dcm_encoder(
        dataset.features.shape[1], hp.get("num_mixtures", 5),
        seed=derive_seed(config["seed"], "encoder-init"),
    )
    _, losses = train_dcm(
        encoder, dataset.features, teacher_targets(teacher, dataset.features),
        epochs=hp.get("encoder_epochs", 10_000), lr=hp.get("lr", 0.001),
    )
    encoder.source_fingerprint = dataset.fingerprint()
    _write_json(out / "cox_model.json", teacher.to_dict())
    save_encoder(encoder, out / "encoder.json")
    _write_json(out / "distill_losses.json", {"first": losses[0], "final": losses[-1], "epochs": len(losses)})
    _write_command_manifest(config, out, "distill", source_fingerprint=encoder.source_fingerprint)
    print(f"distilled: loss {losses[0]:.6g} -> {losses[-1]:.6g} over {len(losses)} epochs")
    return EXIT_OK


def cmd_train_decoder(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out"], "train-decoder")
    dataset = _ingest(config)
    out = _out_dir(config)
    encoder_path = out / "encoder.json"
    if not encoder_path.exists():
        raise ConfigError(f"train-decoder: missing encoder checkpoint {encoder_path} (run distill first)")
    from .ck4gen import derive_seed, encode_latent, train_synthnet

    encoder = load_encoder(encoder_path)
    hp = config["hyperparameters"]
    tau, state = preprocess(dataset)
    latents = encode_latent(encoder, dataset.features)
    decoder = build_synthnet(tau.shape[1], seed=derive_seed(config["seed"], "decoder-init"))
    _, losses = train_synthnet(
        decoder, latents, tau, epochs=hp.get("decoder_epochs", 20_000), lr=hp.get("lr", 0.001)
    )
    save_checkpoint(decoder, out / "decoder.json")
    state.save(out / "preprocess_state.json")
    _write_json(out / "decoder_losses.json", {"first": losses[0], "final": losses[-1], "epochs": len(losses)})
    _write_command_manifest(config, out, "train-decoder")
    print(f"decoder trained: loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out"], "generate")
    dataset = _ingest(config)
    out = _out_dir(config)
    for artifact in ("encoder.json", "decoder.json", "preprocess_state.json"):
        if not (out / artifact).exists():
            raise ConfigError(f"generate: missing artifact {out / artifact}")
    encoder = load_encoder(out / "encoder.json")
    decoder = load_checkpoint(out / "decoder.json")
    state = PreprocessState.load(out / "preprocess_state.json")
    noise = config["hyperparameters"].get("noise_scale", 0.0)
    if noise > 0:
        synth = generate_perturbed(encoder, decoder, dataset, state, noise, seed=config["seed"])
    else:
        synth = generate(encoder, decoder, dataset, state)
    write_dataset(synth, out / "synthetic.csv")
    _write_command_manifest(config, out, "generate", rows=synth.n_rows,
                            synthetic_fingerprint=synth.fingerprint())
    print(f"wrote {out / 'synthetic.csv'} ({synth.n_rows} rows)")
    return EXIT_OK


def cmd_augment(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out", "method"], "augment")
    method = config["method"]
    if method not in METHOD_NAMES or method == "ensemble":
        raise ConfigError(f"augment: method must be one of {[m for m in METHOD_NAMES if m != 'ensemble']}")
    dataset = _ingest(config)
    out = _out_dir(config)
    hp = config["hyperparameters"]
    seed = config["seed"]
    plan = ResamplePlan(
        k_neighbors=hp.get("k_neighbors", 5), target_ratio=hp.get("target_ratio", 1.0), seed=seed
    )
    if method == "none":
        augmented = dataset
    elif method == "smote":
        augmented = smote_augment(dataset, plan)
    elif method == "adasyn":
        augmented = adasyn_augment(dataset, plan)
    elif method == "random_under":
        augmented = random_undersample(dataset, plan)
    elif method == "tomek":
        augmented = tomek_links(dataset)[1]
    elif method == "ncr":
        augmented = ncr_clean(dataset, hp.get("ncr_k", 3))
    elif method == "vae":
        model, _ = train_vae(dataset, epochs=hp.get("vae_epochs", 1000), batch=hp.get("batch", 32),
                             lr=hp.get("lr", 0.001), seed=seed)
        augmented = vae_generate(model, dataset.n_rows, model.codec.state, seed=seed)
    elif method == "wgan":
        model, _ = train_wgan(dataset, epochs=hp.get("wgan_epochs", 500), batch=hp.get("batch", 32),
                              seed=seed)
        augmented = wgan_generate(model, dataset.n_rows, model.codec.state, seed=seed)
    else:  # ck4gen / ck4gen_perturbed
        gen = _fit_and_save_generator(config, dataset, out)
        if method == "ck4gen_perturbed":
            augmented = generate_perturbed(
                gen.encoder, gen.decoder, dataset, gen.state,
                noise_scale=hp.get("noise_scale", 0.1), seed=seed,
            )
        else:
            augmented = generate(gen.encoder, gen.decoder, dataset, gen.state)
    write_dataset(augmented, out / "augmented.csv")
    manifest = {
        "command": "augment",
        "method": method,
        "seed": seed,
        "config_hash": _config_hash(config),
        "rows_in": dataset.n_rows,
        "rows_out": augmented.n_rows,
        "hyperparameters": dict(sorted(hp.items())),
        "oversampling_target_ratio": hp.get("target_ratio", 1.0),
        "toolkit_version": __version__,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / 'augmented.csv'} ({augmented.n_rows} rows)")
    return EXIT_OK


def _load_pair(config: dict) -> tuple[SurvivalDataset, SurvivalDataset]:
    schema = load_schema(config["schema"])
    real = load_dataset(config["data"], schema)
    if np.isnan(real.features).any():
        real = mice_impute(real)
    synth = load_dataset(config["synthetic"], schema)
    if np.isnan(synth.features).any():
        synth = mice_impute(synth)
    return real, synth


def cmd_realism(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "synthetic", "out"], "realism")
    real, synth = _load_pair(config)
    report = realism_report(real, synth)
    emit_report({"realism": report}, config["out"])
    _write_command_manifest(config, Path(config["out"]), "realism")
    print(f"max_abs_corr_diff = {report.max_abs_corr_diff:.4f}")
    return EXIT_OK


def _utility_dropping_collinear(real, synth, covariates, penalizer):
    """Utility report, excluding covariates the fit names as collinear/constant."""
    names = list(covariates) if covariates is not None else real.feature_names
    dropped = []
    while True:
        try:
            return utility_report(real, synth, covariates=names, penalizer=penalizer), dropped
        except FitError as exc:
            offenders = [c for c in exc.collinear_columns if c in names]
            if not offenders:
                raise
            for c in offenders:
                names.remove(c)
                dropped.append(c)
            if len(names) < 2:
                raise


def cmd_utility(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "synthetic", "out"], "utility")
    real, synth = _load_pair(config)
    report, dropped = _utility_dropping_collinear(
        real, synth, config.get("covariates"), config["hyperparameters"].get("penalizer", 1e-4)
    )
    emit_report({"utility": report}, config["out"])
    _write_command_manifest(config, Path(config["out"]), "utility", dropped_collinear=dropped)
    if dropped:
        print(f"dropped collinear covariates: {dropped}")
    print(f"km_gap = {report.km_gap:.4f}; HR points inside real CI: "
          f"{report.n_point_in_ci}/{len(report.covariates)}")
    return EXIT_OK


def _benchmark_datasets(config: dict) -> list:
    """One (label, dataset) per configured source; `datasets` beats data/schema."""
    sources = config.get("datasets")
    if not sources:
        sources = [{"name": config.get("dataset") or "", "data": config["data"], "schema": config["schema"]}]
    loaded = []
    for src in sources:
        for key in ("data", "schema"):
            if key not in src:
                raise ConfigError(f"benchmark: datasets entries need 'data' and 'schema' ({src})")
            if not Path(src[key]).exists():
                raise ConfigError(f"benchmark: path does not exist: {src[key]}")
        sub = dict(config)
        sub["data"], sub["schema"] = src["data"], src["schema"]
        ds = _ingest(sub)
        loaded.append((src.get("name") or ds.name or Path(src["data"]).stem, ds))
    return loaded


def cmd_benchmark(args) -> int:
    config = _merged_config(args)
    if not config.get("datasets"):
        _require(config, ["data", "schema", "out"], "benchmark")
    elif not config.get("out"):
        raise ConfigError("benchmark: missing required config/flags: ['out']")
    methods = config.get("methods") or ([config["method"]] if config.get("method") else ["none"])
    for m in methods:
        if m not in METHOD_NAMES:
            raise ConfigError(f"benchmark: unknown method {m!r}")
    datasets = _benchmark_datasets(config)
    out = _out_dir(config)
    hp = config["hyperparameters"]
    results = {}
    failures = {}
    for label, dataset in datasets:
        for method in methods:
            try:
                results[(label, method)] = five_by_two_cv(
                    dataset, method,
                    penalizer=hp.get("penalizer", 1e-4),
                    seed=config["seed"],
                    n_bins=hp.get("n_bins", 10),
                    options=hp,
                )
            except (ValueError, FitError, TransformError) as exc:
                failures[(label, method)] = str(exc)
    lines = ["dataset,method,c_index_mean,c_index_std,failures," +
             ",".join(f"slope_{h},d_delta1_{h}" for h in ("p25", "p50", "p75"))]
    for label, _ in datasets:
        for method in methods:
            key = (label, method)
            if key in failures:
                lines.append(f"{label},{method},,,{failures[key]!r},,,,,,")
                continue
            r = results[key]
            cal = r.calibration_summary()
            cells = []
            for h in ("p25", "p50", "p75"):
                s = cal[h]["slope_mean"]
                cells += ["" if s is None else repr(s), "" if s is None else repr(abs(s - 1.0))]
            lines.append(
                f"{label},{method},{r.c_index_mean()!r},{r.c_index_std()!r},{r.failure_count},"
                + ",".join(cells)
            )
    with open(out / "benchmark.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for label, _ in datasets:
        tree = {"cv": {m: results[(label, m)] for m in methods if (label, m) in results}}
        emit_report(tree, out / label if len(datasets) > 1 else out)
    _write_json(out / "manifest.json", {
        "command": "benchmark", "datasets": [label for label, _ in datasets],
        "methods": methods, "seed": config["seed"], "config_hash": _config_hash(config),
        "toolkit_version": __version__,
    })
    for (label, method) in sorted(results.keys() | failures.keys()):
        if (label, method) in failures:
            print(f"{label:10s} {method:18s} FAILED: {failures[(label, method)]}")
        else:
            r = results[(label, method)]
            print(f"{label:10s} {method:18s} C-index {r.c_index_mean():.4f} ({r.c_index_std():.4f})"
                  f"  failures {r.failure_count}")
    return EXIT_OK if not failures else EXIT_STAGE_FAILURE


def cmd_pipeline(args) -> int:
    config = _merged_config(args)
    _require(config, ["data", "schema", "out"], "pipeline")
    out = _out_dir(config)
    hp = config["hyperparameters"]
    stage = "ingest"
    try:
        dataset = _ingest(config)
        report = validate_schema(dataset)

        stage = "fit-teacher/distill/train-decoder"
        gen = _fit_and_save_generator(config, dataset, out)

        stage = "generate"
        noise = hp.get("noise_scale", 0.0)
        clamp_counts: dict = {}
        if noise > 0:
            synth = generate_perturbed(gen.encoder, gen.decoder, dataset, gen.state, noise,
                                       seed=config["seed"])
        else:
            synth = generate(gen.encoder, gen.decoder, dataset, gen.state,
                             clamp_counts=clamp_counts)
        write_dataset(synth, out / "synthetic.csv")

        stage = "reports"
        realism = realism_report(dataset, synth)
        utility, dropped_covariates = _utility_dropping_collinear(
            dataset, synth, config.get("covariates"), hp.get("penalizer", 1e-4)
        )
        median_horizon = float(np.quantile(dataset.durations, 0.5))
        cal = {"real_model_p50": calibration(gen.teacher, dataset, median_horizon,
                                             n_bins=hp.get("n_bins", 10))}
        manifest = {
            "command": "pipeline",
            "dataset": dataset.name,
            "rows": dataset.n_rows,
            "seed": config["seed"],
            "config_hash": _config_hash(config),
            "source_fingerprint": dataset.fingerprint(),
            "synthetic_fingerprint": synth.fingerprint(),
            "dropped_collinear_covariates": dropped_covariates,
            "inverse_transform_clamps": dict(sorted(clamp_counts.items())),
            "schema_report": report.to_dict(),
            "generation": gen.run.to_dict(),
            "hyperparameters": dict(sorted(hp.items())),
            "toolkit_version": __version__,
        }
        emit_report({"manifest": manifest, "realism": realism, "utility": utility,
                     "calibration": cal}, out / "report")
        print(f"pipeline complete: {out / 'synthetic.csv'} ({synth.n_rows} rows), report in {out / 'report'}")
        return EXIT_OK
    except (DataError, FitError, TransformError, RuntimeError, ValueError) as exc:
        print(f"pipeline failed at stage {stage!r}: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "ingest": cmd_ingest,
        "fit-cox": cmd_fit_cox,
        "distill": cmd_distill,
        "train-decoder": cmd_train_decoder,
        "generate": cmd_generate,
        "augment": cmd_augment,
        "realism": cmd_realism,
        "utility": cmd_utility,
        "benchmark": cmd_benchmark,
        "pipeline": cmd_pipeline,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--data", help="input CSV")
        p.add_argument("--schema", help="schema JSON")
        p.add_argument("--out", help=f"output path/directory (default ${OUTPUT_ROOT_ENV})")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--method", help="generator/resampler name")
        p.add_argument("--dataset", help="dataset label override")
        p.add_argument("--synthetic", help="synthetic CSV (realism/utility)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
