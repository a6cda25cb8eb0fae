"""Three-tier validation: realism reports, 5x2 cross-validated augmentation, utility checks.

The 5x2 harness stratifies half-splits on Event, augments the training half
only, and scores discrimination (Harrell's C) plus calibration at the 25th/50th/
75th duration percentiles on the untouched test half. Per-cell seeds are
derived so every method sees identical folds.
"""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    ResamplePlan,
    adasyn_augment,
    bootstrap_ensemble_scores,
    ncr_clean,
    random_undersample,
    smote_augment,
    tomek_links,
    train_vae,
    train_wgan,
    vae_generate,
    wgan_generate,
)
from .ck4gen import fit_generator, generate, generate_perturbed
from .data_io import NUMERIC, SurvivalDataset, concat_datasets
from .survival_core import (
    CalibrationError,
    CalibrationResult,
    FitError,
    HRTable,
    KMCurve,
    calibration,
    concordance_index,
    fit_coxph,
    hazard_ratio_table,
    kaplan_meier,
    log_partial_hazard,
)

HORIZON_LABELS = ("p25", "p50", "p75")
METHOD_NAMES = (
    "none",
    "smote",
    "adasyn",
    "random_under",
    "tomek",
    "ncr",
    "ensemble",
    "vae",
    "wgan",
    "ck4gen",
    "ck4gen_perturbed",
)


def cell_seed(seed: int, fold: int, swap: int, method: str) -> int:
    """seed XOR a stable hash of (fold, swap, method); identical folds across methods."""
    digest = hashlib.sha256(f"{fold}|{swap}|{method}".encode()).digest()
    return (seed ^ int.from_bytes(digest[:8], "big")) % (2**63)


def stratified_halves(dataset: SurvivalDataset, seed: int, fold: int):
    """Event-stratified half split; returns (half_a_rows, half_b_rows) sorted."""
    rng = np.random.default_rng((seed, fold))
    halves = ([], [])
    for label in (1.0, 0.0):
        idx = np.nonzero(dataset.events == label)[0]
        rng.shuffle(idx)
        halves[0].append(idx[0::2])
        halves[1].append(idx[1::2])
    a = np.sort(np.concatenate(halves[0]))
    b = np.sort(np.concatenate(halves[1]))
    return a, b


def _augment_ck4gen(train: SurvivalDataset, seed: int, options: dict) -> SurvivalDataset:
    gen = fit_generator(
        train,
        penalizer=options.get("penalizer", 1e-4),
        num_mixtures=options.get("num_mixtures", 5),
        encoder_epochs=options.get("encoder_epochs", 10_000),
        decoder_epochs=options.get("decoder_epochs", 20_000),
        lr=options.get("lr", 0.001),
        seed=seed,
    )
    return concat_datasets(train, generate(gen.encoder, gen.decoder, train, gen.state))


def _augment_ck4gen_perturbed(train: SurvivalDataset, seed: int, options: dict) -> SurvivalDataset:
    gen = fit_generator(
        train,
        penalizer=options.get("penalizer", 1e-4),
        num_mixtures=options.get("num_mixtures", 5),
        encoder_epochs=options.get("encoder_epochs", 10_000),
        decoder_epochs=options.get("decoder_epochs", 20_000),
        lr=options.get("lr", 0.001),
        seed=seed,
    )
    synth = generate_perturbed(
        gen.encoder, gen.decoder, train, gen.state,
        noise_scale=options.get("noise_scale", 0.1), seed=seed,
    )
    return concat_datasets(train, synth)


def _augment_vae(train: SurvivalDataset, seed: int, options: dict) -> SurvivalDataset:
    model, _ = train_vae(
        train,
        epochs=options.get("vae_epochs", 1000),
        batch=options.get("batch", 32),
        lr=options.get("lr", 0.001),
        seed=seed,
    )
    return concat_datasets(train, vae_generate(model, train.n_rows, model.codec.state, seed=seed))


def _augment_wgan(train: SurvivalDataset, seed: int, options: dict) -> SurvivalDataset:
    model, _ = train_wgan(
        train,
        epochs=options.get("wgan_epochs", 500),
        n_critic=options.get("n_critic", 5),
        clip=options.get("clip", 0.01),
        lr=options.get("wgan_lr", 1e-4),
        batch=options.get("batch", 32),
        seed=seed,
    )
    return concat_datasets(train, wgan_generate(model, train.n_rows, model.codec.state, seed=seed))


def _resample_plan(seed: int, options: dict) -> ResamplePlan:
    return ResamplePlan(
        k_neighbors=options.get("k_neighbors", 5),
        target_ratio=options.get("target_ratio", 1.0),
        seed=seed,
    )


AUGMENTERS = {
    "none": lambda train, seed, options: train,
    "smote": lambda train, seed, options: smote_augment(train, _resample_plan(seed, options)),
    "adasyn": lambda train, seed, options: adasyn_augment(train, _resample_plan(seed, options)),
    "random_under": lambda train, seed, options: random_undersample(train, _resample_plan(seed, options)),
    "tomek": lambda train, seed, options: tomek_links(train)[1],
    "ncr": lambda train, seed, options: ncr_clean(train, options.get("ncr_k", 3)),
    "vae": _augment_vae,
    "wgan": _augment_wgan,
    "ck4gen": _augment_ck4gen,
    "ck4gen_perturbed": _augment_ck4gen_perturbed,
}


@dataclass
class CvCell:
    fold: int
    swap: int
    c_index: float | None
    calibration: dict  # label -> CalibrationResult | None
    failed: bool = False
    error: str = ""


@dataclass
class CvResult:
    method: str
    seed: int
    horizons: dict
    cells: list = field(default_factory=list)

    @property
    def completed_cells(self) -> list:
        return [c for c in self.cells if not c.failed]

    @property
    def failure_count(self) -> int:
        return sum(1 for c in self.cells if c.failed)

    def c_index_mean(self) -> float:
        return float(np.mean([c.c_index for c in self.completed_cells]))

    def c_index_std(self) -> float:
        values = [c.c_index for c in self.completed_cells]
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    def calibration_summary(self) -> dict:
        out = {}
        for label in HORIZON_LABELS:
            slopes = [
                c.calibration[label].slope
                for c in self.completed_cells
                if c.calibration.get(label) is not None
            ]
            if slopes:
                mean_slope = float(np.mean(slopes))
                out[label] = {
                    "slope_mean": mean_slope,
                    "slope_std": float(np.std(slopes, ddof=1)) if len(slopes) > 1 else 0.0,
                    "d_delta1": abs(mean_slope - 1.0),
                    "n_cells": len(slopes),
                }
            else:
                out[label] = {"slope_mean": None, "slope_std": None, "d_delta1": None, "n_cells": 0}
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "horizons": self.horizons,
            "c_index_mean": self.c_index_mean() if self.completed_cells else None,
            "c_index_std": self.c_index_std() if self.completed_cells else None,
            "failure_count": self.failure_count,
            "calibration": self.calibration_summary(),
            "cells": [
                {
                    "fold": c.fold,
                    "swap": c.swap,
                    "c_index": c.c_index,
                    "failed": c.failed,
                    "error": c.error,
                    "calibration": {
                        label: (r.to_dict() if r is not None else None)
                        for label, r in c.calibration.items()
                    },
                }
                for c in self.cells
            ],
        }


def five_by_two_cv(
    dataset: SurvivalDataset,
    augmenter: str | None = None,
    penalizer: float = 1e-4,
    seed: int = 0,
    n_bins: int = 10,
    options: dict | None = None,
) -> CvResult:
    """5 folds x 2 role swaps; augmented rows touch training halves only."""
    method = augmenter or "none"
    if method not in METHOD_NAMES:
        raise ValueError(f"unknown method {method!r}; expected one of {METHOD_NAMES}")
    if dataset.n_rows < 50:
        raise ValueError("need at least 50 rows for 5x2 cross-validation")
    if dataset.events.sum() < 10:
        raise ValueError("need at least 10 events for 5x2 cross-validation")
    options = dict(options or {})
    horizons = {
        label: float(np.quantile(dataset.durations, q))
        for label, q in zip(HORIZON_LABELS, (0.25, 0.50, 0.75))
    }

    cells = []
    for fold in range(5):
        half_a, half_b = stratified_halves(dataset, seed, fold)
        for swap, (train_rows, test_rows) in enumerate(((half_a, half_b), (half_b, half_a))):
            train = dataset.subset(train_rows)
            test = dataset.subset(test_rows)
            test_print = test.fingerprint()
            this_seed = cell_seed(seed, fold, swap, method)
            cal: dict = {label: None for label in HORIZON_LABELS}
            try:
                if method == "ensemble":
                    scores = bootstrap_ensemble_scores(
                        train,
                        test.features,
                        n_estimators=options.get("n_estimators", 10),
                        penalizer=penalizer,
                        seed=this_seed,
                    )
                    model = None
                else:
                    augmented = AUGMENTERS[method](train, this_seed, options)
                    if test.fingerprint() != test_print:
                        raise RuntimeError("augmenter touched the test half")
                    model = fit_coxph(augmented, penalizer=penalizer)
                    scores = log_partial_hazard(model, test.features)
                c_index = concordance_index(test.durations, test.events, scores)
                if model is not None:
                    for label in HORIZON_LABELS:
                        try:
                            cal[label] = calibration(model, test, horizons[label], n_bins=n_bins)
                        except CalibrationError:
                            cal[label] = None
                cells.append(CvCell(fold, swap, float(c_index), cal))
            except (FitError, ValueError, RuntimeError) as exc:
                cells.append(CvCell(fold, swap, None, cal, failed=True, error=str(exc)))
    return CvResult(method=method, seed=seed, horizons=horizons, cells=cells)


def cv_cells_to_csv(result: CvResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["method", "seed", "fold", "swap", "c_index", "failed", "error"]
            + [f"slope_{label}" for label in HORIZON_LABELS]
        )
        for c in result.cells:
            writer.writerow(
                [result.method, result.seed, c.fold, c.swap,
                 "" if c.c_index is None else repr(c.c_index), int(c.failed), c.error]
                + [
                    "" if c.calibration.get(label) is None else repr(c.calibration[label].slope)
                    for label in HORIZON_LABELS
                ]
            )


def cv_cells_from_csv(path) -> CvResult:
    """Parse a cells.csv back into a CvResult (losslessly for the numeric content)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    col = {name: i for i, name in enumerate(header)}
    cells = []
    method, seed = "none", 0
    for r in body:
        method = r[col["method"]]
        seed = int(r[col["seed"]])
        cal = {}
        for label in HORIZON_LABELS:
            text = r[col[f"slope_{label}"]]
            if text == "":
                cal[label] = None
            else:
                slope = float(text)
                cal[label] = CalibrationResult(slope, abs(slope - 1.0), [], 0.0)
        c_text = r[col["c_index"]]
        cells.append(
            CvCell(
                fold=int(r[col["fold"]]),
                swap=int(r[col["swap"]]),
                c_index=None if c_text == "" else float(c_text),
                calibration=cal,
                failed=bool(int(r[col["failed"]])),
                error=r[col["error"]],
            )
        )
    return CvResult(method=method, seed=seed, horizons={}, cells=cells)


# ---------------------------------------------------------------------------
# realism
# ---------------------------------------------------------------------------

HIST_BINS = 20


@dataclass
class RealismReport:
    numeric: dict
    binary: dict
    corr_labels: list
    corr_real: np.ndarray
    corr_synth: np.ndarray
    max_abs_corr_diff: float

    def to_dict(self) -> dict:
        return {
            "numeric": self.numeric,
            "binary": self.binary,
            "corr_labels": self.corr_labels,
            "corr_real": self.corr_real.tolist(),
            "corr_synth": self.corr_synth.tolist(),
            "max_abs_corr_diff": self.max_abs_corr_diff,
        }


def _moments(values: np.ndarray) -> dict:
    return {
        "mean": float(values.mean()),
        "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        "q1": float(np.quantile(values, 0.25)),
        "median": float(np.quantile(values, 0.50)),
        "q3": float(np.quantile(values, 0.75)),
    }


def _correlation_matrix(columns: np.ndarray) -> np.ndarray:
    """Pearson correlations with constant columns reported as zero correlation."""
    sd = columns.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    z = (columns - columns.mean(axis=0)) / safe
    corr = z.T @ z / columns.shape[0]
    constant = sd == 0
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def realism_report(real: SurvivalDataset, synth: SurvivalDataset) -> RealismReport:
    """Moments, shared-bin histograms, proportions, and correlation drift."""
    if [s.name for s in real.specs] != [s.name for s in synth.specs] or [
        s.kind for s in real.specs
    ] != [s.kind for s in synth.specs]:
        raise ValueError("realism comparison requires identical schemas")
    numeric = {}
    binary = {}
    for j, spec in enumerate(real.specs):
        rv = real.features[:, j]
        sv = synth.features[:, j]
        if spec.kind == NUMERIC:
            lo = min(rv.min(), sv.min())
            hi = max(rv.max(), sv.max())
            edges = np.linspace(lo, hi, HIST_BINS + 1) if hi > lo else np.linspace(lo, lo + 1, HIST_BINS + 1)
            numeric[spec.name] = {
                "real": _moments(rv),
                "synth": _moments(sv),
                "hist_edges": edges.tolist(),
                "real_counts": np.histogram(rv, bins=edges)[0].tolist(),
                "synth_counts": np.histogram(sv, bins=edges)[0].tolist(),
            }
        else:
            binary[spec.name] = {"real": float(rv.mean()), "synth": float(sv.mean())}
    labels = real.feature_names + [real.duration_column]
    corr_real = _correlation_matrix(np.column_stack([real.features, real.durations]))
    corr_synth = _correlation_matrix(np.column_stack([synth.features, synth.durations]))
    iu = np.triu_indices(len(labels), 1)
    max_diff = float(np.max(np.abs(corr_real[iu] - corr_synth[iu]))) if len(labels) > 1 else 0.0
    return RealismReport(
        numeric=numeric,
        binary=binary,
        corr_labels=labels,
        corr_real=corr_real,
        corr_synth=corr_synth,
        max_abs_corr_diff=max_diff,
    )


# ---------------------------------------------------------------------------
# utility
# ---------------------------------------------------------------------------


@dataclass
class UtilityReport:
    real_km: KMCurve
    synth_km: KMCurve
    real_hr: HRTable
    synth_hr: HRTable
    covariates: list
    point_in_ci: dict
    contains_one_agrees: dict
    km_gap: float

    @property
    def n_point_in_ci(self) -> int:
        return sum(self.point_in_ci.values())

    def to_dict(self) -> dict:
        return {
            "covariates": self.covariates,
            "real_km": self.real_km.to_dict(),
            "synth_km": self.synth_km.to_dict(),
            "real_hr": self.real_hr.to_dict(),
            "synth_hr": self.synth_hr.to_dict(),
            "point_in_ci": self.point_in_ci,
            "contains_one_agrees": self.contains_one_agrees,
            "n_point_in_ci": self.n_point_in_ci,
            "km_gap": self.km_gap,
        }


def km_max_gap(a: KMCurve, b: KMCurve) -> float:
    """Sup over the union time grid of |S_a(t) - S_b(t)| under step interpolation."""
    if len(a.times) == 0 or len(b.times) == 0:
        raise ValueError("both curves must be non-empty")
    grid = np.union1d(a.times, b.times)
    return float(np.max(np.abs(a.survival_at(grid) - b.survival_at(grid))))


def utility_report(
    real: SurvivalDataset,
    synth: SurvivalDataset,
    covariates: list | None = None,
    penalizer: float = 1e-4,
) -> UtilityReport:
    """KM curves plus identically specified CoxPH fits on real and synthetic data."""
    if [s.name for s in real.specs] != [s.name for s in synth.specs]:
        raise ValueError("utility comparison requires identical schemas")
    names = covariates if covariates is not None else real.feature_names
    idx = [real.feature_index(n) for n in names]

    def restricted(ds: SurvivalDataset) -> SurvivalDataset:
        return SurvivalDataset(
            features=ds.features[:, idx],
            specs=[ds.specs[i] for i in idx],
            durations=ds.durations,
            events=ds.events,
            name=ds.name,
        )

    real_model = fit_coxph(restricted(real), penalizer=penalizer)
    synth_model = fit_coxph(restricted(synth), penalizer=penalizer)
    real_hr = hazard_ratio_table(real_model)
    synth_hr = hazard_ratio_table(synth_model)
    point_in_ci = {}
    agrees = {}
    for entry_real, entry_synth in zip(real_hr.entries, synth_hr.entries):
        point_in_ci[entry_real.name] = bool(
            entry_real.ci_low <= entry_synth.hr <= entry_real.ci_high
        )
        agrees[entry_real.name] = entry_real.contains_one == entry_synth.contains_one
    real_km = kaplan_meier(real.durations, real.events)
    synth_km = kaplan_meier(synth.durations, synth.events)
    return UtilityReport(
        real_km=real_km,
        synth_km=synth_km,
        real_hr=real_hr,
        synth_hr=synth_hr,
        covariates=list(names),
        point_in_ci=point_in_ci,
        contains_one_agrees=agrees,
        km_gap=km_max_gap(real_km, synth_km),
    )


# ---------------------------------------------------------------------------
# report emission (CSV + JSON + static SVG)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H, _SVG_PAD = 640, 420, 50


def _svg_document(body: list) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">\n<rect width="100%" height="100%" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _scale(v, lo, hi, out_lo, out_hi):
    if hi <= lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)


def _km_step_points(curve: KMCurve, t_max: float):
    pts = [(0.0, 1.0)]
    s_prev = 1.0
    for t, s in zip(curve.times, curve.survival):
        pts.append((t, s_prev))
        pts.append((t, s))
        s_prev = s
    pts.append((t_max, s_prev))
    return pts


def km_svg(curves: list) -> str:
    """curves: list of (label, KMCurve, colour)."""
    t_max = max(float(c.times.max()) for _, c, _ in curves)
    body = [
        f'<line x1="{_SVG_PAD}" y1="{_SVG_H - _SVG_PAD}" x2="{_SVG_W - 10}" y2="{_SVG_H - _SVG_PAD}" stroke="black"/>',
        f'<line x1="{_SVG_PAD}" y1="{_SVG_H - _SVG_PAD}" x2="{_SVG_PAD}" y2="10" stroke="black"/>',
        f'<text x="{_SVG_W // 2}" y="{_SVG_H - 12}" font-size="12">time</text>',
        f'<text x="8" y="{_SVG_H // 2}" font-size="12" transform="rotate(-90 8,{_SVG_H // 2})">survival</text>',
    ]
    for i, (label, curve, colour) in enumerate(curves):
        pts = _km_step_points(curve, t_max)
        path = " ".join(
            f"{_scale(t, 0, t_max, _SVG_PAD, _SVG_W - 10):.2f},"
            f"{_scale(s, 0, 1, _SVG_H - _SVG_PAD, 10):.2f}"
            for t, s in pts
        )
        body.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        body.append(f'<text x="{_SVG_W - 150}" y="{20 + 16 * i}" font-size="12" fill="{colour}">{label}</text>')
    return _svg_document(body)


def hr_forest_svg(real_hr: HRTable, synth_hr: HRTable) -> str:
    names = [e.name for e in real_hr.entries]
    values = [math.log(v) for table in (real_hr, synth_hr) for e in table.entries for v in (e.ci_low, e.ci_high) if v > 0]
    lo, hi = min(values + [-0.1]), max(values + [0.1])
    row_h = (_SVG_H - 2 * _SVG_PAD) / max(len(names), 1)
    x_one = _scale(0.0, lo, hi, 180, _SVG_W - 20)
    body = [f'<line x1="{x_one:.2f}" y1="{_SVG_PAD}" x2="{x_one:.2f}" y2="{_SVG_H - _SVG_PAD}" stroke="grey" stroke-dasharray="4"/>']
    for i, name in enumerate(names):
        y = _SVG_PAD + row_h * (i + 0.5)
        body.append(f'<text x="6" y="{y + 4:.2f}" font-size="10">{name}</text>')
        for table, colour, offset in ((real_hr, "black", -4.0), (synth_hr, "purple", 4.0)):
            e = table.entries[i]
            x0 = _scale(math.log(e.ci_low), lo, hi, 180, _SVG_W - 20)
            x1 = _scale(math.log(e.ci_high), lo, hi, 180, _SVG_W - 20)
            xm = _scale(math.log(e.hr), lo, hi, 180, _SVG_W - 20)
            body.append(f'<line x1="{x0:.2f}" y1="{y + offset:.2f}" x2="{x1:.2f}" y2="{y + offset:.2f}" stroke="{colour}"/>')
            body.append(f'<circle cx="{xm:.2f}" cy="{y + offset:.2f}" r="3" fill="{colour}"/>')
    body.append(f'<text x="{_SVG_W - 170}" y="16" font-size="12">real (black) vs synthetic (purple)</text>')
    return _svg_document(body)


def calibration_svg(results: dict) -> str:
    """results: label -> CalibrationResult; scatter with the 45-degree diagonal."""
    body = [
        f'<line x1="{_SVG_PAD}" y1="{_SVG_H - _SVG_PAD}" x2="{_SVG_W - 10}" y2="10" stroke="grey" stroke-dasharray="4"/>',
        f'<line x1="{_SVG_PAD}" y1="{_SVG_H - _SVG_PAD}" x2="{_SVG_W - 10}" y2="{_SVG_H - _SVG_PAD}" stroke="black"/>',
        f'<line x1="{_SVG_PAD}" y1="{_SVG_H - _SVG_PAD}" x2="{_SVG_PAD}" y2="10" stroke="black"/>',
        f'<text x="{_SVG_W // 2}" y="{_SVG_H - 12}" font-size="12">predicted risk</text>',
        f'<text x="8" y="{_SVG_H // 2}" font-size="12" transform="rotate(-90 8,{_SVG_H // 2})">observed risk</text>',
    ]
    colours = ("crimson", "steelblue", "darkgreen", "orange", "purple")
    for i, (label, result) in enumerate(sorted(results.items())):
        colour = colours[i % len(colours)]
        for p, o in result.points:
            cx = _scale(p, 0, 1, _SVG_PAD, _SVG_W - 10)
            cy = _scale(o, 0, 1, _SVG_H - _SVG_PAD, 10)
            body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{colour}" fill-opacity="0.8"/>')
        body.append(
            f'<text x="{_SVG_W - 200}" y="{20 + 16 * i}" font-size="12" fill="{colour}">'
            f"{label} (slope {result.slope:.3f})</text>"
        )
    return _svg_document(body)


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _km_points_csv(curve: KMCurve) -> str:
    lines = ["time,survival,at_risk,events"]
    for t, s, n, d in zip(curve.times, curve.survival, curve.at_risk, curve.events_at):
        lines.append(f"{repr(float(t))},{repr(float(s))},{int(n)},{int(d)}")
    return "\n".join(lines) + "\n"


def emit_report(tree: dict, out_dir) -> list:
    """Write a report tree to disk; returns the relative paths written.

    Recognized keys: manifest (dict), realism (RealismReport), utility
    (UtilityReport), calibration (dict label -> CalibrationResult), cv (dict
    method -> CvResult). Output is byte-deterministic for identical trees.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list = []

    def write(rel: str, text: str) -> None:
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        files.append(rel)

    summary: dict = {}
    if "manifest" in tree:
        summary["manifest"] = tree["manifest"]
        write("manifest.json", _json_text(tree["manifest"]))

    realism = tree.get("realism")
    if realism is not None:
        summary["realism"] = realism.to_dict()
        moments = ["feature,side,mean,std,q1,median,q3"]
        for name, doc in sorted(realism.numeric.items()):
            for side in ("real", "synth"):
                m = doc[side]
                moments.append(
                    f"{name},{side},{m['mean']!r},{m['std']!r},{m['q1']!r},{m['median']!r},{m['q3']!r}"
                )
        write("realism/moments.csv", "\n".join(moments) + "\n")
        props = ["feature,real_proportion,synth_proportion"]
        for name, doc in sorted(realism.binary.items()):
            props.append(f"{name},{doc['real']!r},{doc['synth']!r}")
        write("realism/proportions.csv", "\n".join(props) + "\n")
        hist = ["feature,bin_low,bin_high,real_count,synth_count"]
        for name, doc in sorted(realism.numeric.items()):
            edges = doc["hist_edges"]
            for k in range(len(edges) - 1):
                hist.append(
                    f"{name},{edges[k]!r},{edges[k + 1]!r},{doc['real_counts'][k]},{doc['synth_counts'][k]}"
                )
        write("realism/histogram_bins.csv", "\n".join(hist) + "\n")
        for side, matrix in (("real", realism.corr_real), ("synth", realism.corr_synth)):
            lines = ["," + ",".join(realism.corr_labels)]
            for label, row in zip(realism.corr_labels, matrix):
                lines.append(label + "," + ",".join(repr(float(v)) for v in row))
            write(f"realism/correlation_{side}.csv", "\n".join(lines) + "\n")

    utility = tree.get("utility")
    if utility is not None:
        summary["utility"] = utility.to_dict()
        write("utility/km_real.csv", _km_points_csv(utility.real_km))
        write("utility/km_synth.csv", _km_points_csv(utility.synth_km))
        forest = ["covariate,side,hr,ci_low,ci_high,contains_one"]
        for side, table in (("real", utility.real_hr), ("synth", utility.synth_hr)):
            for e in table.entries:
                forest.append(f"{e.name},{side},{e.hr!r},{e.ci_low!r},{e.ci_high!r},{int(e.contains_one)}")
        write("utility/hr_forest.csv", "\n".join(forest) + "\n")
        write(
            "utility/km.svg",
            km_svg([("real", utility.real_km, "black"), ("synthetic", utility.synth_km, "purple")]),
        )
        write("utility/hr_forest.svg", hr_forest_svg(utility.real_hr, utility.synth_hr))

    cal = tree.get("calibration")
    if cal:
        summary["calibration"] = {label: r.to_dict() for label, r in sorted(cal.items())}
        points = ["label,time_horizon,mean_predicted,observed"]
        for label, r in sorted(cal.items()):
            for p, o in r.points:
                points.append(f"{label},{r.time_horizon!r},{p!r},{o!r}")
        write("calibration/points.csv", "\n".join(points) + "\n")
        write("calibration/calibration.svg", calibration_svg(cal))

    cv = tree.get("cv")
    if cv:
        summary["cv"] = {method: result.to_dict() for method, result in sorted(cv.items())}
        for method, result in sorted(cv.items()):
            rel = f"cv/{method}/cells.csv"
            path = out / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            cv_cells_to_csv(result, path)
            files.append(rel)

    if summary:
        write("summary.json", _json_text(summary))
    index = {"files": sorted(files + ["index.json"])}
    write("index.json", _json_text(index))
    return sorted(files)
