"""Forward/inverse feature transforms bridging raw tables and the [0,1] decoder space.

Numeric columns are shifted positive, Box-Cox transformed, and min-max scaled;
binary columns pass through. The fitted state inverts bit-faithfully.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .data_io import MULTI_BINARY, NUMERIC, SurvivalDataset

SHIFT_EPS = 1e-6
LAMBDA_GRID = (-3.0, 3.0, 0.01)
LAMBDA_TOL = 1e-4
MAX_ORDINAL_LEVELS = 25  # numeric columns with this many distinct values or fewer snap to observed levels
RANGE_TOL = 1e-6  # tolerated overshoot outside [0,1] before postprocess errors


class TransformError(ValueError):
    """Raised for untransformable columns or out-of-range decoder outputs."""


def boxcox_transform(x: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0.0:
        return np.log(x)
    return (np.power(x, lam) - 1.0) / lam


def boxcox_inverse(y: np.ndarray, lam: float, clamp_count: list | None = None) -> np.ndarray:
    if lam == 0.0:
        return np.exp(y)
    base = lam * y + 1.0
    bad = base <= 0.0
    if bad.any():
        # only reachable through float roundoff at the domain edge; clamp and count
        if clamp_count is not None:
            clamp_count.append(int(bad.sum()))
        base = np.where(bad, np.finfo(np.float64).tiny, base)
    return np.power(base, 1.0 / lam)


def _boxcox_loglik(x: np.ndarray, log_x_sum: float, lam: float) -> float:
    y = boxcox_transform(x, lam)
    var = y.var()
    if var <= 0.0 or not np.isfinite(var):
        return -np.inf
    return -0.5 * len(x) * math.log(var) + (lam - 1.0) * log_x_sum


def fit_boxcox_lambda(values: np.ndarray) -> float:
    """Maximum-likelihood Box-Cox lambda: grid over [-3, 3] then golden-section refinement."""
    x = np.asarray(values, dtype=np.float64)
    if np.any(~np.isfinite(x)):
        raise TransformError("values must be finite (impute before preprocessing)")
    if np.any(x <= 0.0):
        raise TransformError("non-positive value in Box-Cox input")
    if len(np.unique(x)) < 2:
        raise TransformError("constant input")
    if len(np.unique(x)) < 3:
        raise TransformError("need at least 3 distinct values")

    log_x_sum = float(np.log(x).sum())
    lo, hi, step = LAMBDA_GRID
    grid = np.arange(lo, hi + step / 2, step)
    lls = np.array([_boxcox_loglik(x, log_x_sum, lam) for lam in grid])
    best = int(np.argmax(lls))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]

    # golden-section pass inside the bracketing grid cell
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _boxcox_loglik(x, log_x_sum, c)
    fd = _boxcox_loglik(x, log_x_sum, d)
    while b - a > LAMBDA_TOL:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _boxcox_loglik(x, log_x_sum, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _boxcox_loglik(x, log_x_sum, d)
    return float((a + b) / 2.0)


@dataclass
class NumericTransform:
    """Everything needed to invert one numeric column exactly."""

    lam: float
    shift: float
    post_min: float
    post_range: float
    observed_min: float
    observed_max: float
    levels: tuple[float, ...] | None  # ordinal snap targets, None for continuous columns


@dataclass
class PreprocessState:
    feature_names: list[str]
    kinds: list[str]
    numeric: dict[str, NumericTransform]

    def to_json(self) -> str:
        doc = {
            "format": "preprocess-state",
            "version": 1,
            "feature_names": self.feature_names,
            "kinds": self.kinds,
            "numeric": {
                name: {
                    "lam": t.lam,
                    "shift": t.shift,
                    "post_min": t.post_min,
                    "post_range": t.post_range,
                    "observed_min": t.observed_min,
                    "observed_max": t.observed_max,
                    "levels": list(t.levels) if t.levels is not None else None,
                }
                for name, t in self.numeric.items()
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PreprocessState":
        doc = json.loads(text)
        if doc.get("format") != "preprocess-state":
            raise TransformError("not a preprocess-state file")
        numeric = {
            name: NumericTransform(
                lam=t["lam"],
                shift=t["shift"],
                post_min=t["post_min"],
                post_range=t["post_range"],
                observed_min=t["observed_min"],
                observed_max=t["observed_max"],
                levels=tuple(t["levels"]) if t["levels"] is not None else None,
            )
            for name, t in doc["numeric"].items()
        }
        return cls(doc["feature_names"], doc["kinds"], numeric)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PreprocessState":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fit_numeric_transform(values: np.ndarray) -> NumericTransform:
    x = np.asarray(values, dtype=np.float64)
    shift = max(0.0, SHIFT_EPS - float(x.min()))
    lam = fit_boxcox_lambda(x + shift)
    y = boxcox_transform(x + shift, lam)
    post_min = float(y.min())
    post_range = float(y.max()) - post_min
    if post_range <= 0.0:
        raise TransformError("constant input")
    uniq = np.unique(x)
    levels = tuple(float(v) for v in uniq) if len(uniq) <= MAX_ORDINAL_LEVELS else None
    return NumericTransform(
        lam=lam,
        shift=shift,
        post_min=post_min,
        post_range=post_range,
        observed_min=float(x.min()),
        observed_max=float(x.max()),
        levels=levels,
    )


def preprocess(dataset: SurvivalDataset) -> tuple[np.ndarray, PreprocessState]:
    """Fit transforms on a dataset and return its [0,1] representation plus the state.

    Event and Duration are excluded entirely; they are never part of the decoder
    target space.
    """
    numeric: dict[str, NumericTransform] = {}
    tau = np.empty_like(dataset.features)
    for j, spec in enumerate(dataset.specs):
        col = dataset.features[:, j]
        if np.any(np.isnan(col)):
            raise TransformError(f"column {spec.name!r} has missing cells; impute first")
        if spec.kind == NUMERIC:
            t = fit_numeric_transform(col)
            numeric[spec.name] = t
            y = boxcox_transform(col + t.shift, t.lam)
            tau[:, j] = (y - t.post_min) / t.post_range
        else:
            if not np.all(np.isin(col, (0.0, 1.0))):
                raise TransformError(f"binary column {spec.name!r} has values outside {{0,1}}")
            tau[:, j] = col
    state = PreprocessState(
        feature_names=dataset.feature_names,
        kinds=[s.kind for s in dataset.specs],
        numeric=numeric,
    )
    return tau, state


def apply_preprocess(dataset: SurvivalDataset, state: PreprocessState) -> np.ndarray:
    """Forward transform with an already-fitted state (no refitting)."""
    if state.feature_names != dataset.feature_names:
        raise TransformError("state does not match dataset columns")
    tau = np.empty_like(dataset.features)
    for j, spec in enumerate(dataset.specs):
        col = dataset.features[:, j]
        if spec.kind == NUMERIC:
            t = state.numeric[spec.name]
            y = boxcox_transform(col + t.shift, t.lam)
            tau[:, j] = (y - t.post_min) / t.post_range
        else:
            tau[:, j] = col
    return tau


def _snap_to_levels(values: np.ndarray, levels: tuple[float, ...]) -> np.ndarray:
    lv = np.asarray(levels)
    pos = np.searchsorted(lv, values)
    pos = np.clip(pos, 1, len(lv) - 1)
    left = lv[pos - 1]
    right = lv[pos]
    return np.where(values - left <= right - values, left, right)


def postprocess(
    tau_hat: np.ndarray,
    state: PreprocessState,
    source: SurvivalDataset,
    clamp_counts: dict | None = None,
) -> SurvivalDataset:
    """Map decoder outputs back to the source scale and format.

    Binaries threshold at 0.5 (ties round up) with multi-binary groups resolved
    by argmax; numerics invert the min-max/Box-Cox/shift chain and clip to the
    observed range. Event and Duration are copied verbatim from the source,
    row by row. Pass `clamp_counts` to collect inverse-transform domain clamps.
    """
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_hat.shape[1] != len(state.feature_names):
        raise TransformError("tau column count does not match state")
    if tau_hat.shape[0] != source.n_rows:
        raise TransformError("tau row count does not match source")
    if source.feature_names != state.feature_names:
        raise TransformError("state does not match source columns")
    if np.any(tau_hat < -RANGE_TOL) or np.any(tau_hat > 1.0 + RANGE_TOL):
        worst = float(np.max(np.abs(tau_hat - np.clip(tau_hat, 0.0, 1.0))))
        raise TransformError(f"values outside [0,1] beyond tolerance (worst overshoot {worst:g})")
    tau = np.clip(tau_hat, 0.0, 1.0)

    features = np.empty_like(tau)
    for j, spec in enumerate(source.specs):
        col = tau[:, j]
        if spec.kind == NUMERIC:
            t = state.numeric[spec.name]
            y = col * t.post_range + t.post_min
            clamped: list = []
            x = boxcox_inverse(y, t.lam, clamped) - t.shift
            if clamp_counts is not None and clamped:
                clamp_counts[spec.name] = clamp_counts.get(spec.name, 0) + sum(clamped)
            x = np.clip(x, t.observed_min, t.observed_max)
            if t.levels is not None:
                x = _snap_to_levels(x, t.levels)
            features[:, j] = x
        else:
            features[:, j] = np.where(col >= 0.5, 1.0, 0.0)

    # resolve groups on the thresholded values using raw tau magnitudes as the argmax key
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(source.specs):
        if s.kind == MULTI_BINARY:
            groups.setdefault(s.group, []).append(i)
    for idx in groups.values():
        block = features[:, idx]
        for r in np.nonzero((block == 1.0).sum(axis=1) > 1)[0]:
            keep = int(np.argmax(tau[r, idx]))
            features[r, idx] = 0.0
            features[r, idx[keep]] = 1.0

    return SurvivalDataset(
        features=features,
        specs=list(source.specs),
        durations=source.durations.copy(),
        events=source.events.copy(),
        name=source.name,
        duration_column=source.duration_column,
        event_column=source.event_column,
    )
