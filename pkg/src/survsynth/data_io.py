"""CSV ingestion, schema validation, and chained-equation imputation for survival tables.

A dataset is a plain float64 feature matrix plus Duration/Event vectors. Missing
cells are carried as NaN so nothing is ever silently zero-filled.
"""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

NUMERIC = "numeric"
BINARY = "binary"
MULTI_BINARY = "multi_binary_member"
KINDS = (NUMERIC, BINARY, MULTI_BINARY)

MISSING_TOKENS = {"", "na"}  # compared case-insensitively


class DataError(ValueError):
    """Raised for malformed files, schema mismatches, or invalid cell values."""


@dataclass(frozen=True)
class FeatureSpec:
    """One feature column: its name, kind, and (for multi-binary members) its group."""

    name: str
    kind: str
    group: str | None = None
    baseline_label: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown feature kind {self.kind!r} for column {self.name!r}")
        if self.kind == MULTI_BINARY and not self.group:
            raise DataError(f"multi-binary column {self.name!r} needs a group")


@dataclass(frozen=True)
class DatasetSchema:
    name: str
    features: tuple[FeatureSpec, ...]
    duration_column: str = "Duration"
    event_column: str = "Event"

    def feature_names(self) -> list[str]:
        return [s.name for s in self.features]


def load_schema(path) -> DatasetSchema:
    """Read a schema definition (JSON key-value tree) from disk."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"schema file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"schema file {path} is not valid JSON: {exc}")
    try:
        feats = tuple(
            FeatureSpec(
                name=f["name"],
                kind=f["kind"],
                group=f.get("group"),
                baseline_label=f.get("baseline_label"),
            )
            for f in raw["features"]
        )
        return DatasetSchema(
            name=raw.get("name", ""),
            features=feats,
            duration_column=raw.get("duration_column", "Duration"),
            event_column=raw.get("event_column", "Event"),
        )
    except KeyError as exc:
        raise DataError(f"schema file {path} is missing key {exc}")


def save_schema(schema: DatasetSchema, path) -> None:
    doc = {
        "name": schema.name,
        "duration_column": schema.duration_column,
        "event_column": schema.event_column,
        "features": [
            {
                "name": s.name,
                "kind": s.kind,
                **({"group": s.group} if s.group else {}),
                **({"baseline_label": s.baseline_label} if s.baseline_label else {}),
            }
            for s in schema.features
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


@dataclass
class SurvivalDataset:
    """Feature matrix (rows = patients) plus Duration and Event vectors.

    `features` is float64 with NaN marking missing cells; column order matches
    `specs`. Durations and events are full-length and never missing.
    """

    features: np.ndarray
    specs: list[FeatureSpec]
    durations: np.ndarray
    events: np.ndarray
    name: str = ""
    duration_column: str = "Duration"
    event_column: str = "Event"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        self.durations = np.asarray(self.durations, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.float64)
        n = self.features.shape[0]
        if len(self.durations) != n or len(self.events) != n:
            raise DataError("durations/events length does not match feature row count")
        if self.features.shape[1] != len(self.specs):
            raise DataError("feature column count does not match specs")
        if np.any(~np.isfinite(self.durations)) or np.any(self.durations < 0):
            raise DataError("durations must be finite and non-negative")
        if not np.all(np.isin(self.events, (0.0, 1.0))):
            raise DataError("events must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def feature_names(self) -> list[str]:
        return [s.name for s in self.specs]

    def feature_index(self, name: str) -> int:
        for i, s in enumerate(self.specs):
            if s.name == name:
                return i
        raise DataError(f"no feature named {name!r}")

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_index(name)]

    def groups(self) -> dict[str, list[int]]:
        """Multi-binary group name -> member column indices, in spec order."""
        out: dict[str, list[int]] = {}
        for i, s in enumerate(self.specs):
            if s.kind == MULTI_BINARY:
                out.setdefault(s.group, []).append(i)
        return out

    def schema(self) -> DatasetSchema:
        return DatasetSchema(
            name=self.name,
            features=tuple(self.specs),
            duration_column=self.duration_column,
            event_column=self.event_column,
        )

    def copy(self) -> "SurvivalDataset":
        return SurvivalDataset(
            features=self.features.copy(),
            specs=list(self.specs),
            durations=self.durations.copy(),
            events=self.events.copy(),
            name=self.name,
            duration_column=self.duration_column,
            event_column=self.event_column,
        )

    def subset(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        return SurvivalDataset(
            features=self.features[rows],
            specs=list(self.specs),
            durations=self.durations[rows],
            events=self.events[rows],
            name=self.name,
            duration_column=self.duration_column,
            event_column=self.event_column,
        )

    def fingerprint(self) -> str:
        """Row count + schema + column bytes, as a hex digest."""
        h = hashlib.sha256()
        h.update(str(self.n_rows).encode())
        for s in self.specs:
            h.update(f"{s.name}|{s.kind}|{s.group}".encode())
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.durations).tobytes())
        h.update(np.ascontiguousarray(self.events).tobytes())
        return h.hexdigest()


def concat_datasets(a: SurvivalDataset, b: SurvivalDataset) -> SurvivalDataset:
    if [s.name for s in a.specs] != [s.name for s in b.specs]:
        raise DataError("cannot concatenate datasets with different schemas")
    return SurvivalDataset(
        features=np.vstack([a.features, b.features]),
        specs=list(a.specs),
        durations=np.concatenate([a.durations, b.durations]),
        events=np.concatenate([a.events, b.events]),
        name=a.name,
        duration_column=a.duration_column,
        event_column=a.event_column,
    )


def _parse_cell(text: str, column: str, row: int) -> float:
    stripped = text.strip()
    if stripped.lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(stripped)
    except ValueError:
        raise DataError(f"non-numeric cell {text!r} in column {column!r} (row {row})")


def load_dataset(path, schema: DatasetSchema) -> SurvivalDataset:
    """Ingest a CSV against a schema, reordering columns and flagging missing cells."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no rows")
        header = [h.strip() for h in header]
        col_pos: dict[str, int] = {}
        for name in schema.feature_names() + [schema.duration_column, schema.event_column]:
            if name not in header:
                raise DataError(f"{path}: missing column {name!r}")
            col_pos[name] = header.index(name)
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: no rows")

    n, p = len(rows), len(schema.features)
    features = np.empty((n, p))
    durations = np.empty(n)
    events = np.empty(n)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, spec in enumerate(schema.features):
            features[i, j] = _parse_cell(row[col_pos[spec.name]], spec.name, i + 2)
        d = _parse_cell(row[col_pos[schema.duration_column]], schema.duration_column, i + 2)
        e = _parse_cell(row[col_pos[schema.event_column]], schema.event_column, i + 2)
        if math.isnan(d) or math.isnan(e):
            raise DataError(f"{path}: missing Duration/Event in row {i + 2}")
        if d < 0:
            raise DataError(f"{path}: negative duration {d} in row {i + 2}")
        durations[i] = d
        events[i] = e
    if not np.all(np.isin(events, (0.0, 1.0))):
        bad = sorted(set(events) - {0.0, 1.0})
        raise DataError(f"{path}: event column contains values outside {{0,1}}: {bad}")
    return SurvivalDataset(
        features=features,
        specs=list(schema.features),
        durations=durations,
        events=events,
        name=schema.name,
        duration_column=schema.duration_column,
        event_column=schema.event_column,
    )


def format_cell(x: float) -> str:
    """Deterministic cell text: blank for missing, integer-like without a decimal point."""
    if math.isnan(x):
        return ""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_dataset(dataset: SurvivalDataset, path) -> None:
    """Write a dataset back to CSV; reloads cell-for-cell identical."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset.feature_names + [dataset.event_column, dataset.duration_column])
        for i in range(dataset.n_rows):
            row = [format_cell(v) for v in dataset.features[i]]
            row.append(format_cell(dataset.events[i]))
            row.append(format_cell(dataset.durations[i]))
            writer.writerow(row)


@dataclass
class ColumnCheck:
    missing_count: int
    out_of_range_count: int
    proportion_of_ones: float | None = None  # binary columns only


@dataclass
class SchemaReport:
    dataset_name: str
    row_count: int
    columns: dict[str, ColumnCheck]
    group_violations: dict[str, int]
    negative_duration_count: int
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = (
            all(c.out_of_range_count == 0 for c in self.columns.values())
            and all(v == 0 for v in self.group_violations.values())
            and self.negative_duration_count == 0
        )

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "row_count": self.row_count,
            "pass": self.passed,
            "negative_duration_count": self.negative_duration_count,
            "group_violations": dict(sorted(self.group_violations.items())),
            "columns": {
                name: {
                    "missing_count": c.missing_count,
                    "out_of_range_count": c.out_of_range_count,
                    **(
                        {"proportion_of_ones": c.proportion_of_ones}
                        if c.proportion_of_ones is not None
                        else {}
                    ),
                }
                for name, c in self.columns.items()
            },
        }


def validate_schema(dataset: SurvivalDataset) -> SchemaReport:
    """Check every FeatureSpec invariant; violations are report content, not failures."""
    columns: dict[str, ColumnCheck] = {}
    for j, spec in enumerate(dataset.specs):
        col = dataset.features[:, j]
        missing = int(np.isnan(col).sum())
        observed = col[~np.isnan(col)]
        if spec.kind in (BINARY, MULTI_BINARY):
            out_of_range = int(np.sum(~np.isin(observed, (0.0, 1.0))))
            prop = float(np.mean(observed == 1.0)) if observed.size else None
        else:
            out_of_range = int(np.sum(~np.isfinite(observed)))
            prop = None
        columns[spec.name] = ColumnCheck(missing, out_of_range, prop)

    group_violations: dict[str, int] = {}
    for group, idx in dataset.groups().items():
        member_ones = (dataset.features[:, idx] == 1.0).sum(axis=1)
        group_violations[group] = int(np.sum(member_ones > 1))

    return SchemaReport(
        dataset_name=dataset.name,
        row_count=dataset.n_rows,
        columns=columns,
        group_violations=group_violations,
        negative_duration_count=int(np.sum(dataset.durations < 0)),
    )


def resolve_groups(features: np.ndarray, specs: list[FeatureSpec]) -> None:
    """Force mutual exclusion inside every multi-binary group, in place.

    Rows with more than one member set keep the member with the largest value
    (lowest column index on ties); all-zero rows mean the baseline category.
    """
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(specs):
        if s.kind == MULTI_BINARY:
            groups.setdefault(s.group, []).append(i)
    for idx in groups.values():
        block = features[:, idx]
        ones = (block == 1.0).sum(axis=1)
        for r in np.nonzero(ones > 1)[0]:
            keep = int(np.argmax(block[r]))
            features[r, idx] = 0.0
            features[r, idx[keep]] = 1.0


# ---------------------------------------------------------------------------
# MICE: multiple imputation by chained equations (deterministic single draw)
# ---------------------------------------------------------------------------

_LOGISTIC_RIDGE = 1e-6
_LOGISTIC_MAX_ETA = 30.0


def _linear_predict(pred_obs, y_obs, pred_mis):
    a = np.column_stack([np.ones(len(pred_obs)), pred_obs])
    coef, *_ = np.linalg.lstsq(a, y_obs, rcond=None)
    return np.column_stack([np.ones(len(pred_mis)), pred_mis]) @ coef


def _logistic_predict(pred_obs, y_obs, pred_mis, max_steps=25):
    """Newton-fitted logistic regression probabilities, with a small ridge for stability."""
    a = np.column_stack([np.ones(len(pred_obs)), pred_obs])
    w = np.zeros(a.shape[1])
    for _ in range(max_steps):
        eta = np.clip(a @ w, -_LOGISTIC_MAX_ETA, _LOGISTIC_MAX_ETA)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = a.T @ (y_obs - p) - _LOGISTIC_RIDGE * w
        hess = (a * (p * (1 - p))[:, None]).T @ a + _LOGISTIC_RIDGE * np.eye(a.shape[1])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        w = w + step
        if np.max(np.abs(step)) < 1e-10:
            break
    eta = np.clip(np.column_stack([np.ones(len(pred_mis)), pred_mis]) @ w, -_LOGISTIC_MAX_ETA, _LOGISTIC_MAX_ETA)
    return 1.0 / (1.0 + np.exp(-eta))


def mice_impute(dataset: SurvivalDataset, n_iterations: int = 5, seed: int = 0) -> SurvivalDataset:
    """Impute missing cells by chained equations.

    Each column with missing cells is regressed on all other feature columns
    (linear least squares for numeric targets, Newton logistic for binary ones),
    starting from a mean/mode fill and iterating `n_iterations` times. Observed
    cells are never altered. Deterministic; `seed` is accepted for interface
    stability but the single-imputation configuration draws no randomness.
    """
    del seed
    if n_iterations < 1:
        raise DataError("n_iterations must be >= 1")
    x = dataset.features.copy()
    missing = np.isnan(dataset.features)
    targets = [j for j in range(x.shape[1]) if missing[:, j].any()]
    if not targets:
        return dataset.copy()
    for j in targets:
        if missing[:, j].all():
            raise DataError(f"column {dataset.specs[j].name!r} is entirely missing")

    # mean/mode initial fill
    for j in targets:
        obs = x[~missing[:, j], j]
        if dataset.specs[j].kind == NUMERIC:
            x[missing[:, j], j] = obs.mean()
        else:
            x[missing[:, j], j] = 1.0 if obs.mean() >= 0.5 else 0.0

    for _ in range(n_iterations):
        for j in targets:
            mis = missing[:, j]
            others = [k for k in range(x.shape[1]) if k != j]
            pred_obs = x[~mis][:, others]
            pred_mis = x[mis][:, others]
            y_obs = x[~mis, j]
            if dataset.specs[j].kind == NUMERIC:
                x[mis, j] = _linear_predict(pred_obs, y_obs, pred_mis)
            else:
                prob = _logistic_predict(pred_obs, y_obs, pred_mis)
                x[mis, j] = (prob >= 0.5).astype(np.float64)

    x[~missing] = dataset.features[~missing]

    # imputation must not break multi-binary exclusivity; only imputed cells may move
    for idx in dataset.groups().values():
        block = x[:, idx]
        for r in np.nonzero((block == 1.0).sum(axis=1) > 1)[0]:
            ones = [j for j in idx if x[r, j] == 1.0]
            observed_ones = [j for j in ones if not missing[r, j]]
            keep = observed_ones[0] if observed_ones else ones[int(np.argmax(x[r, ones]))]
            for j in ones:
                if j != keep and missing[r, j]:
                    x[r, j] = 0.0

    return SurvivalDataset(
        features=x,
        specs=list(dataset.specs),
        durations=dataset.durations.copy(),
        events=dataset.events.copy(),
        name=dataset.name,
        duration_column=dataset.duration_column,
        event_column=dataset.event_column,
    )
