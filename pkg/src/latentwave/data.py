"""Survey data ingestion, covariate encoding, weight handling, simulation,
and fold construction.

The expected raw layout is the public behaviour-tracker CSV: one row per
interview with item responses on a five-level frequency scale, a survey
weight, a timestamp, and demographic covariates. Loading is driven by a
column-name schema so other extracts with the same shape can be ingested.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .model import ModelConfig, Parameters

__all__ = [
    "SurveyDataset",
    "FoldAssignment",
    "CsvSchema",
    "SchemaError",
    "DataError",
    "EncodingError",
    "DatasetError",
    "RESPONSE_LEVELS",
    "GENDER_LEVELS",
    "REGION_LEVELS",
    "EMPLOYMENT_LEVELS",
    "DEFAULT_ITEM_COLUMNS",
    "load_csv",
    "encode_covariates",
    "normalize_weights",
    "simulate",
    "split_folds",
    "subset_rows",
    "write_dataset",
    "read_dataset",
    "standard_normal_covariates",
]

# Fixed category-to-integer order for item responses (encoded 1..5).
RESPONSE_LEVELS = ("Not at all", "Rarely", "Sometimes", "Frequently", "Always")

# Reference levels come first; dummies are emitted for the remaining levels.
GENDER_LEVELS = ("Female", "Male")
REGION_LEVELS = ("North-West", "North-East", "Center", "South", "Islands")
EMPLOYMENT_LEVELS = (
    "Full-time employment",
    "Part-time employment",
    "Not working",
    "Student",
    "Retired",
)

# Age enters in 5-year units, centered at the weighted sample mean.
AGE_UNIT_YEARS = 5.0

DEFAULT_ITEM_COLUMNS = {
    "ih1": "i12_health_1",
    "ih2": "i12_health_2",
    "ih3": "i12_health_3",
    "ih4": "i12_health_4",
    "ih5": "i12_health_5",
    "ih6": "i12_health_6",
    "ih7": "i12_health_7",
    "ih8": "i12_health_8",
    "ih11": "i12_health_11",
    "ih12": "i12_health_12",
    "ih13": "i12_health_13",
    "ih14": "i12_health_14",
    "ih15": "i12_health_15",
    "ih16": "i12_health_16",
}


class SchemaError(ValueError):
    """A required column is missing or the schema mapping is malformed."""


class DataError(ValueError):
    """A row holds a value that cannot be interpreted under the schema."""

    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class EncodingError(ValueError):
    """A categorical covariate holds a level outside the known set."""


class DatasetError(ValueError):
    """The assembled dataset violates a structural invariant."""


@dataclass
class SurveyDataset:
    """Encoded survey data for one country extract.

    responses:    (n, p) integer matrix with entries in 1..n_categories
    covariates:   (n, m) design matrix (dummies + scaled age)
    weights:      (n,) strictly positive survey weights
    wave_of_row:  (n,) 1-based wave index per row
    wave_times:   (T,) strictly increasing days since the first wave
    """

    responses: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray
    wave_of_row: np.ndarray
    wave_times: np.ndarray
    item_labels: list[str]
    covariate_labels: list[str]
    n_categories: int = 5
    origin_date: str | None = None
    drop_report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.responses = np.asarray(self.responses, dtype=np.int64)
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.wave_of_row = np.asarray(self.wave_of_row, dtype=np.int64)
        self.wave_times = np.asarray(self.wave_times, dtype=float)

    @property
    def n_rows(self) -> int:
        return self.responses.shape[0]

    @property
    def n_waves(self) -> int:
        return self.wave_times.size

    def rows_in_wave(self, wave: int) -> np.ndarray:
        return np.flatnonzero(self.wave_of_row == wave)

    def wave_sizes(self) -> np.ndarray:
        return np.bincount(self.wave_of_row, minlength=self.n_waves + 1)[1:]

    def validate(self) -> None:
        n = self.n_rows
        if self.responses.ndim != 2:
            raise DatasetError("responses must be a 2-d integer matrix")
        if np.any(self.responses < 1) or np.any(self.responses > self.n_categories):
            raise DatasetError("response entries must lie in 1..n_categories")
        if self.covariates.shape[0] != n or self.weights.shape != (n,):
            raise DatasetError("row counts disagree across blocks")
        if self.wave_of_row.shape != (n,):
            raise DatasetError("wave assignment length mismatch")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise DatasetError("weights must be strictly positive and finite")
        if self.wave_times.size > 1 and not np.all(np.diff(self.wave_times) > 0):
            raise DatasetError("wave_times must be strictly increasing")
        if np.any(self.wave_of_row < 1) or np.any(self.wave_of_row > self.n_waves):
            raise DatasetError("wave indices out of range")
        sizes = self.wave_sizes()
        if np.any(sizes == 0):
            empty = int(np.flatnonzero(sizes == 0)[0]) + 1
            raise DatasetError(f"wave {empty} has no rows")
        if len(self.item_labels) != self.responses.shape[1]:
            raise DatasetError("item label count mismatch")
        if len(self.covariate_labels) != self.covariates.shape[1]:
            raise DatasetError("covariate label count mismatch")


@dataclass
class FoldAssignment:
    """Per-row fold indices in 1..n_folds, balanced within each wave."""

    fold_of_row: np.ndarray
    n_folds: int

    def __post_init__(self):
        self.fold_of_row = np.asarray(self.fold_of_row, dtype=np.int64)

    def rows_in_fold(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row == fold)

    def validate(self, dataset: SurveyDataset) -> None:
        if self.fold_of_row.shape != (dataset.n_rows,):
            raise DatasetError("fold assignment length mismatch")
        if np.any(self.fold_of_row < 1) or np.any(self.fold_of_row > self.n_folds):
            raise DatasetError("fold indices out of range")
        for wave in range(1, dataset.n_waves + 1):
            folds = self.fold_of_row[dataset.rows_in_wave(wave)]
            sizes = np.bincount(folds, minlength=self.n_folds + 1)[1:]
            if sizes.max() - sizes.min() > 1:
                raise DatasetError(f"unbalanced folds within wave {wave}")


@dataclass
class CsvSchema:
    """Column-name mapping that drives :func:`load_csv`.

    `items` maps item labels to CSV columns. `wave`, when given, names a
    column whose values identify survey waves (ordered by first interview
    date); otherwise each distinct calendar date forms a wave.
    `unknown_responses` selects whether an unmappable non-empty response
    string raises ("error") or drops the row ("drop").
    """

    items: dict[str, str]
    weight: str = "weight"
    date: str = "endtime"
    age: str = "age"
    gender: str = "gender"
    region: str = "region"
    employment: str = "employment_status"
    wave: str | None = "qweek"
    date_format: str | None = None
    unknown_responses: str = "error"
    value_maps: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def default_tracker(cls) -> "CsvSchema":
        return cls(items=dict(DEFAULT_ITEM_COLUMNS))

    @classmethod
    def from_dict(cls, payload: dict) -> "CsvSchema":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        if "items" not in payload:
            raise SchemaError("schema must name the item columns under 'items'")
        items = payload["items"]
        if isinstance(items, list):
            items = {f"item{k + 1}": col for k, col in enumerate(items)}
        return cls(**{**payload, "items": dict(items)})


def _resolve_dates(frame: pd.DataFrame, schema: CsvSchema) -> pd.Series:
    raw = frame[schema.date]
    if schema.date_format:
        parsed = pd.to_datetime(raw, format=schema.date_format, errors="coerce")
    else:
        parsed = pd.to_datetime(raw, errors="coerce", format="mixed", dayfirst=False)
    return parsed.dt.normalize()


def load_csv(path: str | Path, schema: CsvSchema | dict) -> SurveyDataset:
    """Read a tracker-style CSV into an encoded, validated dataset.

    Rows missing any analyzed item, covariate, valid date, or a positive
    weight are dropped; drop counts are recorded in ``drop_report``.
    """
    if isinstance(schema, dict):
        schema = CsvSchema.from_dict(schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=True)

    needed = (
        list(schema.items.values())
        + [schema.weight, schema.date, schema.age, schema.gender, schema.region, schema.employment]
        + ([schema.wave] if schema.wave else [])
    )
    for column in needed:
        if column not in frame.columns:
            raise SchemaError(f"missing required column: {column!r}")

    for column, mapping in schema.value_maps.items():
        if column in frame.columns:
            frame[column] = frame[column].replace(mapping)

    report: dict[str, int] = {"total_rows": len(frame)}
    keep = np.ones(len(frame), dtype=bool)

    level_codes = {level: k + 1 for k, level in enumerate(RESPONSE_LEVELS)}
    responses = np.zeros((len(frame), len(schema.items)), dtype=np.int64)
    missing_resp = np.zeros(len(frame), dtype=bool)
    for j, column in enumerate(schema.items.values()):
        values = frame[column].str.strip()
        coded = values.map(level_codes)
        blank = values.isna() | (values == "")
        unmapped = coded.isna() & ~blank
        if unmapped.any():
            if schema.unknown_responses == "error":
                row = int(np.flatnonzero(unmapped.to_numpy())[0])
                raise DataError(
                    f"row {row}: unmappable response {values.iloc[row]!r} "
                    f"in column {column!r}",
                    row_index=row,
                )
            missing_resp |= unmapped.to_numpy()
        missing_resp |= blank.to_numpy()
        responses[:, j] = coded.fillna(0).to_numpy(dtype=np.int64)
    report["missing_response"] = int((missing_resp & keep).sum())
    keep &= ~missing_resp

    weights = pd.to_numeric(frame[schema.weight], errors="coerce").to_numpy(dtype=float)
    bad_weight = ~np.isfinite(weights) | (weights <= 0)
    report["invalid_weight"] = int((bad_weight & keep).sum())
    keep &= ~bad_weight

    dates = _resolve_dates(frame, schema)
    bad_date = dates.isna().to_numpy()
    report["invalid_date"] = int((bad_date & keep).sum())
    keep &= ~bad_date

    age = pd.to_numeric(frame[schema.age], errors="coerce").to_numpy(dtype=float)
    covariate_strings = {
        "gender": frame[schema.gender].str.strip(),
        "region": frame[schema.region].str.strip(),
        "employment": frame[schema.employment].str.strip(),
    }
    missing_cov = ~np.isfinite(age)
    for series in covariate_strings.values():
        missing_cov |= (series.isna() | (series == "")).to_numpy()
    report["missing_covariate"] = int((missing_cov & keep).sum())
    keep &= ~missing_cov

    report["kept_rows"] = int(keep.sum())
    if report["kept_rows"] == 0:
        raise DatasetError("no rows survived validation")

    kept = frame.index[keep]
    dates_kept = dates[keep]
    # A wave present in the raw file must survive with at least one row.
    raw_keys = frame[schema.wave][~bad_date] if schema.wave else dates[~bad_date]
    kept_keys = set(frame.loc[kept, schema.wave]) if schema.wave else set(dates_kept)
    emptied = sorted(set(raw_keys.dropna()) - kept_keys, key=str)
    if emptied:
        raise DatasetError(f"wave {emptied[0]!r} lost all rows during validation")
    if schema.wave:
        wave_ids = frame.loc[kept, schema.wave]
        first_date = dates_kept.groupby(wave_ids).min()
        ordered_waves = first_date.sort_values().index.tolist()
        wave_lookup = {w: k + 1 for k, w in enumerate(ordered_waves)}
        wave_of_row = wave_ids.map(wave_lookup).to_numpy(dtype=np.int64)
        wave_dates = first_date.sort_values().to_numpy()
    else:
        unique_dates = np.sort(dates_kept.unique())
        wave_lookup = {d: k + 1 for k, d in enumerate(unique_dates)}
        wave_of_row = dates_kept.map(wave_lookup).to_numpy(dtype=np.int64)
        wave_dates = unique_dates
    origin = pd.Timestamp(wave_dates[0])
    wave_times = np.array(
        [(pd.Timestamp(d) - origin).days for d in wave_dates], dtype=float
    )
    if wave_times.size > 1 and not np.all(np.diff(wave_times) > 0):
        raise DatasetError("wave dates are not strictly increasing")

    records = {
        "age": age[keep],
        "gender": covariate_strings["gender"][keep].to_numpy(),
        "region": covariate_strings["region"][keep].to_numpy(),
        "employment": covariate_strings["employment"][keep].to_numpy(),
    }
    covariates, covariate_labels = encode_covariates(records, weights=weights[keep])

    dataset = SurveyDataset(
        responses=responses[keep],
        covariates=covariates,
        weights=weights[keep],
        wave_of_row=wave_of_row,
        wave_times=wave_times,
        item_labels=list(schema.items.keys()),
        covariate_labels=covariate_labels,
        n_categories=len(RESPONSE_LEVELS),
        origin_date=str(origin.date()),
        drop_report=report,
    )
    dataset.validate()
    return dataset


def _dummy_code(values: np.ndarray, levels: tuple[str, ...], name: str) -> np.ndarray:
    """One-hot columns for every non-reference level; errors on unseen levels."""
    index = {level: k for k, level in enumerate(levels)}
    out = np.zeros((len(values), len(levels) - 1))
    for i, value in enumerate(values):
        if value not in index:
            raise EncodingError(f"unseen {name} level: {value!r}")
        k = index[value]
        if k > 0:
            out[i, k - 1] = 1.0
    return out


def encode_covariates(
    records, weights: np.ndarray | None = None
) -> tuple[np.ndarray, list[str]]:
    """Build the design matrix from raw covariate records.

    `records` must provide `age` (years), `gender`, `region`, `employment`.
    Age enters in 5-year units centered at the (weighted) sample mean; the
    categorical covariates are dummy coded against the references Female,
    North-West, and Full-time employment.
    """
    age = np.asarray(records["age"], dtype=float)
    if not np.all(np.isfinite(age)):
        raise EncodingError("age contains non-finite values")
    mean_age = float(np.average(age, weights=weights))
    age_col = (age - mean_age) / AGE_UNIT_YEARS

    gender = _dummy_code(np.asarray(records["gender"]), GENDER_LEVELS, "gender")
    region = _dummy_code(np.asarray(records["region"]), REGION_LEVELS, "region")
    employment = _dummy_code(
        np.asarray(records["employment"]), EMPLOYMENT_LEVELS, "employment"
    )

    matrix = np.column_stack([age_col, gender, region, employment])
    labels = (
        ["age_5yr"]
        + [f"gender:{level}" for level in GENDER_LEVELS[1:]]
        + [f"region:{level}" for level in REGION_LEVELS[1:]]
        + [f"employment:{level}" for level in EMPLOYMENT_LEVELS[1:]]
    )
    return matrix, labels


def normalize_weights(dataset: SurveyDataset) -> SurveyDataset:
    """Rescale weights so each wave's weights sum to its row count.

    Keeps the pseudo-likelihood's information content comparable to an
    unweighted likelihood. Idempotent.
    """
    weights = dataset.weights.copy()
    for wave in range(1, dataset.n_waves + 1):
        rows = dataset.rows_in_wave(wave)
        total = weights[rows].sum()
        weights[rows] *= rows.size / total
    return dataclasses.replace(dataset, weights=weights)


def standard_normal_covariates(n_covariates: int):
    """Covariate generator drawing i.i.d. standard normal columns."""

    def generate(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, n_covariates))

    return generate


def simulate(
    params: Parameters,
    config: ModelConfig,
    covariate_generator=None,
    seed: int = 0,
    n_per_wave: int | list[int] = 300,
    origin_date: str | None = None,
) -> tuple[SurveyDataset, np.ndarray]:
    """Draw a synthetic dataset from the generative mechanism.

    Per wave and subject: draw covariates, form the membership probabilities,
    draw the latent profile, then draw each item from its profile's category
    row. Weights are all one. Returns the dataset together with the 1-based
    latent profile labels so recovery tests can score against the truth.
    """
    params.validate(config)
    if covariate_generator is None:
        covariate_generator = standard_normal_covariates(config.n_covariates)
    rng = np.random.default_rng(seed)
    sizes = (
        [int(n_per_wave)] * config.n_waves
        if np.isscalar(n_per_wave)
        else [int(v) for v in n_per_wave]
    )
    if len(sizes) != config.n_waves:
        raise ValueError("n_per_wave must be a scalar or one entry per wave")

    responses = []
    covariates = []
    wave_of_row = []
    latent = []
    for t in range(config.n_waves):
        n = sizes[t]
        x = np.asarray(covariate_generator(rng, n), dtype=float)
        if x.shape != (n, config.n_covariates):
            raise ValueError("covariate generator returned a wrong-shaped matrix")
        pred = params.eta[t][None, :] + x @ params.beta
        pred -= pred.max(axis=1, keepdims=True)
        nu = np.exp(pred)
        nu /= nu.sum(axis=1, keepdims=True)
        z = (rng.random((n, 1)) > np.cumsum(nu, axis=1)).sum(axis=1)
        y = np.empty((n, config.n_items), dtype=np.int64)
        for j in range(config.n_items):
            cdf = np.cumsum(params.psi[z, j, :], axis=1)
            y[:, j] = (rng.random((n, 1)) > cdf).sum(axis=1) + 1
        responses.append(y)
        covariates.append(x)
        wave_of_row.append(np.full(n, t + 1, dtype=np.int64))
        latent.append(z + 1)

    dataset = SurveyDataset(
        responses=np.concatenate(responses),
        covariates=np.concatenate(covariates),
        weights=np.ones(sum(sizes)),
        wave_of_row=np.concatenate(wave_of_row),
        wave_times=np.asarray(config.wave_times, dtype=float),
        item_labels=[f"item{j + 1}" for j in range(config.n_items)],
        covariate_labels=[f"x{k + 1}" for k in range(config.n_covariates)],
        n_categories=config.n_categories,
        origin_date=origin_date,
        drop_report={},
    )
    dataset.validate()
    return dataset, np.concatenate(latent)


def split_folds(dataset: SurveyDataset, n_folds: int, seed: int = 0) -> FoldAssignment:
    """Random fold partition drawn independently within each wave.

    Fold sizes within a wave differ by at most one; deterministic given the
    seed.
    """
    if n_folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    fold_of_row = np.zeros(dataset.n_rows, dtype=np.int64)
    for wave in range(1, dataset.n_waves + 1):
        rows = dataset.rows_in_wave(wave)
        if rows.size < n_folds:
            raise DatasetError(
                f"wave {wave} has {rows.size} rows, fewer than {n_folds} folds"
            )
        perm = rng.permutation(rows)
        for fold, chunk in enumerate(np.array_split(perm, n_folds), start=1):
            fold_of_row[chunk] = fold
    assignment = FoldAssignment(fold_of_row, n_folds)
    assignment.validate(dataset)
    return assignment


def subset_rows(dataset: SurveyDataset, rows: np.ndarray) -> SurveyDataset:
    """Dataset restricted to `rows` (indices or boolean mask); waves keep
    their original indices and times."""
    rows = np.asarray(rows)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    subset = dataclasses.replace(
        dataset,
        responses=dataset.responses[rows],
        covariates=dataset.covariates[rows],
        weights=dataset.weights[rows],
        wave_of_row=dataset.wave_of_row[rows],
        drop_report={},
    )
    subset.validate()
    return subset


def write_dataset(dataset: SurveyDataset, csv_path: str | Path, meta_path: str | Path) -> None:
    """Canonical dump: encoded CSV plus a JSON sidecar with the metadata."""
    frame = pd.DataFrame({"wave": dataset.wave_of_row, "weight": dataset.weights})
    for j, label in enumerate(dataset.item_labels):
        frame[label] = dataset.responses[:, j]
    for k, label in enumerate(dataset.covariate_labels):
        frame[label] = dataset.covariates[:, k]
    frame.to_csv(csv_path, index=False, float_format="%.17g")
    meta = {
        "item_labels": dataset.item_labels,
        "covariate_labels": dataset.covariate_labels,
        "n_categories": dataset.n_categories,
        "wave_times": dataset.wave_times.tolist(),
        "origin_date": dataset.origin_date,
        "drop_report": dataset.drop_report,
        "wave_sizes": dataset.wave_sizes().tolist(),
    }
    Path(meta_path).write_text(json.dumps(meta, indent=2))


def read_dataset(csv_path: str | Path, meta_path: str | Path) -> SurveyDataset:
    """Load a canonical dump written by :func:`write_dataset`."""
    meta = json.loads(Path(meta_path).read_text())
    frame = pd.read_csv(csv_path, float_precision="round_trip")
    for column in ["wave", "weight"] + meta["item_labels"] + meta["covariate_labels"]:
        if column not in frame.columns:
            raise SchemaError(f"canonical dump missing column {column!r}")
    dataset = SurveyDataset(
        responses=frame[meta["item_labels"]].to_numpy(dtype=np.int64),
        covariates=frame[meta["covariate_labels"]].to_numpy(dtype=float),
        weights=frame["weight"].to_numpy(dtype=float),
        wave_of_row=frame["wave"].to_numpy(dtype=np.int64),
        wave_times=np.asarray(meta["wave_times"], dtype=float),
        item_labels=list(meta["item_labels"]),
        covariate_labels=list(meta["covariate_labels"]),
        n_categories=int(meta["n_categories"]),
        origin_date=meta.get("origin_date"),
        drop_report=meta.get("drop_report", {}),
    )
    dataset.validate()
    return dataset
